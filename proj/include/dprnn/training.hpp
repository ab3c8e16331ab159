// Copyright (c) 2026 the dprnn authors
// Licensed under the Apache License 2.0.

/**
 * Hardest-negative triplet training with pair early-selection and the
 * three-stage freezing schedule.
 *
 * Per batch: every image and text is encoded once without a tape to
 * produce the cheap early matching scores; each text keeps its
 * corresponding image plus its top-d other images; only those s*(d+1)
 * pairs get the full recurrent scoring, each on its own tape. The batch
 * loss is piecewise-linear in the pair scores, so backward runs once per
 * participating pair with the hand-computed coefficient as the seed.
 */

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "dprnn/config.hpp"
#include "dprnn/log.hpp"
#include "dprnn/model.hpp"

namespace dprnn {

// ---------------------------------------------------------------------------
// Early selection
// ---------------------------------------------------------------------------

/// Per text: the batch-local image indices to score fully, ascending,
/// always including the corresponding image.
struct Selection {
  std::size_t batch = 0;
  std::size_t width = 0;  // effective d
  std::vector<std::vector<std::size_t>> images_per_text;

  std::size_t scored_pairs() const { return batch * (width + 1); }
};

/// Early matching scores for a batch, text-major: scores[t][b] is the
/// early score of image b against text t.
inline std::vector<std::vector<double>> early_score_matrix(
    const ModelParams& params, const std::vector<ImageInstance>& images,
    const std::vector<TextInstance>& texts) {
  const std::size_t s = images.size();
  std::vector<Tensor> objects(s), words(s), weights(s);
  for (std::size_t b = 0; b < s; ++b)
    objects[b] = encode_image(nullptr, images[b], params.image_encoder);
  for (std::size_t t = 0; t < s; ++t) {
    words[t] = encode_text(nullptr, texts[t], params.text_encoder);
    weights[t] = self_attention_weights(nullptr, words[t],
                                        params.matching.word_attention,
                                        params.matching.beta_w);
  }
  std::vector<std::vector<double>> scores(s, std::vector<double>(s, 0.0));
  for (std::size_t t = 0; t < s; ++t)
    for (std::size_t b = 0; b < s; ++b)
      scores[t][b] = early_score(objects[b], words[t], weights[t]);
  return scores;
}

/// Keep, per text, its corresponding image plus the top-d non-matching
/// images by early score; ties go to the smaller image index. A width of
/// s-1 or more keeps everything (clamped with a warning).
inline Selection select_pairs(const std::vector<std::vector<double>>& early,
                              std::size_t d) {
  const std::size_t s = early.size();
  Selection sel;
  sel.batch = s;
  sel.width = d;
  if (s >= 1 && d > s - 1) {
    log_warn("select_pairs: d=" + std::to_string(d) + " clamped to " +
             std::to_string(s - 1));
    sel.width = s - 1;
  }
  sel.images_per_text.resize(s);
  for (std::size_t t = 0; t < s; ++t) {
    std::vector<std::size_t> others;
    others.reserve(s - 1);
    for (std::size_t b = 0; b < s; ++b)
      if (b != t) others.push_back(b);
    std::stable_sort(others.begin(), others.end(),
                     [&](std::size_t a, std::size_t b) {
                       if (early[t][a] != early[t][b])
                         return early[t][a] > early[t][b];
                       return a < b;
                     });
    others.resize(sel.width);
    others.push_back(t);
    std::sort(others.begin(), others.end());
    sel.images_per_text[t] = std::move(others);
  }
  return sel;
}

// ---------------------------------------------------------------------------
// Full scoring of the selected pairs
// ---------------------------------------------------------------------------

constexpr double kUnscored = std::numeric_limits<double>::quiet_NaN();

/// Scores and live tapes for one batch. sim[t][b] is NaN for pairs the
/// selection skipped.
struct ScoredBatch {
  std::vector<std::vector<double>> sim;
  std::vector<std::pair<std::size_t, std::size_t>> order;  // (text, image)
  std::vector<std::unique_ptr<Tape>> tapes;
  std::vector<Tensor> finals;
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> index;
};

inline ScoredBatch score_selection(const ModelParams& params,
                                   const std::vector<ImageInstance>& images,
                                   const std::vector<TextInstance>& texts,
                                   const Selection& sel, Objective objective,
                                   RvePath rve_path, PassStats* stats,
                                   bool with_tapes = true) {
  const std::size_t s = images.size();
  ScoredBatch out;
  out.sim.assign(s, std::vector<double>(s, kUnscored));
  for (std::size_t t = 0; t < s; ++t) {
    for (std::size_t b : sel.images_per_text[t]) {
      std::unique_ptr<Tape> tape =
          with_tapes ? std::make_unique<Tape>() : nullptr;
      PairScore score = score_pair(tape.get(), params, images[b], texts[t],
                                   objective, rve_path, stats);
      out.sim[t][b] = score.sim.s_final.value();
      out.index[{t, b}] = out.order.size();
      out.order.emplace_back(t, b);
      out.tapes.push_back(std::move(tape));
      out.finals.push_back(score.sim.s_final);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Hardest negatives and the triplet loss
// ---------------------------------------------------------------------------

struct HardestNegatives {
  // Per text t: the non-corresponding image with the highest full score
  // among the selected set.
  std::vector<std::size_t> image_for_text;
  // Per image b: the hardest non-corresponding text among the texts
  // whose selection scored b; empty when no such text exists.
  std::vector<std::optional<std::size_t>> text_for_image;
};

inline HardestNegatives hardest_negatives(
    const std::vector<std::vector<double>>& sim, const Selection& sel) {
  const std::size_t s = sim.size();
  HardestNegatives out;
  out.image_for_text.assign(s, 0);
  out.text_for_image.assign(s, std::nullopt);
  for (std::size_t t = 0; t < s; ++t) {
    bool found = false;
    double best = 0.0;
    std::size_t arg = 0;
    for (std::size_t b : sel.images_per_text[t]) {
      if (b == t) continue;
      if (!found || sim[t][b] > best) {
        best = sim[t][b];
        arg = b;
        found = true;
      }
    }
    out.image_for_text[t] = arg;
  }
  for (std::size_t b = 0; b < s; ++b) {
    bool found = false;
    double best = 0.0;
    std::size_t arg = 0;
    for (std::size_t t = 0; t < s; ++t) {
      if (t == b) continue;
      if (std::isnan(sim[t][b])) continue;  // not in text t's selection
      if (!found || sim[t][b] > best) {
        best = sim[t][b];
        arg = t;
        found = true;
      }
    }
    if (found) out.text_for_image[b] = arg;
  }
  return out;
}

/// Margin loss of one corresponding pair against its two hardest
/// negatives; a missing negative contributes nothing.
inline double triplet_loss(double s_pos, std::optional<double> s_hard_text,
                           std::optional<double> s_hard_image, double gamma) {
  double loss = 0.0;
  if (s_hard_text) loss += std::max(gamma - s_pos + *s_hard_text, 0.0);
  if (s_hard_image) loss += std::max(gamma - s_pos + *s_hard_image, 0.0);
  return loss;
}

/// Batch loss plus d(loss)/d(score) per scored pair; the loss is
/// piecewise linear in the scores so the seeds are integer counts.
struct BatchLoss {
  double value = 0.0;
  std::map<std::pair<std::size_t, std::size_t>, double> seeds;
  std::size_t missing_image_terms = 0;
};

inline BatchLoss batch_triplet_loss(const std::vector<std::vector<double>>& sim,
                                    const HardestNegatives& hardest,
                                    double gamma) {
  const std::size_t s = sim.size();
  BatchLoss out;
  for (std::size_t i = 0; i < s; ++i) {
    const double s_pos = sim[i][i];
    // Text-anchored: the hardest other image against text i.
    const std::size_t b_hat = hardest.image_for_text[i];
    const double term_img = gamma - s_pos + sim[i][b_hat];
    if (term_img > 0.0) {
      out.value += term_img;
      out.seeds[{i, b_hat}] += 1.0;
      out.seeds[{i, i}] -= 1.0;
    }
    // Image-anchored: the hardest other text against image i.
    if (hardest.text_for_image[i]) {
      const std::size_t t_hat = *hardest.text_for_image[i];
      const double term_txt = gamma - s_pos + sim[t_hat][i];
      if (term_txt > 0.0) {
        out.value += term_txt;
        out.seeds[{t_hat, i}] += 1.0;
        out.seeds[{i, i}] -= 1.0;
      }
    } else {
      ++out.missing_image_terms;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

/// Standard bias-corrected Adam. Moments and step counters are kept per
/// parameter name, so parameters that join training at a later stage
/// start with fresh corrections.
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  struct Slot {
    std::vector<double> m, v;
    std::uint64_t step = 0;
  };
  std::map<std::string, Slot> slots;
};

inline void adam_step(
    const std::vector<std::pair<std::string, Tensor*>>& params,
    AdamState& state, double lr) {
  for (const auto& [name, tensor] : params) {
    const std::size_t n = tensor->size();
    AdamState::Slot& slot = state.slots[name];
    if (slot.m.empty()) {
      slot.m.assign(n, 0.0);
      slot.v.assign(n, 0.0);
    } else if (slot.m.size() != n) {
      throw DimensionError("adam_step: moment size " +
                           std::to_string(slot.m.size()) + " vs parameter " +
                           name + " size " + std::to_string(n));
    }
    slot.step += 1;
    const double c1 = 1.0 - std::pow(state.beta1, double(slot.step));
    const double c2 = 1.0 - std::pow(state.beta2, double(slot.step));
    const std::vector<double>* grad =
        tensor->has_grad() ? &tensor->grad() : nullptr;
    std::vector<double> next = tensor->values();
    for (std::size_t i = 0; i < n; ++i) {
      const double g = grad ? (*grad)[i] : 0.0;
      slot.m[i] = state.beta1 * slot.m[i] + (1.0 - state.beta1) * g;
      slot.v[i] = state.beta2 * slot.v[i] + (1.0 - state.beta2) * g * g;
      const double mhat = slot.m[i] / c1;
      const double vhat = slot.v[i] / c2;
      next[i] -= lr * mhat / (std::sqrt(vhat) + state.eps);
    }
    *tensor = Tensor(tensor->shape(), std::move(next), /*requires_grad=*/true);
  }
}

// ---------------------------------------------------------------------------
// Stage schedule
// ---------------------------------------------------------------------------

enum class TrainStage { matching_only, rve_only, full };

/// Epoch 0 trains the encoders and attention with the recurrent pass
/// skipped entirely; epoch 1 trains only the recurrent cells with
/// everything else frozen; later epochs train the whole network. With
/// use_rve = false every epoch is the first stage (identity probe).
struct StageSchedule {
  bool use_rve = true;

  TrainStage stage(std::size_t epoch) const {
    if (!use_rve || epoch == 0) return TrainStage::matching_only;
    if (epoch == 1) return TrainStage::rve_only;
    return TrainStage::full;
  }

  RvePath rve_path(std::size_t epoch) const {
    return (use_rve && epoch >= 1) ? RvePath::enabled : RvePath::skip;
  }

  static bool trains(TrainStage stage, const std::string& param_name) {
    const bool is_rve = param_name.rfind("rve/", 0) == 0;
    switch (stage) {
      case TrainStage::matching_only: return !is_rve;
      case TrainStage::rve_only: return is_rve;
      default: return true;
    }
  }
};

/// lr(epoch) = lr0 / 10^(epoch / 10), epochs counted from zero.
inline double lr_for_epoch(double lr0, std::size_t epoch) {
  double divisor = 1.0;
  for (std::size_t i = 0; i < epoch / 10; ++i) divisor *= 10.0;
  return lr0 / divisor;
}

// ---------------------------------------------------------------------------
// Batch step and the training loop
// ---------------------------------------------------------------------------

/// Forward the selected pairs of one batch, compute the loss, and (when
/// requested) accumulate gradients into the parameters. No clipping and
/// no update happen here; gradcheck drives this directly.
struct BatchRun {
  double loss = 0.0;
  std::size_t selected = 0;
  std::uint64_t rve_invocations = 0;
  std::size_t missing_image_terms = 0;
  bool scores_finite = true;
};

inline BatchRun run_batch(ModelParams& params,
                          const std::vector<ImageInstance>& images,
                          const std::vector<TextInstance>& texts,
                          const Config& cfg, RvePath rve_path,
                          bool accumulate_grads) {
  PassStats stats;
  const auto early = early_score_matrix(params, images, texts);
  const Selection sel = select_pairs(early, cfg.d);
  ScoredBatch scored =
      score_selection(params, images, texts, sel, cfg.objective_enum(),
                      rve_path, &stats, accumulate_grads);
  const HardestNegatives hardest = hardest_negatives(scored.sim, sel);
  const BatchLoss loss = batch_triplet_loss(scored.sim, hardest, cfg.gamma);
  if (accumulate_grads) {
    for (std::size_t idx = 0; idx < scored.order.size(); ++idx) {
      const auto it = loss.seeds.find(scored.order[idx]);
      if (it == loss.seeds.end() || it->second == 0.0) continue;
      backward(*scored.tapes[idx], scored.finals[idx], it->second);
    }
  }
  BatchRun out;
  out.loss = loss.value;
  out.selected = scored.order.size();
  out.rve_invocations = stats.rve_invocations;
  out.missing_image_terms = loss.missing_image_terms;
  for (const auto& [t, b] : scored.order) {
    if (!std::isfinite(scored.sim[t][b])) out.scores_finite = false;
  }
  return out;
}

/// Scale all accumulated gradients of the given parameters so their
/// global l2 norm is at most `clip`.
inline void clip_gradients(
    const std::vector<std::pair<std::string, Tensor*>>& params, double clip) {
  if (clip <= 0.0) return;
  double sq = 0.0;
  for (const auto& [name, t] : params) {
    if (!t->has_grad()) continue;
    for (double g : t->grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (norm <= clip) return;
  const double factor = clip / norm;
  for (const auto& [name, t] : params) {
    if (!t->has_grad()) continue;
    auto& grad = const_cast<std::vector<double>&>(t->grad());
    for (double& g : grad) g *= factor;
  }
}

struct EpochLog {
  std::size_t epoch = 0;
  double lr = 0.0;
  double mean_loss = 0.0;
  std::uint64_t rve_invocations = 0;
  std::size_t batches = 0;
  std::size_t missing_image_terms = 0;
};

struct BatchStats {
  std::size_t epoch = 0;
  std::size_t batch = 0;
  double loss = 0.0;
  std::size_t selected = 0;
  std::uint64_t rve_invocations = 0;
  double seconds = 0.0;
};

using BatchObserver = std::function<void(const BatchStats&)>;

struct TrainResult {
  ModelParams params;
  std::vector<EpochLog> log;
};

/// Train on parallel lists of corresponding images and texts. Iteration
/// order, batching and every reduction are seed-deterministic.
inline TrainResult train(const std::vector<ImageInstance>& images,
                         const std::vector<TextInstance>& texts,
                         std::size_t vocab, const Config& cfg,
                         const BatchObserver& observer = nullptr,
                         const ModelParams* warm_start = nullptr) {
  if (images.size() != texts.size() || images.empty()) {
    throw ValidationError("train: need matching nonempty image/text lists");
  }
  if (cfg.gamma <= 0.0) {
    throw ValidationError("train: margin must be positive");
  }
  if (cfg.d < 1) {
    throw ValidationError("train: selection width d must be at least 1");
  }
  Rng init_rng(cfg.seed);
  TrainResult result;
  result.params = warm_start != nullptr ? *warm_start
                                        : ModelParams::init(cfg, vocab, init_rng);
  ModelParams& params = result.params;
  AdamState adam;
  StageSchedule schedule{cfg.use_rve};

  const std::size_t pair_count = images.size();
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_for_epoch(cfg.lr, epoch);
    const TrainStage stage = schedule.stage(epoch);
    const RvePath rve_path = schedule.rve_path(epoch);

    // Shuffle at block granularity so planted neighbor structure in the
    // dataset (e.g. contrast twins) stays inside one batch.
    const std::size_t block = std::max<std::size_t>(1, cfg.shuffle_block);
    std::vector<std::size_t> blocks((pair_count + block - 1) / block);
    for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i] = i;
    Rng shuffle_rng(cfg.seed ^ (0x9e3779b97f4a7c15ull * (epoch + 1)));
    shuffle_rng.shuffle(blocks);
    std::vector<std::size_t> order;
    order.reserve(pair_count);
    for (std::size_t bi : blocks)
      for (std::size_t j = bi * block; j < std::min(pair_count, (bi + 1) * block); ++j)
        order.push_back(j);

    std::vector<std::pair<std::string, Tensor*>> trainable;
    for (auto& [name, tensor] : params.named_params()) {
      if (StageSchedule::trains(stage, name)) trainable.emplace_back(name, tensor);
    }

    EpochLog log;
    log.epoch = epoch;
    log.lr = lr;
    double loss_sum = 0.0;

    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < pair_count; start += cfg.batch_size) {
      const std::size_t end = std::min(pair_count, start + cfg.batch_size);
      if (end - start < 2) {
        log_warn("train: skipping final batch of size " +
                 std::to_string(end - start));
        break;
      }
      std::vector<ImageInstance> batch_images;
      std::vector<TextInstance> batch_texts;
      std::set<std::string> seen_images;
      batch_images.reserve(end - start);
      batch_texts.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) {
        const std::size_t p = order[i];
        if (!seen_images.insert(images[p].id).second) {
          throw ValidationError(
              "train: image '" + images[p].id +
              "' appears twice in one batch; corresponding pairs must be "
              "unique per batch");
        }
        batch_images.push_back(images[p]);
        batch_texts.push_back(texts[p]);
      }

      const auto t0 = std::chrono::steady_clock::now();
      params.zero_grads();
      BatchRun run = run_batch(params, batch_images, batch_texts, cfg,
                               rve_path, /*accumulate_grads=*/true);
      if (!std::isfinite(run.loss) || !run.scores_finite) {
        throw DivergenceError("train: non-finite loss in epoch " +
                              std::to_string(epoch) + " batch " +
                              std::to_string(batch_index));
      }
      clip_gradients(trainable, cfg.grad_clip);
      adam_step(trainable, adam, lr);
      const auto t1 = std::chrono::steady_clock::now();

      loss_sum += run.loss;
      log.rve_invocations += run.rve_invocations;
      log.missing_image_terms += run.missing_image_terms;
      ++log.batches;
      if (observer) {
        BatchStats bs;
        bs.epoch = epoch;
        bs.batch = batch_index;
        bs.loss = run.loss;
        bs.selected = run.selected;
        bs.rve_invocations = run.rve_invocations;
        bs.seconds = std::chrono::duration<double>(t1 - t0).count();
        observer(bs);
      }
      ++batch_index;
    }
    log.mean_loss = log.batches > 0 ? loss_sum / double(log.batches) : 0.0;
    result.log.push_back(log);
    log_info("epoch " + std::to_string(epoch) + " lr " + std::to_string(lr) +
             " mean loss " + std::to_string(log.mean_loss));
  }
  return result;
}

}  // namespace dprnn
