// Copyright (c) 2026 the dprnn authors
// Licensed under the Apache License 2.0.

/**
 * The assembled model: both encoders, the recurrent visual embedding and
 * the matching head, plus the full per-pair scoring pipeline.
 */

#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dprnn/config.hpp"
#include "dprnn/encoders.hpp"
#include "dprnn/matching.hpp"
#include "dprnn/rve.hpp"

namespace dprnn {

/// Whether the recurrent visual pass runs for a pair. `skip` is both the
/// first-stage training path and the identity-probe ablation: matching
/// consumes the encoder's object features unchanged.
enum class RvePath { skip, enabled };

/// Counters threaded through scoring; training resets them per batch.
struct PassStats {
  std::uint64_t rve_invocations = 0;
};

struct ModelParams {
  ImageEncoderParams image_encoder;
  TextEncoderParams text_encoder;
  RveParams rve;
  MatchingParams matching;

  static ModelParams init(const Config& cfg, std::size_t vocab, Rng& rng) {
    ModelParams p;
    p.image_encoder = ImageEncoderParams::init(cfg.dim, cfg.h, rng);
    p.text_encoder = TextEncoderParams::init(vocab, cfg.q, cfg.h, rng);
    p.rve = RveParams::init(cfg.h, rng);
    p.matching = MatchingParams::init(cfg.h, rng);
    p.matching.lambda1 = cfg.lambda1;
    p.matching.lambda2 = cfg.lambda2;
    p.matching.beta_w = cfg.beta_w;
    p.matching.beta_o = cfg.beta_o;
    p.set_requires_grad(true);
    return p;
  }

  void set_requires_grad(bool rg) {
    for (auto& [name, t] : named_params()) {
      (void)name;
      t->set_requires_grad(rg);
    }
  }

  /// All learnable tensors in a fixed order; the names key checkpoint
  /// blocks, optimizer slots and checksums.
  std::vector<std::pair<std::string, Tensor*>> named_params() {
    std::vector<std::pair<std::string, Tensor*>> out;
    auto gru = [&out](const std::string& prefix, GruParams& g) {
      out.emplace_back(prefix + "/w_update", &g.w_update);
      out.emplace_back(prefix + "/u_update", &g.u_update);
      out.emplace_back(prefix + "/b_update", &g.b_update);
      out.emplace_back(prefix + "/w_reset", &g.w_reset);
      out.emplace_back(prefix + "/u_reset", &g.u_reset);
      out.emplace_back(prefix + "/b_reset", &g.b_reset);
      out.emplace_back(prefix + "/w_cand", &g.w_cand);
      out.emplace_back(prefix + "/u_cand", &g.u_cand);
      out.emplace_back(prefix + "/b_cand", &g.b_cand);
    };
    out.emplace_back("image_encoder/feature_w", &image_encoder.feature_w);
    out.emplace_back("image_encoder/feature_b", &image_encoder.feature_b);
    out.emplace_back("image_encoder/position_w", &image_encoder.position_w);
    out.emplace_back("image_encoder/position_b", &image_encoder.position_b);
    out.emplace_back("text_encoder/embedding", &text_encoder.embedding);
    gru("text_encoder/forward", text_encoder.forward_gru);
    gru("text_encoder/backward", text_encoder.backward_gru);
    gru("rve/forward", rve.forward_gru);
    gru("rve/backward", rve.backward_gru);
    out.emplace_back("matching/word_attention", &matching.word_attention);
    out.emplace_back("matching/object_attention", &matching.object_attention);
    return out;
  }

  std::vector<std::pair<std::string, const Tensor*>> named_params() const {
    auto mutable_view = const_cast<ModelParams*>(this)->named_params();
    std::vector<std::pair<std::string, const Tensor*>> out;
    out.reserve(mutable_view.size());
    for (auto& [name, t] : mutable_view) out.emplace_back(name, t);
    return out;
  }

  void zero_grads() {
    for (auto& [name, t] : named_params()) {
      (void)name;
      t->zero_grad();
    }
  }
};

/// FNV-1a over the raw bytes of every parameter in named order.
inline std::uint64_t params_checksum(const ModelParams& params,
                                     const std::string& prefix = "") {
  std::uint64_t hash = 14695981039346656037ull;
  auto eat = [&hash](const void* data, std::size_t len) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
      hash ^= bytes[i];
      hash *= 1099511628211ull;
    }
  };
  for (const auto& [name, t] : params.named_params()) {
    if (!prefix.empty() && name.rfind(prefix, 0) != 0) continue;
    eat(name.data(), name.size());
    eat(t->values().data(), t->values().size() * sizeof(double));
  }
  return hash;
}

/// Result of scoring one image-text pair.
struct PairScore {
  SimilarityBreakdown sim;
  Reordering reordering;  // empty when the recurrent pass was skipped
};

/// Full per-pair pipeline: encode both modalities, optionally reorder
/// and recurrently re-embed the objects against this text, then run the
/// cross-matching head.
inline PairScore score_pair(Tape* tape, const ModelParams& params,
                            const ImageInstance& image,
                            const TextInstance& text, Objective objective,
                            RvePath rve_path, PassStats* stats = nullptr) {
  PairScore out;
  Tensor objects = encode_image(tape, image, params.image_encoder);
  Tensor words = encode_text(tape, text, params.text_encoder);
  Tensor word_weights = self_attention_weights(
      tape, words, params.matching.word_attention, params.matching.beta_w);
  if (rve_path == RvePath::enabled) {
    Tensor rel = relatedness(tape, objects, words, word_weights);
    std::vector<std::size_t> anchors = most_related_word(rel);
    auto [reo, ordered] = reorder_objects(tape, objects, anchors);
    out.reordering = std::move(reo);
    objects = recurrent_embed(tape, ordered, params.rve);
    if (stats != nullptr) ++stats->rve_invocations;
  }
  out.sim = pair_similarity(tape, objects, words, params.matching, objective,
                            nullptr, &word_weights);
  return out;
}

/// Early matching score of one already-encoded pair: cheap text-image
/// compatibility from encoder outputs only, no recurrent pass.
inline double early_score(const Tensor& objects, const Tensor& words,
                          const Tensor& word_weights) {
  Tensor rel = relatedness(nullptr, objects, words, word_weights);
  return early_matching_score(rel);
}

}  // namespace dprnn
