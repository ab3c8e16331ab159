// Copyright (c) 2026 the dprnn authors
// Licensed under the Apache License 2.0.

/**
 * The finite-difference suite: every differentiable operation plus the
 * composed encoders, the matching head, the recurrent branch and the
 * full two-pair batch triplet loss, each checked against central
 * differences on small random inputs.
 */

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dprnn/gradcheck.hpp"
#include "dprnn/model.hpp"
#include "dprnn/training.hpp"

namespace dprnn {

struct SuiteEntry {
  std::string name;
  double max_rel_err = 0.0;
  std::size_t coords = 0;
  bool pass = false;
};

namespace detail {

inline Tensor suite_random(Shape shape, Rng& rng, double lo = -1.0,
                           double hi = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v));
}

inline Tensor suite_random_off_zero(Shape shape, Rng& rng) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) {
    const double mag = rng.uniform(0.1, 1.0);
    x = rng.uniform() < 0.5 ? -mag : mag;
  }
  return Tensor(std::move(shape), std::move(v));
}

inline ImageInstance suite_image(std::size_t k, std::size_t d, Rng& rng,
                                 const std::string& id) {
  ImageInstance img;
  img.id = id;
  img.descriptors = suite_random({k, d}, rng);
  img.boxes = suite_random({k, 4}, rng, 0.0, 1.0);
  return img;
}

/// Check the multi-tape batch loss (selection, hardest negatives and
/// hand-seeded backward passes) against finite differences over every
/// model parameter.
inline SuiteEntry check_batch_loss(std::uint64_t seed, double tol,
                                   double step) {
  Rng rng(seed);
  Config cfg;
  cfg.h = 4;
  cfg.q = 3;
  cfg.dim = 5;
  cfg.k = 3;
  cfg.d = 1;
  cfg.gamma = 0.2;
  cfg.objective = "ensemble";
  ModelParams base = ModelParams::init(cfg, /*vocab=*/8, rng);

  std::vector<ImageInstance> images{suite_image(3, 5, rng, "a"),
                                    suite_image(3, 5, rng, "b")};
  std::vector<TextInstance> texts{{"ta", {1, 4, 2}}, {"tb", {7, 0, 3, 5}}};

  // Analytic gradients through the per-pair tapes.
  base.zero_grads();
  run_batch(base, images, texts, cfg, RvePath::enabled,
            /*accumulate_grads=*/true);

  SuiteEntry entry;
  entry.name = "batch_triplet_loss";
  auto named = base.named_params();
  for (auto& [name, tensor] : named) {
    for (std::size_t c = 0; c < tensor->size(); ++c) {
      auto probe_loss = [&](double delta) {
        ModelParams probe = base;
        auto probe_named = probe.named_params();
        for (auto& [pname, ptensor] : probe_named) {
          if (pname != name) continue;
          std::vector<double> vals = ptensor->values();
          vals[c] += delta;
          *ptensor = Tensor(ptensor->shape(), std::move(vals), true);
        }
        return run_batch(probe, images, texts, cfg, RvePath::enabled,
                         /*accumulate_grads=*/false)
            .loss;
      };
      const double numeric = (probe_loss(step) - probe_loss(-step)) / (2 * step);
      const double analytic = tensor->has_grad() ? tensor->grad()[c] : 0.0;
      const double rel =
          std::fabs(analytic - numeric) / std::max(1.0, std::fabs(numeric));
      if (rel > entry.max_rel_err) entry.max_rel_err = rel;
      ++entry.coords;
    }
  }
  entry.pass = entry.max_rel_err <= tol;
  return entry;
}

}  // namespace detail

/// Run the whole suite. Every entry must pass for the gradcheck CLI to
/// exit zero.
inline std::vector<SuiteEntry> run_gradcheck_suite(std::uint64_t seed = 1618,
                                                   double tol = 1e-4,
                                                   double step = 1e-5) {
  using detail::suite_random;
  using detail::suite_random_off_zero;
  Rng rng(seed);
  std::vector<SuiteEntry> out;

  auto run = [&](const std::string& name, const GradCheckFn& fn,
                 const std::vector<Tensor>& leaves) {
    GradCheckReport rep = check_gradients(name, fn, leaves, step);
    out.push_back({name, rep.max_rel_err, rep.coords, rep.ok(tol)});
  };

  // Primitives.
  {
    Tensor a = suite_random({2, 3}, rng), b = suite_random({2, 3}, rng);
    Tensor w = suite_random({2, 3}, rng);
    run("add",
        [&](Tape* t, const std::vector<Tensor>& xs) {
          return dot(t, add(t, xs[0], xs[1]), w);
        },
        {a, b});
    run("sub",
        [&](Tape* t, const std::vector<Tensor>& xs) {
          return dot(t, sub(t, xs[0], xs[1]), w);
        },
        {a, b});
    run("mul",
        [&](Tape* t, const std::vector<Tensor>& xs) {
          return dot(t, mul(t, xs[0], xs[1]), w);
        },
        {a, b});
    run("scale",
        [&](Tape* t, const std::vector<Tensor>& xs) {
          return dot(t, scale(t, xs[0], -2.3), w);
        },
        {a});
    run("add_scalar",
        [&](Tape* t, const std::vector<Tensor>& xs) {
          return dot(t, add_scalar(t, xs[0], 0.7), w);
        },
        {a});
    run("sigmoid",
        [&](Tape* t, const std::vector<Tensor>& xs) {
          return dot(t, sigmoid(t, xs[0]), w);
        },
        {a});
    run("tanh",
        [&](Tape* t, const std::vector<Tensor>& xs) {
          return dot(t, dprnn::tanh(t, xs[0]), w);
        },
        {a});
    run("clamp_at_zero",
        [&](Tape* t, const std::vector<Tensor>& xs) {
          return dot(t, relu(t, xs[0]), w);
        },
        {suite_random_off_zero({2, 3}, rng)});
  }
  {
    Tensor a = suite_random({3, 4}, rng), b = suite_random({4, 2}, rng);
    Tensor bt = suite_random({2, 4}, rng), v = suite_random({4}, rng);
    Tensor w32 = suite_random({3, 2}, rng), w3 = suite_random({3}, rng);
    Tensor w34 = suite_random({3, 4}, rng);
    run("matmul",
        [&](Tape* t, const std::vector<Tensor>& xs) {
          return dot(t, matmul(t, xs[0], xs[1]), w32);
        },
        {a, b});
    run("matmul_nt",
        [&](Tape* t, const std::vector<Tensor>& xs) {
          return dot(t, matmul_nt(t, xs[0], xs[1]), w32);
        },
        {a, bt});
    run("matvec",
        [&](Tape* t, const std::vector<Tensor>& xs) {
          return dot(t, matvec(t, xs[0], xs[1]), w3);
        },
        {a, v});
    run("dot",
        [&](Tape* t, const std::vector<Tensor>& xs) {
          return dot(t, xs[0], xs[1]);
        },
        {v, suite_random({4}, rng)});
    run("sum_all",
        [&](Tape* t, const std::vector<Tensor>& xs) { return sum_all(t, xs[0]); },
        {a});
    run("add_rowvec",
        [&](Tape* t, const std::vector<Tensor>& xs) {
          return dot(t, add_rowvec(t, xs[0], xs[1]), w34);
        },
        {a, v});
    std::vector<std::size_t> ids{1, 3, 1};
    Tensor w33 = suite_random({3, 4}, rng);
    run("gather_rows",
        [&](Tape* t, const std::vector<Tensor>& xs) {
          return dot(t, gather_rows(t, xs[0], ids), w33);
        },
        {suite_random({5, 4}, rng)});
    Tensor r0 = suite_random({1, 4}, rng), r1 = suite_random({1, 4}, rng);
    Tensor w24 = suite_random({2, 4}, rng);
    run("concat_rows",
        [&](Tape* t, const std::vector<Tensor>& xs) {
          return dot(t, concat_rows(t, {xs[0], xs[1]}), w24);
        },
        {r0, r1});
    std::vector<std::size_t> perm{2, 0, 1};
    run("permute_rows",
        [&](Tape* t, const std::vector<Tensor>& xs) {
          return dot(t, permute_rows(t, xs[0], perm), w34);
        },
        {suite_random({3, 4}, rng)});
  }
  {
    Tensor x = suite_random({5}, rng), w5 = suite_random({5}, rng);
    run("softmax_temp",
        [&](Tape* t, const std::vector<Tensor>& xs) {
          return dot(t, softmax(t, xs[0], 2.1), w5);
        },
        {x});
    std::vector<std::uint8_t> mask{0, 1, 0, 0, 1};
    run("softmax_temp_masked",
        [&](Tape* t, const std::vector<Tensor>& xs) {
          return dot(t, softmax(t, xs[0], 3.0, &mask), w5);
        },
        {x});
    Tensor m = suite_random({3, 4}, rng), w34 = suite_random({3, 4}, rng);
    Tensor v4 = suite_random({4}, rng);
    run("row_softmax",
        [&](Tape* t, const std::vector<Tensor>& xs) {
          return dot(t, row_softmax(t, xs[0], 5.0), w34);
        },
        {m});
    run("scale_columns",
        [&](Tape* t, const std::vector<Tensor>& xs) {
          return dot(t, scale_columns(t, xs[0], xs[1]), w34);
        },
        {m, v4});
    run("l2_normalize_columns",
        [&](Tape* t, const std::vector<Tensor>& xs) {
          return dot(t, l2_normalize_columns(t, xs[0]), w34);
        },
        {m});
  }
  {
    Tensor a = suite_random_off_zero({6}, rng);
    Tensor b = suite_random_off_zero({6}, rng);
    run("cosine",
        [&](Tape* t, const std::vector<Tensor>& xs) {
          return cosine(t, xs[0], xs[1]);
        },
        {a, b});
    Tensor ra = suite_random_off_zero({3, 4}, rng);
    Tensor rb = suite_random_off_zero({3, 4}, rng);
    Tensor mb = suite_random_off_zero({2, 4}, rng);
    Tensor w3 = suite_random({3}, rng), w32 = suite_random({3, 2}, rng);
    run("cosine_rows",
        [&](Tape* t, const std::vector<Tensor>& xs) {
          return dot(t, cosine_rows(t, xs[0], xs[1]), w3);
        },
        {ra, rb});
    run("cosine_matrix",
        [&](Tape* t, const std::vector<Tensor>& xs) {
          return dot(t, cosine_matrix(t, xs[0], xs[1]), w32);
        },
        {ra, mb});
  }

  // Composites.
  {
    Tensor x = suite_random({1, 3}, rng), h = suite_random({1, 3}, rng);
    Tensor w = suite_random({1, 3}, rng);
    GruParams g;
    g.w_update = suite_random({3, 3}, rng);
    g.u_update = suite_random({3, 3}, rng);
    g.b_update = suite_random({1, 3}, rng);
    g.w_reset = suite_random({3, 3}, rng);
    g.u_reset = suite_random({3, 3}, rng);
    g.b_reset = suite_random({1, 3}, rng);
    g.w_cand = suite_random({3, 3}, rng);
    g.u_cand = suite_random({3, 3}, rng);
    g.b_cand = suite_random({1, 3}, rng);
    run("gru_cell",
        [&](Tape* t, const std::vector<Tensor>& xs) {
          GruParams q;
          q.w_update = xs[0];
          q.u_update = xs[1];
          q.b_update = xs[2];
          q.w_reset = xs[3];
          q.u_reset = xs[4];
          q.b_reset = xs[5];
          q.w_cand = xs[6];
          q.u_cand = xs[7];
          q.b_cand = xs[8];
          return dot(t, gru_cell(t, q, xs[9], xs[10]), w);
        },
        {g.w_update, g.u_update, g.b_update, g.w_reset, g.u_reset, g.b_reset,
         g.w_cand, g.u_cand, g.b_cand, x, h});
  }
  {
    // Full pair scoring with the recurrent branch enabled, checked
    // against a representative slice of the model parameters.
    Config cfg;
    cfg.h = 3;
    cfg.q = 2;
    cfg.dim = 4;
    cfg.k = 3;
    ModelParams params = ModelParams::init(cfg, 6, rng);
    ImageInstance img = detail::suite_image(3, 4, rng, "g");
    TextInstance txt{"t", {1, 5, 2, 0}};
    const std::vector<std::string> picked{
        "image_encoder/feature_w",  "image_encoder/position_w",
        "text_encoder/embedding",   "text_encoder/forward/w_cand",
        "text_encoder/backward/u_update", "rve/forward/w_reset",
        "rve/backward/u_cand",      "matching/word_attention",
        "matching/object_attention"};
    std::vector<Tensor> leaves;
    auto named = params.named_params();
    for (const std::string& want : picked)
      for (auto& [name, tensor] : named)
        if (name == want) leaves.push_back(*tensor);
    run("pair_similarity_with_rve",
        [&](Tape* t, const std::vector<Tensor>& xs) {
          ModelParams p = params;
          auto np = p.named_params();
          for (std::size_t i = 0; i < picked.size(); ++i)
            for (auto& [name, tensor] : np)
              if (name == picked[i]) *tensor = xs[i];
          return score_pair(t, p, img, txt, Objective::ensemble,
                            RvePath::enabled)
              .sim.s_final;
        },
        leaves);
  }

  out.push_back(detail::check_batch_loss(seed ^ 0xabcdef, tol, step));
  return out;
}

inline bool suite_passed(const std::vector<SuiteEntry>& entries) {
  for (const SuiteEntry& e : entries)
    if (!e.pass) return false;
  return true;
}

}  // namespace dprnn
