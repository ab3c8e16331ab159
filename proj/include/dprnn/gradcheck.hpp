// Copyright (c) 2026 the dprnn authors
// Licensed under the Apache License 2.0.

/**
 * Central finite-difference gradient checking. The numeric side only
 * re-runs the forward pass with perturbed leaves, so it is independent
 * of every reverse-mode step it validates.
 */

#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "dprnn/tensor.hpp"

namespace dprnn {

struct GradCheckReport {
  std::string name;
  double max_rel_err = 0.0;
  std::size_t coords = 0;

  bool ok(double tol = 1e-4) const { return max_rel_err <= tol; }
};

/// A differentiable scalar function of a list of leaf tensors.
using GradCheckFn =
    std::function<Tensor(Tape*, const std::vector<Tensor>&)>;

/// Compare reverse-mode gradients of `fn` against central differences at
/// the given leaves. Relative error per coordinate is
/// |analytic - numeric| / max(1, |numeric|).
inline GradCheckReport check_gradients(const std::string& name,
                                       const GradCheckFn& fn,
                                       const std::vector<Tensor>& leaves,
                                       double step = 1e-5) {
  // Analytic pass.
  std::vector<Tensor> live;
  live.reserve(leaves.size());
  for (const Tensor& l : leaves) {
    Tensor t(l.shape(), l.values(), /*requires_grad=*/true);
    live.push_back(t);
  }
  Tape tape;
  Tensor root = fn(&tape, live);
  backward(tape, root);

  GradCheckReport report;
  report.name = name;

  auto eval_at = [&](std::size_t which, std::size_t coord,
                     double delta) -> double {
    std::vector<Tensor> probe;
    probe.reserve(leaves.size());
    for (std::size_t i = 0; i < leaves.size(); ++i) {
      std::vector<double> vals = leaves[i].values();
      if (i == which) vals[coord] += delta;
      probe.emplace_back(leaves[i].shape(), std::move(vals));
    }
    return fn(nullptr, probe).value();
  };

  for (std::size_t i = 0; i < live.size(); ++i) {
    const std::size_t n = live[i].size();
    for (std::size_t c = 0; c < n; ++c) {
      const double fp = eval_at(i, c, step);
      const double fm = eval_at(i, c, -step);
      const double numeric = (fp - fm) / (2.0 * step);
      const double analytic = live[i].has_grad() ? live[i].grad()[c] : 0.0;
      const double rel =
          std::fabs(analytic - numeric) / std::max(1.0, std::fabs(numeric));
      if (rel > report.max_rel_err) report.max_rel_err = rel;
      ++report.coords;
    }
  }
  return report;
}

}  // namespace dprnn
