// Copyright (c) 2026 the dprnn authors
// Licensed under the Apache License 2.0.

/**
 * Recurrent visual embedding: line the objects up in the order their
 * most related words appear in the paired text, then re-encode the
 * sequence with a bi-directional GRU so each object feature absorbs the
 * context of its semantic neighbors.
 *
 * The reordering is a piecewise-constant function of the inputs and is
 * treated as a constant during differentiation; gradients flow through
 * the permuted features and the recurrent cells only.
 */

#pragma once

#include <algorithm>
#include <numeric>
#include <vector>

#include "dprnn/encoders.hpp"
#include "dprnn/error.hpp"
#include "dprnn/ops.hpp"
#include "dprnn/tensor.hpp"

namespace dprnn {

/// Forward and backward recurrent cells over object features (h -> h).
struct RveParams {
  GruParams forward_gru;
  GruParams backward_gru;

  static RveParams init(std::size_t h, Rng& rng) {
    RveParams p;
    p.forward_gru = GruParams::init(h, h, rng);
    p.backward_gru = GruParams::init(h, h, rng);
    return p;
  }
};

/// How the objects were lined up: slot r holds source object
/// permutation[r], anchored at word position anchor_word[r]. Anchors are
/// non-decreasing along the slots.
struct Reordering {
  std::vector<std::size_t> permutation;
  std::vector<std::size_t> anchor_word;

  bool empty() const { return permutation.empty(); }

  std::vector<std::size_t> inverse() const {
    std::vector<std::size_t> inv(permutation.size());
    for (std::size_t r = 0; r < permutation.size(); ++r)
      inv[permutation[r]] = r;
    return inv;
  }
};

/// Relatedness coefficient of each word to each object: the word's
/// self-attention weight times the raw (unnormalized) dot product.
inline Tensor relatedness(Tape* tape, const Tensor& objects,
                          const Tensor& words, const Tensor& word_weights) {
  if (word_weights.size() != words.rows()) {
    throw DimensionError("relatedness: word weights " +
                         shape_str(word_weights.shape()) + " vs words " +
                         shape_str(words.shape()));
  }
  return scale_columns(tape, matmul_nt(tape, objects, words), word_weights);
}

/// Per-object argmax over words; ties resolve to the smallest word index.
inline std::vector<std::size_t> most_related_word(const Tensor& relatedness) {
  const std::size_t k = relatedness.rows(), n = relatedness.cols();
  std::vector<std::size_t> anchors(k, 0);
  for (std::size_t i = 0; i < k; ++i) {
    double best = relatedness.at(i, 0);
    std::size_t arg = 0;
    for (std::size_t j = 1; j < n; ++j) {
      if (relatedness.at(i, j) > best) {
        best = relatedness.at(i, j);
        arg = j;
      }
    }
    anchors[i] = arg;
  }
  return anchors;
}

/// Stable sort of the objects by (anchor word position, original index).
/// Equal anchors keep their original relative order, so an all-equal
/// anchor vector yields the identity permutation.
inline std::pair<Reordering, Tensor> reorder_objects(
    Tape* tape, const Tensor& objects,
    const std::vector<std::size_t>& anchors) {
  const std::size_t k = objects.rows();
  if (anchors.size() != k) {
    throw DimensionError("reorder_objects: " + std::to_string(anchors.size()) +
                         " anchors for " + std::to_string(k) + " objects");
  }
  Reordering reo;
  reo.permutation.resize(k);
  std::iota(reo.permutation.begin(), reo.permutation.end(), 0);
  std::stable_sort(reo.permutation.begin(), reo.permutation.end(),
                   [&anchors](std::size_t a, std::size_t b) {
                     return anchors[a] < anchors[b];
                   });
  reo.anchor_word.resize(k);
  for (std::size_t r = 0; r < k; ++r) reo.anchor_word[r] = anchors[reo.permutation[r]];
  Tensor ordered = permute_rows(tape, objects, reo.permutation);
  return {reo, ordered};
}

/// Bi-directional GRU over the reordered object rows, zero initial
/// hidden states; each output row is the mean of the two directions.
/// Output rows stay in slot order (downstream aggregation is
/// order-agnostic; the Reordering record keeps traceability).
inline Tensor recurrent_embed(Tape* tape, const Tensor& ordered_objects,
                              const RveParams& params) {
  std::vector<Tensor> fwd =
      gru_scan(tape, params.forward_gru, ordered_objects, false);
  std::vector<Tensor> bwd =
      gru_scan(tape, params.backward_gru, ordered_objects, true);
  std::vector<Tensor> rows(ordered_objects.rows());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    rows[i] = scale(tape, add(tape, fwd[i], bwd[i]), 0.5);
  }
  return concat_rows(tape, rows);
}

/// Early matching score: the plain sum of all relatedness coefficients.
/// Computable from encoder outputs alone, before any recurrent pass.
inline double early_matching_score(const Tensor& relatedness) {
  double s = 0.0;
  for (std::size_t i = 0; i < relatedness.size(); ++i)
    s += relatedness.at(i);
  return s;
}

}  // namespace dprnn
