// Copyright (c) 2026 the dprnn authors
// Licensed under the Apache License 2.0.

/**
 * Cross matching of one image-text pair from object features (k x h) and
 * word features (n x h).
 *
 * Both directions share one recipe: clamp pairwise cosines at zero,
 * l2-normalize them across the attending side, soften with an inverse
 * temperature, aggregate the other modality, and compare by cosine. Two
 * self-attention heads weight the per-object and per-word similarities
 * into the object-oriented and word-oriented scores.
 */

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dprnn/error.hpp"
#include "dprnn/ops.hpp"
#include "dprnn/rng.hpp"
#include "dprnn/tensor.hpp"

namespace dprnn {

enum class Objective { word_oriented, object_oriented, ensemble };

inline Objective objective_from_string(const std::string& s) {
  if (s == "word" || s == "word_oriented") return Objective::word_oriented;
  if (s == "object" || s == "object_oriented")
    return Objective::object_oriented;
  if (s == "ensemble") return Objective::ensemble;
  throw ValidationError("unknown objective: " + s);
}

inline std::string to_string(Objective o) {
  switch (o) {
    case Objective::word_oriented: return "word";
    case Objective::object_oriented: return "object";
    default: return "ensemble";
  }
}

/// Learnable attention row vectors plus the fixed inverse temperatures.
struct MatchingParams {
  Tensor word_attention;    // 1 x h
  Tensor object_attention;  // 1 x h
  double lambda1 = 9.0;     // object -> word cross attention
  double lambda2 = 4.0;     // word -> object cross attention
  double beta_w = 0.3;      // word self-attention
  double beta_o = 0.3;      // object self-attention; 0 averages

  static MatchingParams init(std::size_t h, Rng& rng) {
    const double limit = 1.0 / std::sqrt(static_cast<double>(h));
    auto vec = [&] {
      std::vector<double> v(h);
      for (double& x : v) x = rng.uniform(-limit, limit);
      return Tensor(Shape{1, h}, std::move(v));
    };
    MatchingParams p;
    p.word_attention = vec();
    p.object_attention = vec();
    return p;
  }
};

/// The two normalized clamped-cosine affinity matrices.
struct AffinityPair {
  Tensor object_to_word;  // k x n, columns l2-normalized over objects
  Tensor word_to_object;  // n x k, columns l2-normalized over words
};

/// Everything computed for one pair: attention maps, per-element
/// similarities, self-attention weights and the three scores. The scalar
/// members stay live on the pair's tape so callers can backpropagate.
struct SimilarityBreakdown {
  Tensor s_word;    // scalar
  Tensor s_object;  // scalar
  Tensor s_final;   // scalar per objective

  AffinityPair affinity;
  Tensor alpha;             // k x n cross attention over words
  Tensor alpha_dual;        // n x k cross attention over objects
  Tensor attended_text;     // k x h weighted word features per object
  Tensor attended_image;    // n x h weighted object features per word
  Tensor object_text_sims;  // k
  Tensor image_word_sims;   // n
  Tensor word_weights;      // n
  Tensor object_weights;    // k
};

/// Normalized affinity of each object to each word: clamped cosine,
/// divided per word by the l2 norm over all objects (epsilon under the
/// root keeps all-zero columns at zero).
inline Tensor object_to_word_affinity(Tape* tape, const Tensor& objects,
                                      const Tensor& words) {
  return l2_normalize_columns(tape,
                              relu(tape, cosine_matrix(tape, objects, words)));
}

/// Cross-modality guided attention: softmax each object's affinity row
/// over the words and mix word features accordingly.
inline std::pair<Tensor, Tensor> attend_text_per_object(
    Tape* tape, const Tensor& words, const Tensor& affinity, double lambda1,
    const std::vector<std::uint8_t>* word_mask = nullptr) {
  Tensor alpha = row_softmax(tape, affinity, lambda1, word_mask);
  Tensor attended = matmul(tape, alpha, words);
  return {attended, alpha};
}

/// Similarity of each object to the text it attends to.
inline Tensor object_text_similarity(Tape* tape, const Tensor& objects,
                                     const Tensor& attended_text) {
  return cosine_rows(tape, objects, attended_text);
}

struct DualSimilarity {
  Tensor affinity;        // n x k
  Tensor alpha;           // n x k
  Tensor attended_image;  // n x h
  Tensor image_word_sims; // n
};

/// Mirror of the object path with the modalities swapped: affinity of
/// each word to each object, attention over objects, similarity of each
/// word to its attended image. Masked (padded) word rows are zeroed
/// before normalization so they contribute nothing.
inline DualSimilarity dual_image_word_similarity(
    Tape* tape, const Tensor& objects, const Tensor& words, double lambda2,
    const std::vector<std::uint8_t>* word_mask = nullptr) {
  Tensor clamped = relu(tape, cosine_matrix(tape, words, objects));
  if (word_mask != nullptr) {
    const std::size_t n = words.rows(), k = objects.rows();
    std::vector<double> keep(n * k, 1.0);
    for (std::size_t j = 0; j < n; ++j) {
      if ((*word_mask)[j]) {
        for (std::size_t i = 0; i < k; ++i) keep[j * k + i] = 0.0;
      }
    }
    clamped = mul(tape, clamped, Tensor(Shape{n, k}, std::move(keep)));
  }
  DualSimilarity out;
  out.affinity = l2_normalize_columns(tape, clamped);
  out.alpha = row_softmax(tape, out.affinity, lambda2);
  out.attended_image = matmul(tape, out.alpha, objects);
  out.image_word_sims = cosine_rows(tape, words, out.attended_image);
  return out;
}

/// Softmax over rows of a learned projection score; beta = 0 gives the
/// plain average.
inline Tensor self_attention_weights(
    Tape* tape, const Tensor& features, const Tensor& attention_vector,
    double beta, const std::vector<std::uint8_t>* mask = nullptr) {
  return softmax(tape, matvec(tape, features, attention_vector), beta, mask);
}

/// Full cross-matching score of one pair. `word_weights_in` lets callers
/// reuse word self-attention already computed for the same words.
inline SimilarityBreakdown pair_similarity(
    Tape* tape, const Tensor& objects, const Tensor& words,
    const MatchingParams& params, Objective objective,
    const std::vector<std::uint8_t>* word_mask = nullptr,
    const Tensor* word_weights_in = nullptr) {
  if (objects.rank() != 2 || words.rank() != 2 ||
      objects.cols() != words.cols()) {
    throw DimensionError("pair_similarity: objects " +
                         shape_str(objects.shape()) + " vs words " +
                         shape_str(words.shape()));
  }
  SimilarityBreakdown out;

  out.affinity.object_to_word = object_to_word_affinity(tape, objects, words);
  auto [attended_text, alpha] = attend_text_per_object(
      tape, words, out.affinity.object_to_word, params.lambda1, word_mask);
  out.attended_text = attended_text;
  out.alpha = alpha;
  out.object_text_sims = object_text_similarity(tape, objects, attended_text);

  DualSimilarity dual =
      dual_image_word_similarity(tape, objects, words, params.lambda2,
                                 word_mask);
  out.affinity.word_to_object = dual.affinity;
  out.alpha_dual = dual.alpha;
  out.attended_image = dual.attended_image;
  out.image_word_sims = dual.image_word_sims;

  out.word_weights =
      word_weights_in != nullptr
          ? *word_weights_in
          : self_attention_weights(tape, words, params.word_attention,
                                   params.beta_w, word_mask);
  out.object_weights = self_attention_weights(
      tape, objects, params.object_attention, params.beta_o);

  out.s_word = dot(tape, out.word_weights, out.image_word_sims);
  out.s_object = dot(tape, out.object_weights, out.object_text_sims);
  switch (objective) {
    case Objective::word_oriented:
      out.s_final = out.s_word;
      break;
    case Objective::object_oriented:
      out.s_final = out.s_object;
      break;
    case Objective::ensemble:
      out.s_final = scale(tape, add(tape, out.s_word, out.s_object), 0.5);
      break;
  }
  return out;
}

}  // namespace dprnn
