// Copyright (c) 2026 the dprnn authors
// Licensed under the Apache License 2.0.

/**
 * Attention dump: the word-to-object cross attention matrix, the word
 * self-attention weights and the object reordering of one pair as
 * structured text, 6 decimal places, for external heatmap rendering.
 */

#pragma once

#include <iomanip>
#include <ostream>
#include <string>

#include "dprnn/matching.hpp"
#include "dprnn/rve.hpp"

namespace dprnn {

inline void write_attention_dump(std::ostream& os, const std::string& image_id,
                                 const std::string& text_id,
                                 const SimilarityBreakdown& sim,
                                 const Reordering& reordering) {
  os << std::fixed << std::setprecision(6);
  os << "pair image=" << image_id << " text=" << text_id << "\n";
  os << "s_word=" << sim.s_word.value() << "\n";
  os << "s_object=" << sim.s_object.value() << "\n";
  os << "s_final=" << sim.s_final.value() << "\n";
  os << "word_weights:";
  for (std::size_t j = 0; j < sim.word_weights.size(); ++j)
    os << " " << sim.word_weights.at(j);
  os << "\n";
  const std::size_t n = sim.alpha_dual.rows();
  const std::size_t k = sim.alpha_dual.cols();
  os << "alpha_dual rows=" << n << " cols=" << k << "\n";
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < k; ++i) {
      if (i) os << " ";
      os << sim.alpha_dual.at(j, i);
    }
    os << "\n";
  }
  os << "reordering slots=" << reordering.permutation.size() << "\n";
  for (std::size_t r = 0; r < reordering.permutation.size(); ++r) {
    os << "slot=" << r << " object=" << reordering.permutation[r]
       << " anchor=" << reordering.anchor_word[r] << "\n";
  }
}

}  // namespace dprnn
