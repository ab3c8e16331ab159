// Copyright (c) 2026 the dprnn authors
// Licensed under the Apache License 2.0.

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "dprnn/gradcheck.hpp"
#include "dprnn/matching.hpp"
#include "dprnn/rng.hpp"
#include "oracles.hpp"

using namespace dprnn;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v));
}

oracle::Rows to_rows(const Tensor& m) {
  oracle::Rows rows(m.rows(), std::vector<double>(m.cols()));
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) rows[i][j] = m.at(i, j);
  return rows;
}

MatchingParams params_for(std::size_t h, Rng& rng) {
  MatchingParams p = MatchingParams::init(h, rng);
  p.lambda1 = 9.0;
  p.lambda2 = 4.0;
  p.beta_w = 0.3;
  p.beta_o = 0.3;
  return p;
}

}  // namespace

TEST(Affinity, HandNormalization) {
  // Unit objects with cosines 0.6 and 0.8 to the single unit word.
  Tensor objects = Tensor::matrix(2, 2, {0.6, 0.8, 0.8, 0.6});
  Tensor words = Tensor::matrix(1, 2, {1.0, 0.0});
  Tensor a = object_to_word_affinity(nullptr, objects, words);
  EXPECT_NEAR(a.at(0, 0), 0.6, 1e-7);
  EXPECT_NEAR(a.at(1, 0), 0.8, 1e-7);
}

TEST(Affinity, OrthogonalWordGivesZeroColumn) {
  Tensor objects = Tensor::matrix(2, 3, {1, 0, 0, 0, 1, 0});
  Tensor words = Tensor::matrix(2, 3, {0, 0, 1, -1, -1, 0});
  Tensor a = object_to_word_affinity(nullptr, objects, words);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j) EXPECT_DOUBLE_EQ(a.at(i, j), 0.0);
}

TEST(Affinity, SingleObjectSelfNormalizes) {
  Tensor objects = Tensor::matrix(1, 2, {1.0, 1.0});
  Tensor words = Tensor::matrix(1, 2, {1.0, 0.0});
  Tensor a = object_to_word_affinity(nullptr, objects, words);
  EXPECT_NEAR(a.at(0, 0), 1.0, 1e-6);
}

TEST(Affinity, ColumnsUnitNormProperty) {
  Rng rng(61);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t k = 1 + rng.index(5), n = 1 + rng.index(5),
                      h = 2 + rng.index(4);
    Tensor objects = random_tensor({k, h}, rng);
    Tensor words = random_tensor({n, h}, rng);
    Tensor clamped = relu(nullptr, cosine_matrix(nullptr, objects, words));
    Tensor a = object_to_word_affinity(nullptr, objects, words);
    for (std::size_t j = 0; j < n; ++j) {
      bool positive = false;
      double ss = 0.0;
      for (std::size_t i = 0; i < k; ++i) {
        EXPECT_GE(a.at(i, j), 0.0);
        positive = positive || clamped.at(i, j) > 0.0;
        ss += a.at(i, j) * a.at(i, j);
      }
      if (positive) {
        EXPECT_NEAR(ss, 1.0, 1e-6);
      }
    }
  }
}

TEST(Affinity, ScalingObjectLeavesAffinityUnchanged) {
  Rng rng(67);
  Tensor objects = random_tensor({3, 4}, rng);
  Tensor words = random_tensor({2, 4}, rng);
  Tensor a1 = object_to_word_affinity(nullptr, objects, words);

  std::vector<double> scaled = objects.values();
  for (std::size_t t = 0; t < 4; ++t) scaled[1 * 4 + t] *= 7.5;
  Tensor a2 = object_to_word_affinity(
      nullptr, Tensor(Shape{3, 4}, std::move(scaled)), words);
  // The norm-guard epsilon does not scale with the vectors, so exact
  // invariance holds only up to an O(1e-8) perturbation.
  for (std::size_t i = 0; i < a1.size(); ++i)
    EXPECT_NEAR(a2.at(i), a1.at(i), 1e-7);
}

TEST(Attend, ConstantRowGivesMeanOfWords) {
  Tensor words = Tensor::matrix(3, 2, {1, 0, 0, 1, 1, 1});
  Tensor affinity = Tensor::full({2, 3}, 0.4);
  auto [attended, alpha] = attend_text_per_object(nullptr, words, affinity, 9.0);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_NEAR(attended.at(i, 0), 2.0 / 3.0, 1e-12);
    EXPECT_NEAR(attended.at(i, 1), 2.0 / 3.0, 1e-12);
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(alpha.at(i, j), 1.0 / 3.0, 1e-12);
  }
}

TEST(Attend, SaturationPicksArgmaxWord) {
  Rng rng(71);
  Tensor words = random_tensor({3, 4}, rng);
  Tensor affinity = Tensor::matrix(2, 3, {0.2, 0.9, 0.5, 0.8, 0.1, 0.3});
  auto [attended, alpha] = attend_text_per_object(nullptr, words, affinity, 1e4);
  for (std::size_t t = 0; t < 4; ++t) {
    EXPECT_NEAR(attended.at(0, t), words.at(1, t), 1e-6);
    EXPECT_NEAR(attended.at(1, t), words.at(0, t), 1e-6);
  }
}

TEST(Attend, HandSoftmaxAtPaperTemperature) {
  Tensor words = Tensor::matrix(2, 2, {1, 0, 0, 1});
  Tensor affinity = Tensor::matrix(1, 2, {1.0, 0.0});
  auto [attended, alpha] = attend_text_per_object(nullptr, words, affinity, 9.0);
  EXPECT_NEAR(alpha.at(0, 0), 0.99988, 1e-5);
  EXPECT_NEAR(alpha.at(0, 1), 0.00012, 1e-5);
}

TEST(ObjectTextSimilarity, Cases) {
  Tensor objects = Tensor::matrix(3, 2, {1, 1, 1, 0, 0, 1});
  Tensor attended = Tensor::matrix(3, 2, {1, 1, 0, 1, 0, 2});
  Tensor s = object_text_similarity(nullptr, objects, attended);
  EXPECT_NEAR(s.at(0), 1.0, 1e-7);
  EXPECT_NEAR(s.at(1), 0.0, 1e-12);
  EXPECT_NEAR(s.at(2), 1.0, 1e-7);
  // o = [1,1], t = [1,0] -> 1/sqrt(2)
  Tensor s2 = object_text_similarity(nullptr, Tensor::matrix(1, 2, {1, 1}),
                                     Tensor::matrix(1, 2, {1, 0}));
  EXPECT_NEAR(s2.at(0), 1.0 / std::sqrt(2.0), 1e-7);
}

TEST(Dual, SingleObjectDegenerateAttention) {
  Rng rng(73);
  Tensor objects = random_tensor({1, 4}, rng);
  Tensor words = random_tensor({3, 4}, rng);
  DualSimilarity dual = dual_image_word_similarity(nullptr, objects, words, 4.0);
  for (std::size_t j = 0; j < 3; ++j) {
    EXPECT_DOUBLE_EQ(dual.alpha.at(j, 0), 1.0);
    for (std::size_t t = 0; t < 4; ++t)
      EXPECT_DOUBLE_EQ(dual.attended_image.at(j, t), objects.at(0, t));
    std::vector<double> w(4), o(4);
    for (std::size_t t = 0; t < 4; ++t) {
      w[t] = words.at(j, t);
      o[t] = objects.at(0, t);
    }
    EXPECT_NEAR(dual.image_word_sims.at(j), oracle::cosine(w, o), 1e-12);
  }
}

TEST(Dual, ExactMirrorOfPrimalPath) {
  Rng rng(79);
  Tensor objects = random_tensor({3, 4}, rng);
  Tensor words = random_tensor({2, 4}, rng);
  const double lambda = 5.0;
  DualSimilarity dual = dual_image_word_similarity(nullptr, objects, words, lambda);
  // Swapping the roles maps the dual path onto the primal one.
  Tensor affinity = object_to_word_affinity(nullptr, words, objects);
  auto [attended, alpha] = attend_text_per_object(nullptr, objects, affinity, lambda);
  Tensor sims = object_text_similarity(nullptr, words, attended);
  EXPECT_EQ(dual.affinity.values(), affinity.values());
  EXPECT_EQ(dual.alpha.values(), alpha.values());
  EXPECT_EQ(dual.attended_image.values(), attended.values());
  EXPECT_EQ(dual.image_word_sims.values(), sims.values());
}

TEST(SelfAttention, ZeroBetaAveragesAndSingleton) {
  Rng rng(83);
  Tensor features = random_tensor({4, 3}, rng);
  Tensor attn = random_tensor({1, 3}, rng);
  Tensor w = self_attention_weights(nullptr, features, attn, 0.0);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(w.at(i), 0.25, 1e-12);

  Tensor single = self_attention_weights(nullptr, random_tensor({1, 3}, rng),
                                         attn, 0.7);
  EXPECT_DOUBLE_EQ(single.at(0), 1.0);
}

TEST(SelfAttention, HandArithmetic) {
  // Scores ln 2 and 0 at beta = 1 give weights 2/3 and 1/3.
  Tensor features = Tensor::matrix(2, 1, {std::log(2.0), 0.0});
  Tensor attn = Tensor::matrix(1, 1, {1.0});
  Tensor w = self_attention_weights(nullptr, features, attn, 1.0);
  EXPECT_NEAR(w.at(0), 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(w.at(1), 1.0 / 3.0, 1e-12);
}

TEST(PairSimilarity, ConstantSimilarityCollapses) {
  // All object rows equal: every S(i,T) is the same value, so any convex
  // combination returns it.
  Rng rng(89);
  std::vector<double> row{0.3, -0.7, 0.2};
  std::vector<double> objs;
  for (int i = 0; i < 3; ++i) objs.insert(objs.end(), row.begin(), row.end());
  Tensor objects(Shape{3, 3}, std::move(objs));
  Tensor words = random_tensor({2, 3}, rng);
  MatchingParams p = params_for(3, rng);
  SimilarityBreakdown sim =
      pair_similarity(nullptr, objects, words, p, Objective::ensemble);
  EXPECT_NEAR(sim.s_object.value(), sim.object_text_sims.at(0), 1e-9);
}

TEST(PairSimilarity, WeightedSumHandExample) {
  EXPECT_DOUBLE_EQ(
      dot(nullptr, Tensor::vec({0.25, 0.75}), Tensor::vec({0.4, 0.8})).value(),
      0.7);
}

TEST(PairSimilarity, ZeroBetaObjectAveragesSimilarities) {
  Rng rng(97);
  Tensor objects = random_tensor({4, 3}, rng);
  Tensor words = random_tensor({3, 3}, rng);
  MatchingParams p = params_for(3, rng);
  p.beta_o = 0.0;
  SimilarityBreakdown sim =
      pair_similarity(nullptr, objects, words, p, Objective::object_oriented);
  double mean = 0.0;
  for (std::size_t i = 0; i < 4; ++i) mean += sim.object_text_sims.at(i);
  mean /= 4.0;
  EXPECT_NEAR(sim.s_final.value(), mean, 1e-12);
}

TEST(PairSimilarity, BreakdownInvariants) {
  Rng rng(101);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t k = 1 + rng.index(5), n = 1 + rng.index(5),
                      h = 2 + rng.index(4);
    Tensor objects = random_tensor({k, h}, rng);
    Tensor words = random_tensor({n, h}, rng);
    MatchingParams p = params_for(h, rng);
    SimilarityBreakdown sim =
        pair_similarity(nullptr, objects, words, p, Objective::ensemble);

    auto expect_rows_sum_to_one = [](const Tensor& m) {
      for (std::size_t i = 0; i < m.rows(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < m.cols(); ++j) s += m.at(i, j);
        EXPECT_NEAR(s, 1.0, 1e-9);
      }
    };
    expect_rows_sum_to_one(sim.alpha);
    expect_rows_sum_to_one(sim.alpha_dual);

    double ws = 0.0, os = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      EXPECT_GE(sim.word_weights.at(j), 0.0);
      ws += sim.word_weights.at(j);
    }
    for (std::size_t i = 0; i < k; ++i) {
      EXPECT_GE(sim.object_weights.at(i), 0.0);
      os += sim.object_weights.at(i);
    }
    EXPECT_NEAR(ws, 1.0, 1e-9);
    EXPECT_NEAR(os, 1.0, 1e-9);

    double sw = 0.0, so = 0.0;
    for (std::size_t j = 0; j < n; ++j)
      sw += sim.word_weights.at(j) * sim.image_word_sims.at(j);
    for (std::size_t i = 0; i < k; ++i)
      so += sim.object_weights.at(i) * sim.object_text_sims.at(i);
    EXPECT_NEAR(sim.s_word.value(), sw, 1e-9);
    EXPECT_NEAR(sim.s_object.value(), so, 1e-9);
    EXPECT_LE(std::fabs(sim.s_word.value()), 1.0 + 1e-9);
    EXPECT_LE(std::fabs(sim.s_object.value()), 1.0 + 1e-9);
    EXPECT_NEAR(sim.s_final.value(),
                0.5 * (sim.s_word.value() + sim.s_object.value()), 1e-12);
  }
}

TEST(PairSimilarity, ObjectPermutationInvariance) {
  Rng rng(103);
  Tensor objects = random_tensor({4, 3}, rng);
  Tensor words = random_tensor({3, 3}, rng);
  MatchingParams p = params_for(3, rng);
  SimilarityBreakdown base =
      pair_similarity(nullptr, objects, words, p, Objective::ensemble);

  std::vector<std::size_t> perm{3, 1, 0, 2};
  Tensor shuffled = permute_rows(nullptr, objects, perm);
  SimilarityBreakdown moved =
      pair_similarity(nullptr, shuffled, words, p, Objective::ensemble);
  EXPECT_NEAR(moved.s_word.value(), base.s_word.value(), 1e-12);
  EXPECT_NEAR(moved.s_object.value(), base.s_object.value(), 1e-12);
}

TEST(PairSimilarity, MaskedPaddingIsExact) {
  Rng rng(107);
  const std::size_t k = 3, n = 4, h = 3;
  Tensor objects = random_tensor({k, h}, rng);
  Tensor words = random_tensor({n, h}, rng);
  MatchingParams p = params_for(h, rng);
  SimilarityBreakdown base =
      pair_similarity(nullptr, objects, words, p, Objective::ensemble);

  // Two junk rows appended and masked out.
  std::vector<double> padded = words.values();
  for (int i = 0; i < 2 * static_cast<int>(h); ++i)
    padded.push_back(rng.uniform(-5.0, 5.0));
  Tensor words_padded(Shape{n + 2, h}, std::move(padded));
  std::vector<std::uint8_t> mask{0, 0, 0, 0, 1, 1};
  SimilarityBreakdown got = pair_similarity(nullptr, objects, words_padded, p,
                                            Objective::ensemble, &mask);
  EXPECT_DOUBLE_EQ(got.s_word.value(), base.s_word.value());
  EXPECT_DOUBLE_EQ(got.s_object.value(), base.s_object.value());
  for (std::size_t j = 0; j < 2; ++j) {
    EXPECT_DOUBLE_EQ(got.word_weights.at(n + j), 0.0);
  }
}

TEST(PairSimilarity, BruteForceOracleAgreement) {
  Rng rng(109);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t k = 1 + rng.index(4), n = 1 + rng.index(4),
                      h = 2 + rng.index(2);
    Tensor objects = random_tensor({k, h}, rng);
    Tensor words = random_tensor({n, h}, rng);
    MatchingParams p = params_for(h, rng);

    SimilarityBreakdown sim =
        pair_similarity(nullptr, objects, words, p, Objective::ensemble);
    std::vector<double> wa(h), oa(h);
    for (std::size_t t = 0; t < h; ++t) {
      wa[t] = p.word_attention.at(0, t);
      oa[t] = p.object_attention.at(0, t);
    }
    oracle::PairResult ref =
        oracle::evaluate_pair(to_rows(objects), to_rows(words), p.lambda1,
                              p.lambda2, p.beta_w, p.beta_o, wa, oa);
    EXPECT_NEAR(sim.s_word.value(), ref.s_word, 1e-10);
    EXPECT_NEAR(sim.s_object.value(), ref.s_object, 1e-10);
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        EXPECT_NEAR(sim.affinity.object_to_word.at(i, j), ref.affinity[i][j],
                    1e-10);
        EXPECT_NEAR(sim.alpha.at(i, j), ref.alpha[i][j], 1e-10);
        EXPECT_NEAR(sim.alpha_dual.at(j, i), ref.alpha_dual[j][i], 1e-10);
        EXPECT_NEAR(sim.affinity.word_to_object.at(j, i),
                    ref.affinity_dual[j][i], 1e-10);
      }
    for (std::size_t i = 0; i < k; ++i)
      EXPECT_NEAR(sim.object_text_sims.at(i), ref.object_text_sims[i], 1e-10);
    for (std::size_t j = 0; j < n; ++j)
      EXPECT_NEAR(sim.image_word_sims.at(j), ref.image_word_sims[j], 1e-10);
  }
}

TEST(PairSimilarity, GradCheckFullComposite) {
  Rng rng(113);
  const std::size_t k = 3, n = 3, h = 3;
  Tensor objects = random_tensor({k, h}, rng);
  Tensor words = random_tensor({n, h}, rng);
  Tensor wattn = random_tensor({1, h}, rng);
  Tensor oattn = random_tensor({1, h}, rng);

  auto fn = [&](Tape* tape, const std::vector<Tensor>& xs) {
    MatchingParams p;
    p.word_attention = xs[2];
    p.object_attention = xs[3];
    p.lambda1 = 9.0;
    p.lambda2 = 4.0;
    p.beta_w = 0.3;
    p.beta_o = 0.3;
    return pair_similarity(tape, xs[0], xs[1], p, Objective::ensemble).s_final;
  };
  auto rep = check_gradients("pair_similarity", fn,
                             {objects, words, wattn, oattn});
  EXPECT_LE(rep.max_rel_err, 1e-4);
}
