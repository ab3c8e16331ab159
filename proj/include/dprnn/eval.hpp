// Copyright (c) 2026 the dprnn authors
// Licensed under the Apache License 2.0.

/**
 * Retrieval evaluation: full query-by-candidate similarity matrices per
 * fold (the recurrent pass runs for every pair; early selection is a
 * training-only device), recall at K in both directions, fold averaging,
 * and a line-oriented key=value report.
 */

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "dprnn/data.hpp"
#include "dprnn/log.hpp"
#include "dprnn/model.hpp"

namespace dprnn {

/// Percentage of queries whose any correct candidate ranks in the top K
/// by similarity; ties resolve to the smaller candidate index. K larger
/// than the candidate count is clamped with a warning.
inline double recall_at_k(const std::vector<std::vector<double>>& sim,
                          const std::vector<std::vector<std::size_t>>& truth,
                          std::size_t K) {
  if (sim.empty()) {
    throw ValidationError("recall_at_k: no queries");
  }
  const std::size_t candidates = sim.front().size();
  if (K > candidates) {
    log_warn("recall_at_k: K=" + std::to_string(K) + " clamped to " +
             std::to_string(candidates) + " candidates");
    K = candidates;
  }
  std::size_t hits = 0;
  for (std::size_t q = 0; q < sim.size(); ++q) {
    if (truth[q].empty()) {
      throw ValidationError("recall_at_k: query " + std::to_string(q) +
                            " has no correct candidate");
    }
    bool hit = false;
    for (std::size_t c : truth[q]) {
      // Rank of candidate c: one plus the number of strictly better
      // candidates, where earlier indices win ties.
      std::size_t rank = 1;
      for (std::size_t other = 0; other < candidates; ++other) {
        if (other == c) continue;
        if (sim[q][other] > sim[q][c] ||
            (sim[q][other] == sim[q][c] && other < c)) {
          ++rank;
        }
      }
      if (rank <= K) {
        hit = true;
        break;
      }
    }
    if (hit) ++hits;
  }
  return 100.0 * double(hits) / double(sim.size());
}

struct FoldRecall {
  double sent_r1 = 0.0, sent_r5 = 0.0, sent_r10 = 0.0;
  double img_r1 = 0.0, img_r5 = 0.0, img_r10 = 0.0;
};

struct RecallReport {
  std::size_t queries_sentence = 0;
  std::size_t queries_image = 0;
  std::vector<FoldRecall> folds;
  FoldRecall mean;

  std::string to_text() const {
    std::ostringstream os;
    os << std::fixed << std::setprecision(6);
    os << "queries_sentence=" << queries_sentence << "\n";
    os << "queries_image=" << queries_image << "\n";
    os << "folds=" << folds.size() << "\n";
    auto row = [&os](const std::string& tag, const FoldRecall& f) {
      os << tag << " sent_r1=" << f.sent_r1 << " sent_r5=" << f.sent_r5
         << " sent_r10=" << f.sent_r10 << " img_r1=" << f.img_r1
         << " img_r5=" << f.img_r5 << " img_r10=" << f.img_r10 << "\n";
    };
    for (std::size_t i = 0; i < folds.size(); ++i)
      row("fold=" + std::to_string(i + 1), folds[i]);
    row("mean", mean);
    return os.str();
  }
};

/// One scoring configuration; the ensemble averages the final scores of
/// all entries pairwise.
struct EvalModel {
  const ModelParams* params = nullptr;
  Objective objective = Objective::ensemble;
  RvePath rve_path = RvePath::enabled;
};

/// Score text t against image b under every model and average.
inline double ensemble_score(const std::vector<EvalModel>& models,
                             const ImageInstance& image,
                             const TextInstance& text) {
  double sum = 0.0;
  for (const EvalModel& m : models) {
    sum += score_pair(nullptr, *m.params, image, text, m.objective, m.rve_path)
               .sim.s_final.value();
  }
  return sum / double(models.size());
}

/// Fold-averaged R@K over one split. Images are cut into `folds`
/// consecutive folds; a remainder that does not fill a fold is dropped
/// with a warning. Sentence retrieval queries each fold image against
/// the fold's texts; image retrieval queries each text against the
/// fold's images.
inline RecallReport evaluate(const std::vector<EvalModel>& models,
                             const Dataset& ds, const std::string& split,
                             std::size_t folds) {
  if (models.empty()) {
    throw ValidationError("evaluate: no models");
  }
  const std::vector<std::size_t>& split_imgs = ds.images_in(split);
  if (split_imgs.empty()) {
    throw ValidationError("evaluate: split '" + split + "' is empty");
  }
  if (folds == 0) folds = 1;
  const std::size_t fold_size = split_imgs.size() / folds;
  if (fold_size == 0) {
    throw ValidationError("evaluate: more folds than images");
  }
  if (fold_size * folds != split_imgs.size()) {
    log_warn("evaluate: dropping " +
             std::to_string(split_imgs.size() - fold_size * folds) +
             " images that do not fill the last fold");
  }

  RecallReport report;
  for (std::size_t f = 0; f < folds; ++f) {
    std::vector<std::size_t> fold_images(
        split_imgs.begin() + f * fold_size,
        split_imgs.begin() + (f + 1) * fold_size);
    std::vector<std::size_t> fold_texts;
    std::vector<std::vector<std::size_t>> texts_of(fold_images.size());
    std::vector<std::size_t> image_of;
    for (std::size_t bi = 0; bi < fold_images.size(); ++bi) {
      for (std::size_t t : ds.texts_of_image[fold_images[bi]]) {
        texts_of[bi].push_back(fold_texts.size());
        image_of.push_back(bi);
        fold_texts.push_back(t);
      }
    }

    // Full text-by-image similarity matrix for this fold.
    std::vector<std::vector<double>> sim(
        fold_texts.size(), std::vector<double>(fold_images.size(), 0.0));
    for (std::size_t ti = 0; ti < fold_texts.size(); ++ti)
      for (std::size_t bi = 0; bi < fold_images.size(); ++bi)
        sim[ti][bi] = ensemble_score(models, ds.images[fold_images[bi]],
                                     ds.texts[fold_texts[ti]]);

    // Image retrieval: text queries rank images.
    std::vector<std::vector<std::size_t>> truth_img(fold_texts.size());
    for (std::size_t ti = 0; ti < fold_texts.size(); ++ti)
      truth_img[ti] = {image_of[ti]};

    // Sentence retrieval: image queries rank texts.
    std::vector<std::vector<double>> sim_t(
        fold_images.size(), std::vector<double>(fold_texts.size(), 0.0));
    for (std::size_t ti = 0; ti < fold_texts.size(); ++ti)
      for (std::size_t bi = 0; bi < fold_images.size(); ++bi)
        sim_t[bi][ti] = sim[ti][bi];

    FoldRecall fr;
    fr.sent_r1 = recall_at_k(sim_t, texts_of, 1);
    fr.sent_r5 = recall_at_k(sim_t, texts_of, 5);
    fr.sent_r10 = recall_at_k(sim_t, texts_of, 10);
    fr.img_r1 = recall_at_k(sim, truth_img, 1);
    fr.img_r5 = recall_at_k(sim, truth_img, 5);
    fr.img_r10 = recall_at_k(sim, truth_img, 10);
    report.folds.push_back(fr);
    report.queries_sentence += fold_images.size();
    report.queries_image += fold_texts.size();
  }

  for (const FoldRecall& f : report.folds) {
    report.mean.sent_r1 += f.sent_r1;
    report.mean.sent_r5 += f.sent_r5;
    report.mean.sent_r10 += f.sent_r10;
    report.mean.img_r1 += f.img_r1;
    report.mean.img_r5 += f.img_r5;
    report.mean.img_r10 += f.img_r10;
  }
  const double nf = double(report.folds.size());
  report.mean.sent_r1 /= nf;
  report.mean.sent_r5 /= nf;
  report.mean.sent_r10 /= nf;
  report.mean.img_r1 /= nf;
  report.mean.img_r5 /= nf;
  report.mean.img_r10 /= nf;
  return report;
}

/// Top-K retrieval for one query id (an image id retrieves texts, a text
/// id retrieves images) over a split.
inline std::vector<std::pair<std::string, double>> retrieve_top_k(
    const std::vector<EvalModel>& models, const Dataset& ds,
    const std::string& split, const std::string& query_id, std::size_t top_k) {
  const std::vector<std::size_t>& split_imgs = ds.images_in(split);
  std::vector<std::pair<std::string, double>> scored;

  // Image query: rank the split's texts.
  for (std::size_t img : split_imgs) {
    if (ds.images[img].id != query_id) continue;
    for (std::size_t b : split_imgs)
      for (std::size_t t : ds.texts_of_image[b])
        scored.emplace_back(ds.texts[t].id,
                            ensemble_score(models, ds.images[img], ds.texts[t]));
  }
  if (scored.empty()) {
    // Text query: rank the split's images.
    for (std::size_t b : split_imgs) {
      for (std::size_t t : ds.texts_of_image[b]) {
        if (ds.texts[t].id != query_id) continue;
        for (std::size_t c : split_imgs)
          scored.emplace_back(
              ds.images[c].id,
              ensemble_score(models, ds.images[c], ds.texts[t]));
      }
    }
  }
  if (scored.empty()) {
    throw ValidationError("retrieve: query id '" + query_id +
                          "' not found in split '" + split + "'");
  }
  std::stable_sort(scored.begin(), scored.end(),
                   [](const auto& a, const auto& b) {
                     return a.second > b.second;
                   });
  if (scored.size() > top_k) scored.resize(top_k);
  return scored;
}

}  // namespace dprnn
