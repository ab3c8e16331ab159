// Copyright (c) 2026 the dprnn authors
// Licensed under the Apache License 2.0.

/**
 * Deterministic synthetic corpus generator with planted correspondence.
 *
 * plain mode: every concept owns a random unit centroid in descriptor
 * space and a unique token. An image samples a few concepts and emits
 * one object per slot (centroid plus Gaussian noise, random boxes); its
 * text lists the same concept tokens shuffled together with fillers.
 *
 * order_sensitive mode plants contrast twins: two images sharing one
 * concept multiset that differ only in how the objects group. In the
 * "together" image the two objects of each concept are one group (they
 * share a within-concept offset); in the "apart" image they are
 * independent draws. The paired texts carry identical token multisets
 * but different adjacency (c c d d vs c d c d), so no single object
 * separates the twins; only joint object modeling can.
 */

#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "dprnn/data.hpp"
#include "dprnn/error.hpp"
#include "dprnn/rng.hpp"

namespace dprnn {

struct SynthSpec {
  std::size_t concepts = 50;
  std::size_t pairs = 1000;      // total image-text pairs across all splits
  std::size_t k = 6;             // objects per image
  std::size_t n = 8;             // maximum text length
  std::size_t dim = 64;          // descriptor width
  double noise = 0.1;            // plain: additive sigma; twins: group spread
  std::string mode = "plain";    // plain | order_sensitive
  std::uint64_t seed = 7;

  // Fractions of the pair count per split, applied in order train/val/test.
  double train_frac = 0.8;
  double val_frac = 0.1;
};

inline constexpr std::size_t kSynthVocabBudget = 50000;

namespace detail {

inline std::vector<double> unit_vector(std::size_t dim, Rng& rng) {
  std::vector<double> v(dim);
  double norm = 0.0;
  for (double& x : v) {
    x = rng.normal();
    norm += x * x;
  }
  norm = std::sqrt(norm);
  if (norm < 1e-12) return unit_vector(dim, rng);
  for (double& x : v) x /= norm;
  return v;
}

inline Tensor random_boxes(std::size_t k, Rng& rng) {
  std::vector<double> b(k * 4);
  for (double& x : b) x = rng.uniform();
  return Tensor(Shape{k, 4}, std::move(b));
}

inline std::vector<std::string> multiset_sorted(std::vector<std::string> v) {
  std::sort(v.begin(), v.end());
  return v;
}

}  // namespace detail

/// Generate a dataset under out_dir: manifest.txt, vocab.txt,
/// captions.txt and features/<image_id>.feat. Bitwise deterministic for
/// a given spec.
inline void synth_generate(const SynthSpec& spec, const std::string& out_dir) {
  if (spec.concepts < 2) {
    throw ValidationError("synth: need at least 2 concepts");
  }
  const std::size_t fillers = std::max<std::size_t>(4, spec.concepts / 5);
  if (spec.concepts + fillers > kSynthVocabBudget) {
    throw ValidationError("synth: concept count " +
                          std::to_string(spec.concepts) +
                          " exceeds the vocabulary budget of " +
                          std::to_string(kSynthVocabBudget));
  }
  const bool twins = spec.mode == "order_sensitive";
  if (!twins && spec.mode != "plain") {
    throw ValidationError("synth: unknown mode '" + spec.mode + "'");
  }
  if (twins) {
    if (spec.k < 2 || spec.k % 2 != 0) {
      throw ValidationError("synth: order_sensitive mode needs an even k");
    }
    if (spec.n < spec.k) {
      throw ValidationError("synth: order_sensitive mode needs n >= k");
    }
  }

  std::filesystem::create_directories(out_dir);
  std::filesystem::create_directories(out_dir + "/features");

  Rng rng(spec.seed);
  Vocabulary vocab;
  for (std::size_t c = 0; c < spec.concepts; ++c)
    vocab.add("c" + std::to_string(c));
  for (std::size_t f = 0; f < fillers; ++f) vocab.add("f" + std::to_string(f));

  std::vector<std::vector<double>> centroids(spec.concepts);
  for (auto& c : centroids) c = detail::unit_vector(spec.dim, rng);

  std::size_t pair_count = spec.pairs;
  if (twins && pair_count % 2 != 0) {
    log_warn("synth: order_sensitive pair count rounded down to even");
    pair_count -= 1;
  }

  std::vector<Caption> captions;
  std::vector<ManifestEntry> entries;
  std::vector<ImageInstance> instances;

  auto emit = [&](std::size_t index, Tensor descriptors, Tensor boxes,
                  std::vector<std::string> tokens) {
    const std::string img_id = "img" + std::to_string(index);
    const std::string txt_id = "txt" + std::to_string(index);
    ImageInstance img;
    img.id = img_id;
    img.descriptors = std::move(descriptors);
    img.boxes = std::move(boxes);
    instances.push_back(std::move(img));
    captions.push_back({txt_id, std::move(tokens)});
    ManifestEntry e;
    e.image_id = img_id;
    e.feature_path = "features/" + img_id + ".feat";
    e.text_ids = {txt_id};
    entries.push_back(std::move(e));
  };

  if (!twins) {
    const std::size_t max_concepts =
        std::min({std::size_t(4), spec.k, spec.n});
    for (std::size_t p = 0; p < pair_count; ++p) {
      const std::size_t m = 1 + rng.index(max_concepts);
      std::vector<std::size_t> pool(spec.concepts);
      for (std::size_t c = 0; c < spec.concepts; ++c) pool[c] = c;
      rng.shuffle(pool);
      pool.resize(m);

      std::vector<std::size_t> slot_concept(spec.k);
      for (std::size_t i = 0; i < spec.k; ++i)
        slot_concept[i] = i < m ? pool[i] : pool[rng.index(m)];

      std::vector<double> desc(spec.k * spec.dim);
      for (std::size_t i = 0; i < spec.k; ++i)
        for (std::size_t t = 0; t < spec.dim; ++t)
          desc[i * spec.dim + t] =
              centroids[slot_concept[i]][t] + spec.noise * rng.normal();

      std::vector<std::string> tokens;
      for (std::size_t c : pool) tokens.push_back("c" + std::to_string(c));
      const std::size_t text_len = m + rng.index(spec.n - m + 1);
      while (tokens.size() < text_len)
        tokens.push_back("f" + std::to_string(rng.index(fillers)));
      rng.shuffle(tokens);
      emit(p, Tensor(Shape{spec.k, spec.dim}, std::move(desc)),
           detail::random_boxes(spec.k, rng), tokens);
    }
  } else {
    const std::size_t groups = spec.k / 2;
    for (std::size_t block = 0; block < pair_count / 2; ++block) {
      std::vector<std::size_t> pool(spec.concepts);
      for (std::size_t c = 0; c < spec.concepts; ++c) pool[c] = c;
      rng.shuffle(pool);
      pool.resize(groups);

      // Shared within-concept state: the "together" image reuses one
      // offset and one box per concept (one visual group holds both
      // objects), the "apart" image draws two of each.
      std::vector<double> together(spec.k * spec.dim);
      std::vector<double> apart(spec.k * spec.dim);
      std::vector<double> together_boxes(spec.k * 4);
      std::vector<double> apart_boxes(spec.k * 4);
      for (std::size_t g = 0; g < groups; ++g) {
        std::vector<double> shared = detail::unit_vector(spec.dim, rng);
        std::vector<double> solo1 = detail::unit_vector(spec.dim, rng);
        std::vector<double> solo2 = detail::unit_vector(spec.dim, rng);
        for (std::size_t t = 0; t < spec.dim; ++t) {
          const double base = centroids[pool[g]][t];
          together[(2 * g) * spec.dim + t] = base + spec.noise * shared[t];
          together[(2 * g + 1) * spec.dim + t] = base + spec.noise * shared[t];
          apart[(2 * g) * spec.dim + t] = base + spec.noise * solo1[t];
          apart[(2 * g + 1) * spec.dim + t] = base + spec.noise * solo2[t];
        }
        for (std::size_t c = 0; c < 4; ++c) {
          const double shared_box = rng.uniform();
          together_boxes[(2 * g) * 4 + c] = shared_box;
          together_boxes[(2 * g + 1) * 4 + c] = shared_box;
          apart_boxes[(2 * g) * 4 + c] = rng.uniform();
          apart_boxes[(2 * g + 1) * 4 + c] = rng.uniform();
        }
      }

      std::vector<std::size_t> order(groups);
      for (std::size_t g = 0; g < groups; ++g) order[g] = g;
      rng.shuffle(order);
      std::vector<std::string> grouped_tokens, split_tokens;
      for (std::size_t g : order) {
        grouped_tokens.push_back("c" + std::to_string(pool[g]));
        grouped_tokens.push_back("c" + std::to_string(pool[g]));
      }
      for (int repeat = 0; repeat < 2; ++repeat)
        for (std::size_t g : order)
          split_tokens.push_back("c" + std::to_string(pool[g]));
      const std::size_t extra = rng.index(spec.n - spec.k + 1);
      for (std::size_t f = 0; f < extra; ++f) {
        const std::string filler = "f" + std::to_string(rng.index(fillers));
        grouped_tokens.push_back(filler);
        split_tokens.push_back(filler);
      }

      // Generator self-check: identical token multisets, different
      // object group counts.
      if (detail::multiset_sorted(grouped_tokens) !=
          detail::multiset_sorted(split_tokens)) {
        throw Error("synth: twin texts lost multiset equality");
      }
      auto distinct_rows = [&](const std::vector<double>& d) {
        std::vector<std::vector<double>> rows;
        for (std::size_t i = 0; i < spec.k; ++i)
          rows.emplace_back(d.begin() + i * spec.dim,
                            d.begin() + (i + 1) * spec.dim);
        std::sort(rows.begin(), rows.end());
        rows.erase(std::unique(rows.begin(), rows.end()), rows.end());
        return rows.size();
      };
      if (spec.noise > 0.0 &&
          distinct_rows(together) >= distinct_rows(apart)) {
        throw Error("synth: twin images lost the grouping contrast");
      }

      emit(2 * block, Tensor(Shape{spec.k, spec.dim}, std::move(together)),
           Tensor(Shape{spec.k, 4}, std::move(together_boxes)),
           grouped_tokens);
      emit(2 * block + 1, Tensor(Shape{spec.k, spec.dim}, std::move(apart)),
           Tensor(Shape{spec.k, 4}, std::move(apart_boxes)), split_tokens);
    }
    pair_count = (pair_count / 2) * 2;
  }

  // Split assignment in block order so order_sensitive twins never
  // straddle a split boundary.
  const std::size_t unit = twins ? 2 : 1;
  const std::size_t blocks_total = pair_count / unit;
  const auto train_blocks =
      std::size_t(std::llround(double(blocks_total) * spec.train_frac));
  const auto val_blocks =
      std::size_t(std::llround(double(blocks_total) * spec.val_frac));
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const std::size_t b = i / unit;
    entries[i].split = b < train_blocks              ? "train"
                       : b < train_blocks + val_blocks ? "val"
                                                       : "test";
  }

  vocab.save(out_dir + "/vocab.txt");
  save_captions(captions, out_dir + "/captions.txt");
  for (std::size_t i = 0; i < instances.size(); ++i)
    save_features(instances[i], out_dir + "/" + entries[i].feature_path);

  std::ofstream manifest(out_dir + "/manifest.txt", std::ios::trunc);
  if (!manifest) {
    throw FormatError(FormatFault::malformed,
                      "synth: cannot write manifest in '" + out_dir + "'");
  }
  manifest << "vocab vocab.txt\n";
  manifest << "captions captions.txt\n";
  for (const ManifestEntry& e : entries) {
    manifest << "image " << e.image_id << " " << e.feature_path << " "
             << e.split << " ";
    for (std::size_t i = 0; i < e.text_ids.size(); ++i) {
      if (i) manifest << ",";
      manifest << e.text_ids[i];
    }
    manifest << "\n";
  }
}

}  // namespace dprnn
