// Copyright (c) 2026 the dprnn authors
// Licensed under the Apache License 2.0.

/**
 * On-disk corpus handling.
 *
 * Feature file (all integers and floats little-endian):
 *   bytes 0..7   magic "DPRNFEAT"
 *   bytes 8..11  format version (u32, currently 1)
 *   bytes 12..13 k, object count (u16)
 *   bytes 14..15 descriptor width (u16)
 *   then k*width float32 descriptors row-major,
 *   then k*4 float32 boxes (width, height, center_x, center_y in [0,1]).
 * Total size is exactly 16 + k*(width+4)*4 bytes.
 *
 * Vocabulary: one token per line, line number = id.
 * Captions:  "<text_id> <token> <token> ..." per line.
 * Manifest:  "vocab <path>", "captions <path>", then one
 *            "image <id> <feature_path> <split> <text_id,...>" per image.
 * Paths are relative to the manifest's directory.
 */

#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "dprnn/checkpoint.hpp"
#include "dprnn/encoders.hpp"
#include "dprnn/error.hpp"

namespace dprnn {

inline constexpr char kFeatureMagic[8] = {'D', 'P', 'R', 'N',
                                          'F', 'E', 'A', 'T'};
inline constexpr std::uint32_t kFeatureVersion = 1;

inline std::size_t feature_file_size(std::size_t k, std::size_t width) {
  return 16 + k * (width + 4) * 4;
}

inline void save_features(const ImageInstance& image, const std::string& path) {
  const std::size_t k = image.descriptors.rows();
  const std::size_t width = image.descriptors.cols();
  if (k > 0xffff || width > 0xffff) {
    throw ValidationError("save_features: k or descriptor width exceeds the "
                          "16-bit header field");
  }
  if (image.boxes.rows() != k || image.boxes.cols() != 4) {
    throw DimensionError("save_features: boxes " +
                         shape_str(image.boxes.shape()) + " for k=" +
                         std::to_string(k));
  }
  for (std::size_t i = 0; i < image.boxes.size(); ++i) {
    const double v = image.boxes.at(i);
    if (!(v >= 0.0 && v <= 1.0)) {
      throw ValidationError("save_features: box coordinate outside [0,1]");
    }
  }
  std::string out;
  out.append(kFeatureMagic, 8);
  detail::put_u32(out, kFeatureVersion);
  out.push_back(char(k & 0xff));
  out.push_back(char((k >> 8) & 0xff));
  out.push_back(char(width & 0xff));
  out.push_back(char((width >> 8) & 0xff));
  auto put_f32 = [&out](double v) {
    const float f = static_cast<float>(v);
    char buf[4];
    std::memcpy(buf, &f, 4);
    out.append(buf, 4);
  };
  for (std::size_t i = 0; i < image.descriptors.size(); ++i)
    put_f32(image.descriptors.at(i));
  for (std::size_t i = 0; i < image.boxes.size(); ++i)
    put_f32(image.boxes.at(i));
  detail::write_file_bytes(path, out, "feature file");
}

inline ImageInstance load_features(const std::string& path) {
  const std::string data = detail::read_file_bytes(path, "feature file");
  if (data.size() < 16) {
    throw FormatError(FormatFault::truncated,
                      "feature file '" + path + "': expected at least 16 "
                      "header bytes, got " + std::to_string(data.size()));
  }
  if (std::memcmp(data.data(), kFeatureMagic, 8) != 0) {
    throw FormatError(FormatFault::bad_magic,
                      "feature file '" + path + "': bad magic");
  }
  std::uint32_t version = 0;
  for (int i = 0; i < 4; ++i)
    version |= std::uint32_t(static_cast<unsigned char>(data[8 + i])) << (8 * i);
  if (version != kFeatureVersion) {
    throw FormatError(FormatFault::bad_version,
                      "feature file '" + path + "': version " +
                          std::to_string(version) + " unsupported");
  }
  const std::size_t k = std::size_t(static_cast<unsigned char>(data[12])) |
                        (std::size_t(static_cast<unsigned char>(data[13])) << 8);
  const std::size_t width =
      std::size_t(static_cast<unsigned char>(data[14])) |
      (std::size_t(static_cast<unsigned char>(data[15])) << 8);
  const std::size_t expected = feature_file_size(k, width);
  if (data.size() != expected) {
    throw FormatError(FormatFault::truncated,
                      "feature file '" + path + "': expected " +
                          std::to_string(expected) + " bytes, got " +
                          std::to_string(data.size()));
  }
  auto get_f32 = [&data](std::size_t index) {
    float f;
    std::memcpy(&f, data.data() + 16 + index * 4, 4);
    return static_cast<double>(f);
  };
  std::vector<double> descriptors(k * width), boxes(k * 4);
  for (std::size_t i = 0; i < descriptors.size(); ++i) {
    descriptors[i] = get_f32(i);
    if (!std::isfinite(descriptors[i])) {
      throw FormatError(FormatFault::value_out_of_range,
                        "feature file '" + path + "': non-finite descriptor");
    }
  }
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    boxes[i] = get_f32(descriptors.size() + i);
    if (!(boxes[i] >= 0.0 && boxes[i] <= 1.0)) {
      throw FormatError(FormatFault::value_out_of_range,
                        "feature file '" + path + "': box coordinate " +
                            std::to_string(boxes[i]) + " outside [0,1]");
    }
  }
  ImageInstance out;
  out.id = std::filesystem::path(path).stem().string();
  out.descriptors = Tensor(Shape{k, width}, std::move(descriptors));
  out.boxes = Tensor(Shape{k, 4}, std::move(boxes));
  return out;
}

// ---------------------------------------------------------------------------
// Vocabulary and captions
// ---------------------------------------------------------------------------

struct Vocabulary {
  std::vector<std::string> tokens;
  std::unordered_map<std::string, std::size_t> ids;

  std::size_t size() const { return tokens.size(); }

  std::size_t id(const std::string& token) const {
    auto it = ids.find(token);
    if (it == ids.end()) {
      throw ValidationError("vocabulary: unknown token '" + token + "'");
    }
    return it->second;
  }

  std::size_t add(const std::string& token) {
    auto it = ids.find(token);
    if (it != ids.end()) return it->second;
    tokens.push_back(token);
    ids.emplace(token, tokens.size() - 1);
    return tokens.size() - 1;
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
      throw FormatError(FormatFault::malformed,
                        "vocabulary: cannot write '" + path + "'");
    }
    for (const std::string& t : tokens) out << t << "\n";
  }

  static Vocabulary load(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
      throw FormatError(FormatFault::malformed,
                        "vocabulary: cannot open '" + path + "'");
    }
    Vocabulary v;
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      if (v.ids.count(line)) {
        throw FormatError(FormatFault::malformed,
                          "vocabulary: duplicate token '" + line + "'");
      }
      v.add(line);
    }
    return v;
  }
};

struct Caption {
  std::string id;
  std::vector<std::string> tokens;
};

inline void save_captions(const std::vector<Caption>& captions,
                          const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw FormatError(FormatFault::malformed,
                      "captions: cannot write '" + path + "'");
  }
  for (const Caption& c : captions) {
    out << c.id;
    for (const std::string& t : c.tokens) out << " " << t;
    out << "\n";
  }
}

inline std::vector<Caption> load_captions(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw FormatError(FormatFault::malformed,
                      "captions: cannot open '" + path + "'");
  }
  std::vector<Caption> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream ls(line);
    Caption c;
    ls >> c.id;
    std::string tok;
    while (ls >> tok) c.tokens.push_back(tok);
    if (c.id.empty() || c.tokens.empty()) {
      throw FormatError(FormatFault::malformed,
                        "captions line " + std::to_string(lineno) +
                            ": expected '<id> <token>...'");
    }
    out.push_back(std::move(c));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Manifest and dataset
// ---------------------------------------------------------------------------

struct ManifestEntry {
  std::string image_id;
  std::string feature_path;  // relative to the manifest directory
  std::string split;         // train | val | test
  std::vector<std::string> text_ids;
};

struct DatasetManifest {
  std::string base_dir;
  std::string vocab_path;
  std::string captions_path;
  std::vector<ManifestEntry> images;

  std::string resolve(const std::string& rel) const {
    return (std::filesystem::path(base_dir) / rel).string();
  }

  /// Parse and validate: all referenced files must exist, every image
  /// needs at least one text, and splits must be known.
  static DatasetManifest load(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
      throw FormatError(FormatFault::malformed,
                        "manifest: cannot open '" + path + "'");
    }
    DatasetManifest m;
    m.base_dir = std::filesystem::path(path).parent_path().string();
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty() || line[0] == '#') continue;
      std::istringstream ls(line);
      std::string kind;
      ls >> kind;
      if (kind == "vocab") {
        ls >> m.vocab_path;
      } else if (kind == "captions") {
        ls >> m.captions_path;
      } else if (kind == "image") {
        ManifestEntry e;
        std::string ids;
        ls >> e.image_id >> e.feature_path >> e.split >> ids;
        if (e.image_id.empty() || e.feature_path.empty() || ids.empty()) {
          throw FormatError(FormatFault::malformed,
                            "manifest line " + std::to_string(lineno) +
                                ": expected 'image <id> <path> <split> "
                                "<text_ids>'");
        }
        if (e.split != "train" && e.split != "val" && e.split != "test") {
          throw FormatError(FormatFault::malformed,
                            "manifest line " + std::to_string(lineno) +
                                ": unknown split '" + e.split + "'");
        }
        std::istringstream is(ids);
        std::string one;
        while (std::getline(is, one, ',')) {
          if (!one.empty()) e.text_ids.push_back(one);
        }
        if (e.text_ids.empty()) {
          throw FormatError(FormatFault::malformed,
                            "manifest line " + std::to_string(lineno) +
                                ": image '" + e.image_id +
                                "' has no corresponding texts");
        }
        m.images.push_back(std::move(e));
      } else {
        throw FormatError(FormatFault::malformed,
                          "manifest line " + std::to_string(lineno) +
                              ": unknown directive '" + kind + "'");
      }
    }
    if (m.vocab_path.empty() || m.captions_path.empty()) {
      throw FormatError(FormatFault::malformed,
                        "manifest: vocab and captions paths are required");
    }
    auto must_exist = [&](const std::string& rel, const char* what) {
      if (!std::filesystem::exists(m.resolve(rel))) {
        throw FormatError(FormatFault::malformed,
                          std::string("manifest: ") + what + " '" + rel +
                              "' does not exist");
      }
    };
    must_exist(m.vocab_path, "vocabulary file");
    must_exist(m.captions_path, "captions file");
    for (const ManifestEntry& e : m.images)
      must_exist(e.feature_path, "feature file");
    return m;
  }
};

/// In-memory corpus with correspondence ground truth.
struct Dataset {
  Vocabulary vocab;
  std::vector<ImageInstance> images;
  std::vector<TextInstance> texts;
  std::vector<std::vector<std::size_t>> texts_of_image;
  std::vector<std::size_t> image_of_text;
  std::map<std::string, std::vector<std::size_t>> split_images;

  const std::vector<std::size_t>& images_in(const std::string& split) const {
    static const std::vector<std::size_t> empty;
    auto it = split_images.find(split);
    return it == split_images.end() ? empty : it->second;
  }

  /// Corresponding (image index, text index) pairs of one split, in
  /// manifest order.
  std::vector<std::pair<std::size_t, std::size_t>> pairs(
      const std::string& split) const {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t img : images_in(split))
      for (std::size_t txt : texts_of_image[img]) out.emplace_back(img, txt);
    return out;
  }

  static Dataset load(const std::string& manifest_path) {
    const DatasetManifest manifest = DatasetManifest::load(manifest_path);
    Dataset ds;
    ds.vocab = Vocabulary::load(manifest.resolve(manifest.vocab_path));

    std::unordered_map<std::string, std::size_t> text_index;
    for (const Caption& c :
         load_captions(manifest.resolve(manifest.captions_path))) {
      if (text_index.count(c.id)) {
        throw FormatError(FormatFault::malformed,
                          "captions: duplicate text id '" + c.id + "'");
      }
      TextInstance t;
      t.id = c.id;
      for (const std::string& tok : c.tokens) t.tokens.push_back(ds.vocab.id(tok));
      text_index.emplace(c.id, ds.texts.size());
      ds.texts.push_back(std::move(t));
    }
    ds.image_of_text.assign(ds.texts.size(), 0);
    std::vector<bool> text_used(ds.texts.size(), false);

    std::unordered_set<std::string> image_ids;
    for (const ManifestEntry& e : manifest.images) {
      if (!image_ids.insert(e.image_id).second) {
        throw FormatError(FormatFault::malformed,
                          "manifest: duplicate image id '" + e.image_id + "'");
      }
      ImageInstance img = load_features(manifest.resolve(e.feature_path));
      img.id = e.image_id;
      const std::size_t image_idx = ds.images.size();
      ds.images.push_back(std::move(img));
      ds.texts_of_image.emplace_back();
      for (const std::string& tid : e.text_ids) {
        auto it = text_index.find(tid);
        if (it == text_index.end()) {
          throw FormatError(FormatFault::malformed,
                            "manifest: image '" + e.image_id +
                                "' references unknown text '" + tid + "'");
        }
        if (text_used[it->second]) {
          throw FormatError(FormatFault::malformed,
                            "manifest: text '" + tid +
                                "' corresponds to two images");
        }
        text_used[it->second] = true;
        ds.texts_of_image[image_idx].push_back(it->second);
        ds.image_of_text[it->second] = image_idx;
      }
      ds.split_images[e.split].push_back(image_idx);
    }
    return ds;
  }
};

}  // namespace dprnn
