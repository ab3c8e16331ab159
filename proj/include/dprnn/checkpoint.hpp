// Copyright (c) 2026 the dprnn authors
// Licensed under the Apache License 2.0.

/**
 * Checkpoint container: magic, format version, the config as text, then
 * one block per parameter keyed by module/name with its shape and raw
 * little-endian float64 payload. save(load(x)) reproduces x bitwise.
 */

#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "dprnn/config.hpp"
#include "dprnn/error.hpp"
#include "dprnn/model.hpp"

namespace dprnn {

inline constexpr char kCheckpointMagic[8] = {'D', 'P', 'R', 'N',
                                             'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

class ByteReader {
 public:
  ByteReader(const std::string& data, const std::string& what)
      : data_(data), what_(what) {}

  void need(std::size_t n) const {
    if (pos_ + n > data_.size()) {
      throw FormatError(FormatFault::truncated,
                        what_ + ": truncated, needed " + std::to_string(n) +
                            " bytes at offset " + std::to_string(pos_) +
                            " of " + std::to_string(data_.size()));
    }
  }

  void raw(void* dst, std::size_t n) {
    need(n);
    std::memcpy(dst, data_.data() + pos_, n);
    pos_ += n;
  }

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= std::uint32_t(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }

  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= std::uint64_t(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }

  std::string str(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t pos() const { return pos_; }
  bool exhausted() const { return pos_ == data_.size(); }

 private:
  const std::string& data_;
  std::string what_;
  std::size_t pos_ = 0;
};

inline std::string read_file_bytes(const std::string& path,
                                   const std::string& what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw FormatError(FormatFault::malformed,
                      what + ": cannot open '" + path + "'");
  }
  std::string data((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return data;
}

inline void write_file_bytes(const std::string& path, const std::string& data,
                             const std::string& what) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw FormatError(FormatFault::malformed,
                      what + ": cannot write '" + path + "'");
  }
  out.write(data.data(), std::streamsize(data.size()));
  if (!out) {
    throw FormatError(FormatFault::malformed,
                      what + ": short write to '" + path + "'");
  }
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const ModelParams& params,
                            const Config& cfg) {
  std::string out;
  out.append(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put_u32(out, kCheckpointVersion);
  const std::string cfg_text = cfg.to_text();
  detail::put_u64(out, cfg_text.size());
  out.append(cfg_text);
  const auto named = params.named_params();
  detail::put_u32(out, std::uint32_t(named.size()));
  for (const auto& [name, tensor] : named) {
    detail::put_u32(out, std::uint32_t(name.size()));
    out.append(name);
    detail::put_u32(out, std::uint32_t(tensor->shape().size()));
    for (std::size_t dim : tensor->shape()) detail::put_u64(out, dim);
    const std::size_t bytes = tensor->values().size() * sizeof(double);
    const std::size_t base = out.size();
    out.resize(base + bytes);
    std::memcpy(out.data() + base, tensor->values().data(), bytes);
  }
  detail::write_file_bytes(path, out, "checkpoint");
}

struct LoadedCheckpoint {
  ModelParams params;
  Config config;
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
  const std::string data = detail::read_file_bytes(path, "checkpoint");
  detail::ByteReader in(data, "checkpoint");
  char magic[8];
  in.raw(magic, 8);
  if (std::memcmp(magic, kCheckpointMagic, 8) != 0) {
    throw FormatError(FormatFault::bad_magic,
                      "checkpoint: bad magic in '" + path + "'");
  }
  const std::uint32_t version = in.u32();
  if (version != kCheckpointVersion) {
    throw FormatError(FormatFault::bad_version,
                      "checkpoint: version " + std::to_string(version) +
                          " unsupported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  const std::uint64_t cfg_len = in.u64();
  LoadedCheckpoint out;
  out.config = Config::from_text(in.str(cfg_len));

  const std::uint32_t blocks = in.u32();
  std::map<std::string, Tensor> loaded;
  for (std::uint32_t i = 0; i < blocks; ++i) {
    const std::uint32_t name_len = in.u32();
    const std::string name = in.str(name_len);
    const std::uint32_t rank = in.u32();
    Shape shape(rank);
    for (std::uint32_t r = 0; r < rank; ++r)
      shape[r] = std::size_t(in.u64());
    std::vector<double> values(shape_numel(shape));
    in.raw(values.data(), values.size() * sizeof(double));
    loaded.emplace(name, Tensor(std::move(shape), std::move(values),
                                /*requires_grad=*/true));
  }
  if (!in.exhausted()) {
    throw FormatError(FormatFault::malformed,
                      "checkpoint: " +
                          std::to_string(data.size() - in.pos()) +
                          " trailing bytes in '" + path + "'");
  }

  const auto emb = loaded.find("text_encoder/embedding");
  if (emb == loaded.end()) {
    throw FormatError(FormatFault::malformed,
                      "checkpoint: missing block text_encoder/embedding");
  }
  const std::size_t vocab = emb->second.rows();
  Rng scratch(0);
  out.params = ModelParams::init(out.config, vocab, scratch);
  for (auto& [name, tensor] : out.params.named_params()) {
    auto it = loaded.find(name);
    if (it == loaded.end()) {
      throw FormatError(FormatFault::malformed,
                        "checkpoint: missing block " + name);
    }
    if (it->second.shape() != tensor->shape()) {
      throw FormatError(FormatFault::malformed,
                        "checkpoint: block " + name + " has shape " +
                            shape_str(it->second.shape()) + ", expected " +
                            shape_str(tensor->shape()));
    }
    *tensor = it->second;
    loaded.erase(it);
  }
  if (!loaded.empty()) {
    throw FormatError(FormatFault::malformed,
                      "checkpoint: unknown block " + loaded.begin()->first);
  }
  return out;
}

}  // namespace dprnn
