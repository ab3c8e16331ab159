// Copyright (c) 2026 the dprnn authors
// Licensed under the Apache License 2.0.

/**
 * Dual encoders into the shared h-dimensional space.
 *
 * Text: learned word embeddings fed through a bi-directional GRU; the
 * word feature is the mean of the forward and backward hidden states.
 * Image: each object descriptor is projected to h dims and gated by a
 * sigmoid projection of its normalized box geometry.
 */

#pragma once

#include <string>
#include <vector>

#include "dprnn/error.hpp"
#include "dprnn/ops.hpp"
#include "dprnn/rng.hpp"
#include "dprnn/tensor.hpp"

namespace dprnn {

/// One image as k object descriptors plus k normalized boxes
/// (width, height, center_x, center_y), all in [0,1].
struct ImageInstance {
  std::string id;
  Tensor descriptors;  // k x D
  Tensor boxes;        // k x 4
};

/// One sentence as a sequence of vocabulary indices.
struct TextInstance {
  std::string id;
  std::vector<std::size_t> tokens;
};

/// Standard gated recurrent unit: update and reset gates plus a tanh
/// candidate computed from the reset-scaled previous hidden state.
struct GruParams {
  Tensor w_update, u_update, b_update;
  Tensor w_reset, u_reset, b_reset;
  Tensor w_cand, u_cand, b_cand;

  std::size_t input_dim() const { return w_update.rows(); }
  std::size_t hidden_dim() const { return w_update.cols(); }

  static GruParams zeros(std::size_t in, std::size_t hid) {
    GruParams p;
    p.w_update = Tensor::zeros({in, hid});
    p.u_update = Tensor::zeros({hid, hid});
    p.b_update = Tensor::zeros({1, hid});
    p.w_reset = Tensor::zeros({in, hid});
    p.u_reset = Tensor::zeros({hid, hid});
    p.b_reset = Tensor::zeros({1, hid});
    p.w_cand = Tensor::zeros({in, hid});
    p.u_cand = Tensor::zeros({hid, hid});
    p.b_cand = Tensor::zeros({1, hid});
    return p;
  }

  static GruParams init(std::size_t in, std::size_t hid, Rng& rng) {
    auto uniform_fan_in = [&rng](std::size_t rows, std::size_t cols) {
      const double limit = 1.0 / std::sqrt(static_cast<double>(rows));
      std::vector<double> v(rows * cols);
      for (double& x : v) x = rng.uniform(-limit, limit);
      return Tensor(Shape{rows, cols}, std::move(v));
    };
    GruParams p;
    p.w_update = uniform_fan_in(in, hid);
    p.u_update = uniform_fan_in(hid, hid);
    p.b_update = Tensor::zeros({1, hid});
    p.w_reset = uniform_fan_in(in, hid);
    p.u_reset = uniform_fan_in(hid, hid);
    p.b_reset = Tensor::zeros({1, hid});
    p.w_cand = uniform_fan_in(in, hid);
    p.u_cand = uniform_fan_in(hid, hid);
    p.b_cand = Tensor::zeros({1, hid});
    return p;
  }
};

/// Projection layers of the image encoder: descriptor -> h and a sigmoid
/// position gate from the 4-dim box.
struct ImageEncoderParams {
  Tensor feature_w;   // D x h
  Tensor feature_b;   // 1 x h
  Tensor position_w;  // 4 x h
  Tensor position_b;  // 1 x h

  std::size_t descriptor_dim() const { return feature_w.rows(); }
  std::size_t embed_dim() const { return feature_w.cols(); }

  static ImageEncoderParams init(std::size_t d_img, std::size_t h, Rng& rng) {
    auto uniform_fan_in = [&rng](std::size_t rows, std::size_t cols) {
      const double limit = 1.0 / std::sqrt(static_cast<double>(rows));
      std::vector<double> v(rows * cols);
      for (double& x : v) x = rng.uniform(-limit, limit);
      return Tensor(Shape{rows, cols}, std::move(v));
    };
    ImageEncoderParams p;
    p.feature_w = uniform_fan_in(d_img, h);
    p.feature_b = Tensor::zeros({1, h});
    p.position_w = uniform_fan_in(4, h);
    p.position_b = Tensor::zeros({1, h});
    return p;
  }
};

/// Embedding table plus the two directions of the text bi-GRU.
struct TextEncoderParams {
  Tensor embedding;  // V x q, learned from scratch
  GruParams forward_gru;
  GruParams backward_gru;

  std::size_t vocab_size() const { return embedding.rows(); }
  std::size_t embed_dim() const { return embedding.cols(); }
  std::size_t hidden_dim() const { return forward_gru.hidden_dim(); }

  static TextEncoderParams init(std::size_t vocab, std::size_t q,
                                std::size_t h, Rng& rng) {
    TextEncoderParams p;
    std::vector<double> e(vocab * q);
    for (double& x : e) x = rng.uniform(-0.1, 0.1);
    p.embedding = Tensor(Shape{vocab, q}, std::move(e));
    p.forward_gru = GruParams::init(q, h, rng);
    p.backward_gru = GruParams::init(q, h, rng);
    return p;
  }
};

/// One GRU step. x is 1 x in, h_prev is 1 x hid; returns 1 x hid:
///   z = sigmoid(xW_z + hU_z + b_z)
///   r = sigmoid(xW_r + hU_r + b_r)
///   c = tanh(xW_c + (r*h)U_c + b_c)
///   h' = (1 - z)*h + z*c
inline Tensor gru_cell(Tape* tape, const GruParams& p, const Tensor& x,
                       const Tensor& h_prev) {
  if (x.rank() != 2 || x.cols() != p.input_dim() || h_prev.rank() != 2 ||
      h_prev.cols() != p.hidden_dim()) {
    throw DimensionError("gru_cell: x " + shape_str(x.shape()) + ", h " +
                         shape_str(h_prev.shape()) + " vs params in=" +
                         std::to_string(p.input_dim()) + " hid=" +
                         std::to_string(p.hidden_dim()));
  }
  Tensor z = sigmoid(
      tape, add_rowvec(tape,
                       add(tape, matmul(tape, x, p.w_update),
                           matmul(tape, h_prev, p.u_update)),
                       p.b_update));
  Tensor r = sigmoid(
      tape, add_rowvec(tape,
                       add(tape, matmul(tape, x, p.w_reset),
                           matmul(tape, h_prev, p.u_reset)),
                       p.b_reset));
  Tensor gated = mul(tape, r, h_prev);
  Tensor cand = tanh(
      tape, add_rowvec(tape,
                       add(tape, matmul(tape, x, p.w_cand),
                           matmul(tape, gated, p.u_cand)),
                       p.b_cand));
  // (1 - z) * h + z * c  ==  h + z * (c - h)
  return add(tape, h_prev, mul(tape, z, sub(tape, cand, h_prev)));
}

/// Run one GRU direction over the rows of xs (n x in), zero initial
/// hidden state; returns the n hidden states as 1 x hid rows.
inline std::vector<Tensor> gru_scan(Tape* tape, const GruParams& p,
                                    const Tensor& xs, bool reversed) {
  const std::size_t n = xs.rows();
  std::vector<Tensor> hidden(n);
  Tensor h = Tensor::zeros({1, p.hidden_dim()});
  for (std::size_t step = 0; step < n; ++step) {
    const std::size_t j = reversed ? n - 1 - step : step;
    Tensor x = gather_rows(tape, xs, {j});
    h = gru_cell(tape, p, x, h);
    hidden[j] = h;
  }
  return hidden;
}

/// Word features (n x h): mean of forward and backward GRU hidden states
/// over the embedded token sequence.
inline Tensor encode_text(Tape* tape, const TextInstance& text,
                          const TextEncoderParams& params) {
  if (text.tokens.empty()) {
    throw ValidationError("encode_text: empty token sequence (id=" + text.id +
                          ")");
  }
  for (std::size_t t : text.tokens) {
    if (t >= params.vocab_size()) {
      throw ValidationError("encode_text: token " + std::to_string(t) +
                            " outside vocabulary of " +
                            std::to_string(params.vocab_size()));
    }
  }
  Tensor xs = gather_rows(tape, params.embedding, text.tokens);
  std::vector<Tensor> fwd = gru_scan(tape, params.forward_gru, xs, false);
  std::vector<Tensor> bwd = gru_scan(tape, params.backward_gru, xs, true);
  std::vector<Tensor> words(text.tokens.size());
  for (std::size_t j = 0; j < words.size(); ++j) {
    words[j] = scale(tape, add(tape, fwd[j], bwd[j]), 0.5);
  }
  return concat_rows(tape, words);
}

/// Object features (k x h): projected descriptor gated elementwise by a
/// sigmoid projection of the normalized box.
inline Tensor encode_image(Tape* tape, const ImageInstance& image,
                           const ImageEncoderParams& params) {
  if (image.descriptors.rank() != 2 || image.boxes.rank() != 2 ||
      image.boxes.cols() != 4 ||
      image.boxes.rows() != image.descriptors.rows()) {
    throw DimensionError("encode_image: descriptors " +
                         shape_str(image.descriptors.shape()) + ", boxes " +
                         shape_str(image.boxes.shape()));
  }
  if (image.descriptors.cols() != params.descriptor_dim()) {
    throw DimensionError("encode_image: descriptor width " +
                         std::to_string(image.descriptors.cols()) +
                         " vs params " +
                         std::to_string(params.descriptor_dim()));
  }
  for (std::size_t i = 0; i < image.boxes.size(); ++i) {
    const double v = image.boxes.at(i);
    if (!(v >= 0.0 && v <= 1.0)) {
      throw ValidationError("encode_image: box coordinate " +
                            std::to_string(v) + " outside [0,1] (id=" +
                            image.id + ")");
    }
  }
  Tensor projected = add_rowvec(
      tape, matmul(tape, image.descriptors, params.feature_w),
      params.feature_b);
  Tensor gate = sigmoid(
      tape, add_rowvec(tape, matmul(tape, image.boxes, params.position_w),
                       params.position_b));
  return mul(tape, projected, gate);
}

}  // namespace dprnn
