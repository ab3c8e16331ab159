// Copyright (c) 2026 the dprnn authors
// Licensed under the Apache License 2.0.

/**
 * Dense double-precision arrays with tape-based reverse-mode
 * differentiation. A Tensor is an immutable value plus an optional
 * gradient accumulator; a Tape records the operations of one forward
 * pass and replays them in reverse to propagate adjoints.
 *
 * The operation set is exactly what the matching engine needs (see
 * ops.hpp); there is no general broadcasting and no views. Sums run
 * left to right in index order so repeated passes are bitwise equal.
 */

#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dprnn/error.hpp"

namespace dprnn {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << "x";
    os << s[i];
  }
  os << ")";
  return os.str();
}

struct TensorData {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until backward touches this node
  bool requires_grad = false;
};

class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false) {
    if (shape_numel(shape) != values.size()) {
      throw DimensionError("tensor: shape " + shape_str(shape) + " expects " +
                           std::to_string(shape_numel(shape)) +
                           " values, got " + std::to_string(values.size()));
    }
    d_ = std::make_shared<TensorData>();
    d_->shape = std::move(shape);
    d_->values = std::move(values);
    d_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    std::vector<double> v(shape_numel(shape), 0.0);
    return Tensor(std::move(shape), std::move(v), requires_grad);
  }

  static Tensor full(Shape shape, double value, bool requires_grad = false) {
    std::vector<double> v(shape_numel(shape), value);
    return Tensor(std::move(shape), std::move(v), requires_grad);
  }

  static Tensor scalar(double value, bool requires_grad = false) {
    return Tensor(Shape{1}, std::vector<double>{value}, requires_grad);
  }

  /// Rank-1 vector.
  static Tensor vec(std::vector<double> values, bool requires_grad = false) {
    Shape s{values.size()};
    return Tensor(std::move(s), std::move(values), requires_grad);
  }

  /// 1 x n row matrix.
  static Tensor row(std::vector<double> values, bool requires_grad = false) {
    Shape s{1, values.size()};
    return Tensor(std::move(s), std::move(values), requires_grad);
  }

  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::vector<double> values, bool requires_grad = false) {
    return Tensor(Shape{rows, cols}, std::move(values), requires_grad);
  }

  bool defined() const { return static_cast<bool>(d_); }
  const Shape& shape() const { return d_->shape; }
  std::size_t rank() const { return d_->shape.size(); }
  std::size_t size() const { return d_->values.size(); }
  std::size_t rows() const { return d_->shape.at(0); }
  std::size_t cols() const { return d_->shape.at(1); }

  const std::vector<double>& values() const { return d_->values; }

  double at(std::size_t i) const { return d_->values[i]; }
  double at(std::size_t i, std::size_t j) const {
    return d_->values[i * cols() + j];
  }

  /// Value of a single-element tensor.
  double value() const {
    if (size() != 1) {
      throw ContractError("value(): tensor has " + std::to_string(size()) +
                          " elements, expected 1");
    }
    return d_->values[0];
  }

  bool requires_grad() const { return d_ && d_->requires_grad; }
  void set_requires_grad(bool rg) { d_->requires_grad = rg; }

  bool has_grad() const { return d_ && !d_->grad.empty(); }

  const std::vector<double>& grad() const {
    if (!has_grad()) {
      throw ContractError("grad(): no gradient has been accumulated");
    }
    return d_->grad;
  }

  double grad_at(std::size_t i) const { return grad()[i]; }

  void zero_grad() {
    if (d_) d_->grad.clear();
  }

  const std::shared_ptr<TensorData>& node() const { return d_; }

 private:
  std::shared_ptr<TensorData> d_;
};

/// Per-backward-pass adjoint buffers, keyed by node. Separate from the
/// persistent grad slots so that repeated backward calls accumulate
/// exact multiples instead of compounding stale state.
class GradBuffers {
 public:
  std::vector<double>* find(const TensorData* node) {
    auto it = map_.find(node);
    return it == map_.end() ? nullptr : &it->second;
  }

  std::vector<double>& get(const std::shared_ptr<TensorData>& node) {
    auto it = map_.find(node.get());
    if (it == map_.end()) {
      it = map_.emplace(node.get(), std::vector<double>(node->values.size(), 0.0))
               .first;
      order_.push_back(node);
    }
    return it->second;
  }

  /// Nodes in first-touch order; used to flush adjoints into grad slots.
  const std::vector<std::shared_ptr<TensorData>>& touched() const {
    return order_;
  }

 private:
  std::unordered_map<const TensorData*, std::vector<double>> map_;
  std::vector<std::shared_ptr<TensorData>> order_;
};

/// Ordered record of one forward pass. Each entry is the reverse-mode
/// step of one operation; backward() visits them exactly once, last to
/// first. Tapes are cheap to create and are dropped after backward.
class Tape {
 public:
  using Vjp = std::function<void(GradBuffers&)>;

  void record(Vjp step) { steps_.push_back(std::move(step)); }
  std::size_t size() const { return steps_.size(); }
  bool empty() const { return steps_.empty(); }
  void clear() { steps_.clear(); }
  const std::vector<Vjp>& steps() const { return steps_; }

 private:
  std::vector<Vjp> steps_;
};

/// Propagate d(root)/d(x) into the grad slot of every tensor recorded on
/// the tape that requires gradients. `seed` scales the root adjoint, so a
/// loss term with a hand-computed coefficient can reuse the same pass.
/// Calling backward again without zeroing grads accumulates.
inline void backward(Tape& tape, const Tensor& root, double seed = 1.0) {
  if (!root.defined() || root.size() != 1) {
    throw ContractError("backward: root must be a scalar tensor");
  }
  GradBuffers buffers;
  buffers.get(root.node())[0] = seed;
  const auto& steps = tape.steps();
  for (auto it = steps.rbegin(); it != steps.rend(); ++it) {
    (*it)(buffers);
  }
  for (const auto& node : buffers.touched()) {
    if (!node->requires_grad) continue;
    auto* adj = buffers.find(node.get());
    if (node->grad.empty()) node->grad.assign(node->values.size(), 0.0);
    for (std::size_t i = 0; i < adj->size(); ++i) node->grad[i] += (*adj)[i];
  }
}

}  // namespace dprnn
