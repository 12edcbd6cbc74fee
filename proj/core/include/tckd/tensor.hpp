// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace tckd {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class GraphError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

namespace detail {

struct TensorNode {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;

  std::span<double> grad_buffer();  // allocates zeros on demand
};

}  // namespace detail

/// Dense row-major float64 array. Copies share storage; use clone() for a
/// deep copy. Operations on tensors that require gradients append a node to
/// the calling thread's tape.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t numel() const;
  std::size_t rank() const { return shape().size(); }
  // Rows/cols treat a rank-1 tensor as a single row.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t r, std::size_t c) const;

  bool requires_grad() const;
  void set_requires_grad(bool on);

  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> grad_buffer();
  void zero_grad();
  void clear_grad();

  Tensor clone() const;   // deep copy of data, same requires_grad, no grad
  Tensor detach() const;  // deep copy, requires_grad = false

  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

  // Internal: used by ops to wire the tape.
  const std::shared_ptr<detail::TensorNode>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::TensorNode> n) : node_(std::move(n)) {}

 private:
  std::shared_ptr<detail::TensorNode> node_;
};

// ---------------------------------------------------------------------------
// Tape. One per thread; rebuilt on every forward pass.

using BackwardFn = std::function<void()>;

bool grad_enabled();

/// Disables tape recording in scope (evaluation and frozen feature extraction).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

/// True if the output of an op on `inputs` must be recorded.
bool needs_record(std::initializer_list<const Tensor*> inputs);

void record(const Tensor& output, BackwardFn fn);
std::size_t tape_size();
void clear_tape();

/// Reverse-mode sweep from a scalar loss. Accumulates into the grad buffer of
/// every reachable tensor that requires gradients, then clears the tape.
void backward(const Tensor& loss);

}  // namespace tckd
