// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace pairdiff {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

template <typename T>
struct TensorStorage {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until a backward pass touches it
  bool requires_grad = false;

  std::vector<T>& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

}  // namespace detail

/// Dense row-major N-D array with optional participation in the gradient tape.
///
/// Copies are shallow: two handles may refer to the same storage, which is how
/// recorded operations reach their inputs during the backward pass. Values are
/// treated as immutable once a tensor has been used as an op input; only leaves
/// (parameters) are mutated, by initialization and by the optimizer.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  BasicTensor(Shape shape, std::vector<T> data, bool requires_grad = false);

  static BasicTensor zeros(Shape shape, bool requires_grad = false);
  static BasicTensor full(Shape shape, T value, bool requires_grad = false);
  static BasicTensor scalar(T value);

  bool defined() const { return static_cast<bool>(impl_); }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::int64_t dim(std::size_t axis) const;
  std::int64_t numel() const;

  std::span<const T> data() const;
  std::span<T> mutable_data();
  T item() const;

  bool requires_grad() const;
  BasicTensor& set_requires_grad(bool value);
  bool has_grad() const;
  std::span<const T> grad() const;
  std::span<T> mutable_grad();
  void zero_grad();

  /// Deep copy that does not share storage or gradient.
  BasicTensor clone(bool requires_grad = false) const;

  template <typename U>
  BasicTensor<U> cast() const {
    std::vector<U> out(data().begin(), data().end());
    return BasicTensor<U>(shape(), std::move(out));
  }

  const std::shared_ptr<detail::TensorStorage<T>>& storage() const { return impl_; }

 private:
  std::shared_ptr<detail::TensorStorage<T>> impl_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

/// Ordered record of differentiable operations for one forward pass.
///
/// Ops append a node when a tape is active and any input requires a gradient,
/// so nodes are in topological order by construction. `backward` walks them in
/// reverse, visiting each exactly once.
class Tape {
 public:
  struct Node {
    std::string op;
    std::vector<std::shared_ptr<void>> inputs;
    std::shared_ptr<void> output;
    std::function<void()> backward;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(Node node) { nodes_.push_back(std::move(node)); }
  std::size_t size() const { return nodes_.size(); }
  const std::vector<Node>& nodes() const { return nodes_; }
  void clear() { nodes_.clear(); }

  /// Runs every recorded backward rule once, newest first.
  void run_backward();

  /// Tape receiving new nodes on this thread, or nullptr when recording is off.
  static Tape* active();

 private:
  friend class TapeScope;
  friend class NoGradScope;
  std::vector<Node> nodes_;
};

/// Makes `tape` the active tape for the lifetime of the scope. Scopes nest.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

/// Disables recording for the lifetime of the scope.
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* previous_;
};

/// Seeds d(loss)/d(loss) = 1 and runs the active tape backwards. Every leaf with
/// requires_grad accumulates its gradient into grad().
template <typename T>
void backward(const BasicTensor<T>& loss);

/// When enabled, every op checks its output for NaN/Inf and throws NumericalError.
void set_finite_checks(bool enabled);
bool finite_checks_enabled();

}  // namespace pairdiff
