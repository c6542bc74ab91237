#pragma once

// Dense rank-<=3 tensor with tape-based reverse-mode differentiation.
//
// A BasicTensor is a cheap handle onto shared storage. Operations never
// mutate their inputs; they allocate a new result and, when a Tape is active
// on the calling thread and any input requires a gradient, append a backward
// rule to that tape. Model code runs on BasicTensor<float>; gradient checks
// instantiate the same code with double.

#include <array>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "lat/errors.hpp"

namespace lat {

class Shape {
 public:
  static constexpr std::size_t kMaxRank = 3;

  Shape() = default;  // rank 0, one element
  Shape(std::initializer_list<std::size_t> extents);
  explicit Shape(std::span<const std::size_t> extents);

  std::size_t rank() const { return rank_; }
  std::size_t operator[](std::size_t axis) const { return extents_[axis]; }
  std::size_t back() const { return rank_ == 0 ? 1 : extents_[rank_ - 1]; }
  std::size_t numel() const;
  // Product of every extent except the last; 1 for rank <= 1.
  std::size_t rows() const { return numel() / back(); }

  bool operator==(const Shape& other) const;
  std::string str() const;

 private:
  std::array<std::size_t, kMaxRank> extents_{};
  std::size_t rank_ = 0;
};

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until a gradient is accumulated
  bool requires_grad = false;
};

template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor();
  BasicTensor(Shape shape, std::vector<T> values, bool requires_grad = false);

  static BasicTensor zeros(Shape shape, bool requires_grad = false);
  static BasicTensor full(Shape shape, T value, bool requires_grad = false);
  static BasicTensor scalar(T value);

  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.rank(); }
  std::size_t dim(std::size_t axis) const { return impl_->shape[axis]; }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<const T> data() const { return impl_->data; }
  // Direct write access for initializers and optimizers. Never call while the
  // tensor participates in a recorded computation.
  std::span<T> mutable_data() { return impl_->data; }

  T item() const;
  T at(std::size_t i) const;
  T at(std::size_t i, std::size_t j) const;
  T at(std::size_t i, std::size_t j, std::size_t k) const;

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool flag) { impl_->requires_grad = flag; }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const T> grad() const { return impl_->grad; }
  std::span<T> mutable_grad();
  void zero_grad();

  // Copy of the values with no gradient history.
  BasicTensor detach() const;
  BasicTensor clone() const;
  template <typename U>
  BasicTensor<U> cast() const;

  bool is_same(const BasicTensor& other) const { return impl_ == other.impl_; }
  const std::shared_ptr<TensorImpl<T>>& impl() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl<T>> impl_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

/// Ordered record of differentiable operations executed while the tape is
/// active on the current thread. Constructing a Tape activates it; the
/// previous tape (if any) is restored on destruction.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(std::span<const T> out_grad)>;

  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  void record(std::shared_ptr<TensorImpl<T>> output, BackwardFn fn);

  /// Seeds d(loss)/d(loss) = 1, replays every node in reverse execution
  /// order, accumulates into leaf gradients and clears the tape.
  void backward(const BasicTensor<T>& loss);

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  // Called with each node's execution index as backward visits it.
  void set_visit_observer(std::function<void(std::size_t)> observer) {
    observer_ = std::move(observer);
  }

 private:
  struct Node {
    std::shared_ptr<TensorImpl<T>> output;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  Tape* previous_ = nullptr;
  std::function<void(std::size_t)> observer_;
};

/// Runs backward on the tape active for this thread.
template <typename T>
void backward(const BasicTensor<T>& loss);

template <typename T>
void zero_grads(std::span<BasicTensor<T>> tensors);

// ---- operations -----------------------------------------------------------

// [m x k] . [k x n], or [B x m x k] . [k x n] applied per batch slice.
template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);

// Adds `b` to every trailing block of `a` whose shape equals b's shape
// (bias [d] onto [..., d], token queries [M x d] onto [B x M x d]).
template <typename T>
BasicTensor<T> add_broadcast(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& x, T factor);

// Exact (erf) GELU.
template <typename T>
BasicTensor<T> gelu(const BasicTensor<T>& x);

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x);
template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& x);
// Mean over `axis`; the axis is removed from the shape.
template <typename T>
BasicTensor<T> mean_axis(const BasicTensor<T>& x, std::size_t axis);

// Same values under a new shape with equal element count.
template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape);

// Transpose of a matrix, or of the last two axes of a rank-3 tensor.
template <typename T>
BasicTensor<T> transpose(const BasicTensor<T>& x);

template <typename T>
BasicTensor<T> concat(std::span<const BasicTensor<T>> parts, std::size_t axis);
template <typename T>
BasicTensor<T> concat(const BasicTensor<T>& a, const BasicTensor<T>& b, std::size_t axis);

// Half-open range [begin, end) along `axis`; the axis is kept.
template <typename T>
BasicTensor<T> slice(const BasicTensor<T>& x, std::size_t axis, std::size_t begin,
                     std::size_t end);
// Index `index` along `axis`; the axis is removed.
template <typename T>
BasicTensor<T> select(const BasicTensor<T>& x, std::size_t axis, std::size_t index);

// Rows of a matrix picked by index (embedding lookup).
template <typename T>
BasicTensor<T> gather_rows(const BasicTensor<T>& table, std::span<const std::size_t> indices);

// Main diagonal of a matrix (length min(m, n)).
template <typename T>
BasicTensor<T> diagonal(const BasicTensor<T>& x);

// Row-wise softmax over the last axis, max-subtracted.
template <typename T>
BasicTensor<T> softmax_rows(const BasicTensor<T>& x);
// Row-wise log-sum-exp over the last axis; drops the last axis.
template <typename T>
BasicTensor<T> logsumexp_rows(const BasicTensor<T>& x);

template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gamma,
                          const BasicTensor<T>& beta, T eps);

inline constexpr double kMinNormalizableNorm = 1e-12;

// Unit Euclidean norm along the last axis. Rows with norm below
// kMinNormalizableNorm raise DegenerateVectorError.
template <typename T>
BasicTensor<T> l2_normalize(const BasicTensor<T>& x);

}  // namespace lat
