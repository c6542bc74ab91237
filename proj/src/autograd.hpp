#pragma once

// Helpers shared by the translation units that define differentiable ops.

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "lat/tensor.hpp"

namespace lat::detail {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;

template <typename T>
bool should_record(std::initializer_list<const BasicTensor<T>*> inputs) {
  if (Tape<T>::active() == nullptr) return false;
  for (const auto* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

template <typename T>
std::vector<T>& grad_buffer(TensorImpl<T>& impl) {
  if (impl.grad.empty()) impl.grad.assign(impl.data.size(), T(0));
  return impl.grad;
}

template <typename T>
void check_finite(const std::vector<T>& values, const char* op) {
  for (const T v : values) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string(op) + ": produced a non-finite value");
    }
  }
}

// Wraps freshly computed values into a tensor and, when `record` is set,
// registers `backward` on the active tape.
template <typename T, typename F>
BasicTensor<T> emit(Shape shape, std::vector<T> values, bool record, const char* op,
                    F&& backward) {
  check_finite(values, op);
  BasicTensor<T> out(shape, std::move(values));
  if (record) {
    out.set_requires_grad(true);
    Tape<T>::active()->record(out.impl(), typename Tape<T>::BackwardFn(std::forward<F>(backward)));
  }
  return out;
}

}  // namespace lat::detail
