#include "lat/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

#include "autograd.hpp"

namespace lat {

using detail::ConstMatrixMap;
using detail::emit;
using detail::grad_buffer;
using detail::MatrixMap;
using detail::should_record;

// ---- Shape ----------------------------------------------------------------

Shape::Shape(std::initializer_list<std::size_t> extents)
    : Shape(std::span<const std::size_t>(extents.begin(), extents.size())) {}

Shape::Shape(std::span<const std::size_t> extents) {
  if (extents.size() > kMaxRank) {
    throw DimensionError("tensor rank " + std::to_string(extents.size()) + " exceeds " +
                         std::to_string(kMaxRank));
  }
  for (std::size_t i = 0; i < extents.size(); ++i) {
    if (extents[i] == 0) throw DimensionError("tensor extents must be positive");
    extents_[i] = extents[i];
  }
  rank_ = extents.size();
}

std::size_t Shape::numel() const {
  std::size_t n = 1;
  for (std::size_t i = 0; i < rank_; ++i) n *= extents_[i];
  return n;
}

bool Shape::operator==(const Shape& other) const {
  if (rank_ != other.rank_) return false;
  for (std::size_t i = 0; i < rank_; ++i) {
    if (extents_[i] != other.extents_[i]) return false;
  }
  return true;
}

std::string Shape::str() const {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < rank_; ++i) {
    if (i) os << 'x';
    os << extents_[i];
  }
  os << ']';
  return os.str();
}

namespace {

Shape drop_axis(const Shape& s, std::size_t axis) {
  std::array<std::size_t, Shape::kMaxRank> ext{};
  std::size_t r = 0;
  for (std::size_t i = 0; i < s.rank(); ++i) {
    if (i != axis) ext[r++] = s[i];
  }
  return Shape(std::span<const std::size_t>(ext.data(), r));
}

Shape with_axis(const Shape& s, std::size_t axis, std::size_t extent) {
  std::array<std::size_t, Shape::kMaxRank> ext{};
  for (std::size_t i = 0; i < s.rank(); ++i) ext[i] = s[i];
  ext[axis] = extent;
  return Shape(std::span<const std::size_t>(ext.data(), s.rank()));
}

// Splits a shape around `axis` into (outer, axis extent, inner) so that
// element (o, a, i) lives at ((o * len) + a) * inner + i.
struct AxisSplit {
  std::size_t outer = 1;
  std::size_t len = 1;
  std::size_t inner = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit out;
  for (std::size_t i = 0; i < axis; ++i) out.outer *= s[i];
  out.len = s[axis];
  for (std::size_t i = axis + 1; i < s.rank(); ++i) out.inner *= s[i];
  return out;
}

void require_axis(const Shape& s, std::size_t axis, const char* op) {
  if (axis >= s.rank()) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                         " out of range for shape " + s.str());
  }
}

template <typename T>
void require_same_shape(const BasicTensor<T>& a, const BasicTensor<T>& b, const char* op) {
  if (!(a.shape() == b.shape())) {
    throw DimensionError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " +
                         b.shape().str());
  }
}

template <typename T>
thread_local Tape<T>* g_active_tape = nullptr;

}  // namespace

// ---- BasicTensor ----------------------------------------------------------

template <typename T>
BasicTensor<T>::BasicTensor() : impl_(std::make_shared<TensorImpl<T>>()) {
  impl_->data.assign(1, T(0));
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> values, bool requires_grad)
    : impl_(std::make_shared<TensorImpl<T>>()) {
  if (values.size() != shape.numel()) {
    throw DimensionError("tensor of shape " + shape.str() + " needs " +
                         std::to_string(shape.numel()) + " values, got " +
                         std::to_string(values.size()));
  }
  impl_->shape = shape;
  impl_->data = std::move(values);
  impl_->requires_grad = requires_grad;
}

template <typename T>
BasicTensor<T> BasicTensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(shape, T(0), requires_grad);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::full(Shape shape, T value, bool requires_grad) {
  return BasicTensor(shape, std::vector<T>(shape.numel(), value), requires_grad);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::scalar(T value) {
  return BasicTensor(Shape{}, std::vector<T>{value});
}

template <typename T>
T BasicTensor<T>::item() const {
  if (numel() != 1) {
    throw ContractError("item() on tensor of shape " + shape().str());
  }
  return impl_->data[0];
}

template <typename T>
T BasicTensor<T>::at(std::size_t i) const {
  return impl_->data.at(i);
}

template <typename T>
T BasicTensor<T>::at(std::size_t i, std::size_t j) const {
  return impl_->data.at(i * shape().back() + j);
}

template <typename T>
T BasicTensor<T>::at(std::size_t i, std::size_t j, std::size_t k) const {
  return impl_->data.at((i * dim(1) + j) * dim(2) + k);
}

template <typename T>
std::span<T> BasicTensor<T>::mutable_grad() {
  return grad_buffer(*impl_);
}

template <typename T>
void BasicTensor<T>::zero_grad() {
  std::fill(impl_->grad.begin(), impl_->grad.end(), T(0));
}

template <typename T>
BasicTensor<T> BasicTensor<T>::detach() const {
  return BasicTensor(shape(), impl_->data);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::clone() const {
  BasicTensor out(shape(), impl_->data, impl_->requires_grad);
  out.impl_->grad = impl_->grad;
  return out;
}

template <typename T>
template <typename U>
BasicTensor<U> BasicTensor<T>::cast() const {
  std::vector<U> values(impl_->data.begin(), impl_->data.end());
  return BasicTensor<U>(shape(), std::move(values), impl_->requires_grad);
}

// ---- Tape -----------------------------------------------------------------

template <typename T>
Tape<T>::Tape() : previous_(g_active_tape<T>) {
  g_active_tape<T> = this;
}

template <typename T>
Tape<T>::~Tape() {
  g_active_tape<T> = previous_;
}

template <typename T>
Tape<T>* Tape<T>::active() {
  return g_active_tape<T>;
}

template <typename T>
void Tape<T>::record(std::shared_ptr<TensorImpl<T>> output, BackwardFn fn) {
  nodes_.push_back(Node{std::move(output), std::move(fn)});
}

template <typename T>
void Tape<T>::backward(const BasicTensor<T>& loss) {
  if (loss.numel() != 1 || loss.rank() != 0) {
    throw ContractError("backward: loss must be a scalar, got shape " + loss.shape().str());
  }
  const auto on_tape = std::any_of(nodes_.begin(), nodes_.end(),
                                   [&](const Node& n) { return n.output == loss.impl(); });
  if (!on_tape && !loss.requires_grad()) {
    throw ContractError("backward: loss was not produced on the active tape");
  }
  grad_buffer(*loss.impl())[0] += T(1);
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    Node& node = nodes_[i];
    if (observer_) observer_(i);
    if (node.output->grad.empty()) continue;
    node.backward(node.output->grad);
  }
  nodes_.clear();
}

template <typename T>
void backward(const BasicTensor<T>& loss) {
  Tape<T>* tape = Tape<T>::active();
  if (tape == nullptr) throw ContractError("backward: no active tape");
  tape->backward(loss);
}

template <typename T>
void zero_grads(std::span<BasicTensor<T>> tensors) {
  for (auto& t : tensors) t.zero_grad();
}

// ---- operations -----------------------------------------------------------

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.rank() < 2 || a.rank() > 3 || b.rank() != 2 || a.shape().back() != b.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + a.shape().str() + " and " +
                         b.shape().str());
  }
  const auto m = static_cast<Eigen::Index>(a.shape().rows());
  const auto k = static_cast<Eigen::Index>(b.dim(0));
  const auto n = static_cast<Eigen::Index>(b.dim(1));
  std::vector<T> out(static_cast<std::size_t>(m * n));
  MatrixMap<T>(out.data(), m, n).noalias() =
      ConstMatrixMap<T>(a.data().data(), m, k) * ConstMatrixMap<T>(b.data().data(), k, n);

  Shape shape = with_axis(a.shape(), a.rank() - 1, b.dim(1));
  const bool record = should_record<T>({&a, &b});
  return emit<T>(shape, std::move(out), record, "matmul",
                 [ai = a.impl(), bi = b.impl(), m, k, n](std::span<const T> g) {
                   ConstMatrixMap<T> dc(g.data(), m, n);
                   if (ai->requires_grad) {
                     MatrixMap<T>(grad_buffer(*ai).data(), m, k).noalias() +=
                         dc * ConstMatrixMap<T>(bi->data.data(), k, n).transpose();
                   }
                   if (bi->requires_grad) {
                     MatrixMap<T>(grad_buffer(*bi).data(), k, n).noalias() +=
                         ConstMatrixMap<T>(ai->data.data(), m, k).transpose() * dc;
                   }
                 });
}

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a, b, "add");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return emit<T>(a.shape(), std::move(out), should_record<T>({&a, &b}), "add",
                 [ai = a.impl(), bi = b.impl()](std::span<const T> g) {
                   for (auto* p : {ai.get(), bi.get()}) {
                     if (!p->requires_grad) continue;
                     auto& dst = grad_buffer(*p);
                     for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
                   }
                 });
}

template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a, b, "sub");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return emit<T>(a.shape(), std::move(out), should_record<T>({&a, &b}), "sub",
                 [ai = a.impl(), bi = b.impl()](std::span<const T> g) {
                   if (ai->requires_grad) {
                     auto& dst = grad_buffer(*ai);
                     for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
                   }
                   if (bi->requires_grad) {
                     auto& dst = grad_buffer(*bi);
                     for (std::size_t i = 0; i < g.size(); ++i) dst[i] -= g[i];
                   }
                 });
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a, b, "mul");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return emit<T>(a.shape(), std::move(out), should_record<T>({&a, &b}), "mul",
                 [ai = a.impl(), bi = b.impl()](std::span<const T> g) {
                   if (ai->requires_grad) {
                     auto& dst = grad_buffer(*ai);
                     for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * bi->data[i];
                   }
                   if (bi->requires_grad) {
                     auto& dst = grad_buffer(*bi);
                     for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * ai->data[i];
                   }
                 });
}

template <typename T>
BasicTensor<T> add_broadcast(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  bool ok = b.rank() <= a.rank();
  for (std::size_t i = 0; ok && i < b.rank(); ++i) {
    ok = a.dim(a.rank() - b.rank() + i) == b.dim(i);
  }
  if (!ok) {
    throw DimensionError("add_broadcast: cannot broadcast " + b.shape().str() + " onto " +
                         a.shape().str());
  }
  const std::size_t block = b.numel();
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i % block];
  return emit<T>(a.shape(), std::move(out), should_record<T>({&a, &b}), "add_broadcast",
                 [ai = a.impl(), bi = b.impl(), block](std::span<const T> g) {
                   if (ai->requires_grad) {
                     auto& dst = grad_buffer(*ai);
                     for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
                   }
                   if (bi->requires_grad) {
                     auto& dst = grad_buffer(*bi);
                     for (std::size_t i = 0; i < g.size(); ++i) dst[i % block] += g[i];
                   }
                 });
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& x, T factor) {
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * factor;
  return emit<T>(x.shape(), std::move(out), should_record<T>({&x}), "scale",
                 [xi = x.impl(), factor](std::span<const T> g) {
                   auto& dst = grad_buffer(*xi);
                   for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * factor;
                 });
}

template <typename T>
BasicTensor<T> gelu(const BasicTensor<T>& x) {
  constexpr T kInvSqrt2 = T(1) / std::numbers::sqrt2_v<T>;
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T v = x.data()[i];
    out[i] = T(0.5) * v * (T(1) + std::erf(v * kInvSqrt2));
  }
  return emit<T>(x.shape(), std::move(out), should_record<T>({&x}), "gelu",
                 [xi = x.impl()](std::span<const T> g) {
                   constexpr T kInvSqrt2Pi = std::numbers::inv_sqrtpi_v<T> * kInvSqrt2;
                   auto& dst = grad_buffer(*xi);
                   for (std::size_t i = 0; i < g.size(); ++i) {
                     const T v = xi->data[i];
                     const T cdf = T(0.5) * (T(1) + std::erf(v * kInvSqrt2));
                     const T pdf = kInvSqrt2Pi * std::exp(T(-0.5) * v * v);
                     dst[i] += g[i] * (cdf + v * pdf);
                   }
                 });
}

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x) {
  T total = T(0);
  for (const T v : x.data()) total += v;
  return emit<T>(Shape{}, std::vector<T>{total}, should_record<T>({&x}), "sum",
                 [xi = x.impl()](std::span<const T> g) {
                   auto& dst = grad_buffer(*xi);
                   for (auto& d : dst) d += g[0];
                 });
}

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
BasicTensor<T> mean_axis(const BasicTensor<T>& x, std::size_t axis) {
  require_axis(x.shape(), axis, "mean_axis");
  const AxisSplit s = split_at(x.shape(), axis);
  const T inv = T(1) / static_cast<T>(s.len);
  std::vector<T> out(s.outer * s.inner, T(0));
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t a = 0; a < s.len; ++a) {
      const T* src = x.data().data() + (o * s.len + a) * s.inner;
      T* dst = out.data() + o * s.inner;
      for (std::size_t i = 0; i < s.inner; ++i) dst[i] += src[i];
    }
  }
  for (auto& v : out) v *= inv;
  return emit<T>(drop_axis(x.shape(), axis), std::move(out), should_record<T>({&x}),
                 "mean_axis", [xi = x.impl(), s, inv](std::span<const T> g) {
                   auto& dst = grad_buffer(*xi);
                   for (std::size_t o = 0; o < s.outer; ++o) {
                     for (std::size_t a = 0; a < s.len; ++a) {
                       T* d = dst.data() + (o * s.len + a) * s.inner;
                       const T* src = g.data() + o * s.inner;
                       for (std::size_t i = 0; i < s.inner; ++i) d[i] += src[i] * inv;
                     }
                   }
                 });
}

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape) {
  if (shape.numel() != x.numel()) {
    throw DimensionError("reshape: cannot view " + x.shape().str() + " as " + shape.str());
  }
  std::vector<T> out(x.data().begin(), x.data().end());
  return emit<T>(shape, std::move(out), should_record<T>({&x}), "reshape",
                 [xi = x.impl()](std::span<const T> g) {
                   auto& dst = grad_buffer(*xi);
                   for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
                 });
}

template <typename T>
BasicTensor<T> transpose(const BasicTensor<T>& x) {
  if (x.rank() < 2) throw DimensionError("transpose: needs rank >= 2, got " + x.shape().str());
  const std::size_t batch = x.rank() == 3 ? x.dim(0) : 1;
  const std::size_t m = x.dim(x.rank() - 2);
  const std::size_t n = x.dim(x.rank() - 1);
  std::vector<T> out(x.numel());
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        out[b * m * n + j * m + i] = x.data()[b * m * n + i * n + j];
      }
    }
  }
  Shape shape = x.rank() == 3 ? Shape{batch, n, m} : Shape{n, m};
  return emit<T>(shape, std::move(out), should_record<T>({&x}), "transpose",
                 [xi = x.impl(), batch, m, n](std::span<const T> g) {
                   auto& dst = grad_buffer(*xi);
                   for (std::size_t b = 0; b < batch; ++b) {
                     for (std::size_t i = 0; i < m; ++i) {
                       for (std::size_t j = 0; j < n; ++j) {
                         dst[b * m * n + i * n + j] += g[b * m * n + j * m + i];
                       }
                     }
                   }
                 });
}

template <typename T>
BasicTensor<T> concat(std::span<const BasicTensor<T>> parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  const Shape& first = parts[0].shape();
  require_axis(first, axis, "concat");
  std::size_t total = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.rank() == first.rank();
    for (std::size_t i = 0; ok && i < s.rank(); ++i) ok = i == axis || s[i] == first[i];
    if (!ok) {
      throw DimensionError("concat: shape " + s.str() + " incompatible with " + first.str() +
                           " along axis " + std::to_string(axis));
    }
    total += s[axis];
  }
  const Shape shape = with_axis(first, axis, total);
  const AxisSplit out_split = split_at(shape, axis);
  std::vector<T> out(shape.numel());
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  bool record = false;
  for (const auto& p : parts) {
    const AxisSplit s = split_at(p.shape(), axis);
    for (std::size_t o = 0; o < s.outer; ++o) {
      std::copy_n(p.data().data() + o * s.len * s.inner, s.len * s.inner,
                  out.data() + (o * out_split.len + offset) * s.inner);
    }
    offsets.push_back(offset);
    offset += s.len;
    record = record || p.requires_grad();
  }
  record = record && Tape<T>::active() != nullptr;
  std::vector<std::shared_ptr<TensorImpl<T>>> impls;
  for (const auto& p : parts) impls.push_back(p.impl());
  return emit<T>(shape, std::move(out), record, "concat",
                 [impls = std::move(impls), offsets = std::move(offsets), axis,
                  out_split](std::span<const T> g) {
                   for (std::size_t k = 0; k < impls.size(); ++k) {
                     auto& p = *impls[k];
                     if (!p.requires_grad) continue;
                     const AxisSplit s = split_at(p.shape, axis);
                     auto& dst = grad_buffer(p);
                     for (std::size_t o = 0; o < s.outer; ++o) {
                       const T* src = g.data() + (o * out_split.len + offsets[k]) * s.inner;
                       T* d = dst.data() + o * s.len * s.inner;
                       for (std::size_t i = 0; i < s.len * s.inner; ++i) d[i] += src[i];
                     }
                   }
                 });
}

template <typename T>
BasicTensor<T> concat(const BasicTensor<T>& a, const BasicTensor<T>& b, std::size_t axis) {
  const std::array<BasicTensor<T>, 2> parts{a, b};
  return concat<T>(std::span<const BasicTensor<T>>(parts), axis);
}

template <typename T>
BasicTensor<T> slice(const BasicTensor<T>& x, std::size_t axis, std::size_t begin,
                     std::size_t end) {
  require_axis(x.shape(), axis, "slice");
  if (begin >= end || end > x.dim(axis)) {
    throw DimensionError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") invalid for axis " + std::to_string(axis) + " of " +
                         x.shape().str());
  }
  const AxisSplit s = split_at(x.shape(), axis);
  const std::size_t len = end - begin;
  std::vector<T> out(s.outer * len * s.inner);
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(x.data().data() + (o * s.len + begin) * s.inner, len * s.inner,
                out.data() + o * len * s.inner);
  }
  return emit<T>(with_axis(x.shape(), axis, len), std::move(out), should_record<T>({&x}),
                 "slice", [xi = x.impl(), s, begin, len](std::span<const T> g) {
                   auto& dst = grad_buffer(*xi);
                   for (std::size_t o = 0; o < s.outer; ++o) {
                     T* d = dst.data() + (o * s.len + begin) * s.inner;
                     const T* src = g.data() + o * len * s.inner;
                     for (std::size_t i = 0; i < len * s.inner; ++i) d[i] += src[i];
                   }
                 });
}

template <typename T>
BasicTensor<T> select(const BasicTensor<T>& x, std::size_t axis, std::size_t index) {
  return reshape(slice(x, axis, index, index + 1), drop_axis(x.shape(), axis));
}

template <typename T>
BasicTensor<T> gather_rows(const BasicTensor<T>& table, std::span<const std::size_t> indices) {
  if (table.rank() != 2) {
    throw DimensionError("gather_rows: table must be a matrix, got " + table.shape().str());
  }
  if (indices.empty()) throw ContractError("gather_rows: no indices");
  const std::size_t rows = table.dim(0);
  const std::size_t d = table.dim(1);
  std::vector<T> out(indices.size() * d);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= rows) {
      throw DimensionError("gather_rows: index " + std::to_string(indices[r]) +
                           " out of range for " + table.shape().str());
    }
    std::copy_n(table.data().data() + indices[r] * d, d, out.data() + r * d);
  }
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return emit<T>(Shape{indices.size(), d}, std::move(out), should_record<T>({&table}),
                 "gather_rows", [ti = table.impl(), idx = std::move(idx), d](std::span<const T> g) {
                   auto& dst = grad_buffer(*ti);
                   for (std::size_t r = 0; r < idx.size(); ++r) {
                     for (std::size_t j = 0; j < d; ++j) dst[idx[r] * d + j] += g[r * d + j];
                   }
                 });
}

template <typename T>
BasicTensor<T> diagonal(const BasicTensor<T>& x) {
  if (x.rank() != 2) throw DimensionError("diagonal: needs a matrix, got " + x.shape().str());
  const std::size_t n = std::min(x.dim(0), x.dim(1));
  const std::size_t cols = x.dim(1);
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = x.data()[i * cols + i];
  return emit<T>(Shape{n}, std::move(out), should_record<T>({&x}), "diagonal",
                 [xi = x.impl(), cols](std::span<const T> g) {
                   auto& dst = grad_buffer(*xi);
                   for (std::size_t i = 0; i < g.size(); ++i) dst[i * cols + i] += g[i];
                 });
}

template <typename T>
BasicTensor<T> softmax_rows(const BasicTensor<T>& x) {
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.shape().rows();
  std::vector<T> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* src = x.data().data() + r * n;
    T* dst = out.data() + r * n;
    const T peak = *std::max_element(src, src + n);
    T total = T(0);
    for (std::size_t j = 0; j < n; ++j) {
      dst[j] = std::exp(src[j] - peak);
      total += dst[j];
    }
    for (std::size_t j = 0; j < n; ++j) dst[j] /= total;
  }
  std::vector<T> saved = out;
  return emit<T>(x.shape(), std::move(out), should_record<T>({&x}), "softmax_rows",
                 [xi = x.impl(), y = std::move(saved), rows, n](std::span<const T> g) {
                   auto& dst = grad_buffer(*xi);
                   for (std::size_t r = 0; r < rows; ++r) {
                     T dot = T(0);
                     for (std::size_t j = 0; j < n; ++j) dot += g[r * n + j] * y[r * n + j];
                     for (std::size_t j = 0; j < n; ++j) {
                       dst[r * n + j] += y[r * n + j] * (g[r * n + j] - dot);
                     }
                   }
                 });
}

template <typename T>
BasicTensor<T> logsumexp_rows(const BasicTensor<T>& x) {
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.shape().rows();
  std::vector<T> out(rows);
  std::vector<T> weights(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* src = x.data().data() + r * n;
    const T peak = *std::max_element(src, src + n);
    T total = T(0);
    for (std::size_t j = 0; j < n; ++j) {
      weights[r * n + j] = std::exp(src[j] - peak);
      total += weights[r * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) weights[r * n + j] /= total;
    out[r] = peak + std::log(total);
  }
  Shape shape = x.rank() == 0 ? Shape{} : drop_axis(x.shape(), x.rank() - 1);
  return emit<T>(shape, std::move(out), should_record<T>({&x}), "logsumexp_rows",
                 [xi = x.impl(), w = std::move(weights), n](std::span<const T> g) {
                   auto& dst = grad_buffer(*xi);
                   for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i / n] * w[i];
                 });
}

template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gamma,
                          const BasicTensor<T>& beta, T eps) {
  const std::size_t d = x.shape().back();
  if (gamma.numel() != d || beta.numel() != d || gamma.rank() != 1 || beta.rank() != 1) {
    throw DimensionError("layer_norm: gamma/beta " + gamma.shape().str() + "/" +
                         beta.shape().str() + " do not match last extent of " + x.shape().str());
  }
  const std::size_t rows = x.shape().rows();
  std::vector<T> out(x.numel());
  std::vector<T> normalized(x.numel());
  std::vector<T> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* src = x.data().data() + r * d;
    T mu = T(0);
    for (std::size_t j = 0; j < d; ++j) mu += src[j];
    mu /= static_cast<T>(d);
    T var = T(0);
    for (std::size_t j = 0; j < d; ++j) var += (src[j] - mu) * (src[j] - mu);
    var /= static_cast<T>(d);
    inv_std[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      const T xhat = (src[j] - mu) * inv_std[r];
      normalized[r * d + j] = xhat;
      out[r * d + j] = gamma.data()[j] * xhat + beta.data()[j];
    }
  }
  return emit<T>(
      x.shape(), std::move(out), should_record<T>({&x, &gamma, &beta}), "layer_norm",
      [xi = x.impl(), gi = gamma.impl(), bi = beta.impl(), xhat = std::move(normalized),
       inv_std = std::move(inv_std), rows, d](std::span<const T> g) {
        if (gi->requires_grad) {
          auto& dg = grad_buffer(*gi);
          for (std::size_t i = 0; i < rows * d; ++i) dg[i % d] += g[i] * xhat[i];
        }
        if (bi->requires_grad) {
          auto& db = grad_buffer(*bi);
          for (std::size_t i = 0; i < rows * d; ++i) db[i % d] += g[i];
        }
        if (!xi->requires_grad) return;
        auto& dx = grad_buffer(*xi);
        const T inv_d = T(1) / static_cast<T>(d);
        for (std::size_t r = 0; r < rows; ++r) {
          T mean_dxhat = T(0);
          T mean_dxhat_xhat = T(0);
          for (std::size_t j = 0; j < d; ++j) {
            const T dxh = g[r * d + j] * gi->data[j];
            mean_dxhat += dxh;
            mean_dxhat_xhat += dxh * xhat[r * d + j];
          }
          mean_dxhat *= inv_d;
          mean_dxhat_xhat *= inv_d;
          for (std::size_t j = 0; j < d; ++j) {
            const T dxh = g[r * d + j] * gi->data[j];
            dx[r * d + j] +=
                inv_std[r] * (dxh - mean_dxhat - xhat[r * d + j] * mean_dxhat_xhat);
          }
        }
      });
}

template <typename T>
BasicTensor<T> l2_normalize(const BasicTensor<T>& x) {
  const std::size_t d = x.shape().back();
  const std::size_t rows = x.shape().rows();
  std::vector<T> out(x.numel());
  std::vector<T> norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* src = x.data().data() + r * d;
    T sq = T(0);
    for (std::size_t j = 0; j < d; ++j) sq += src[j] * src[j];
    norms[r] = std::sqrt(sq);
    if (!(static_cast<double>(norms[r]) >= kMinNormalizableNorm)) {
      throw DegenerateVectorError("l2_normalize: row " + std::to_string(r) + " has norm " +
                                  std::to_string(static_cast<double>(norms[r])));
    }
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = src[j] / norms[r];
  }
  std::vector<T> y = out;
  return emit<T>(x.shape(), std::move(out), should_record<T>({&x}), "l2_normalize",
                 [xi = x.impl(), y = std::move(y), norms = std::move(norms), rows,
                  d](std::span<const T> g) {
                   auto& dst = grad_buffer(*xi);
                   for (std::size_t r = 0; r < rows; ++r) {
                     T dot = T(0);
                     for (std::size_t j = 0; j < d; ++j) dot += y[r * d + j] * g[r * d + j];
                     for (std::size_t j = 0; j < d; ++j) {
                       dst[r * d + j] += (g[r * d + j] - y[r * d + j] * dot) / norms[r];
                     }
                   }
                 });
}

// ---- instantiations -------------------------------------------------------

#define LAT_INSTANTIATE_TENSOR(T)                                                        \
  template class BasicTensor<T>;                                                          \
  template class Tape<T>;                                                                 \
  template void backward<T>(const BasicTensor<T>&);                                       \
  template void zero_grads<T>(std::span<BasicTensor<T>>);                                 \
  template BasicTensor<T> matmul<T>(const BasicTensor<T>&, const BasicTensor<T>&);        \
  template BasicTensor<T> add<T>(const BasicTensor<T>&, const BasicTensor<T>&);           \
  template BasicTensor<T> sub<T>(const BasicTensor<T>&, const BasicTensor<T>&);           \
  template BasicTensor<T> mul<T>(const BasicTensor<T>&, const BasicTensor<T>&);           \
  template BasicTensor<T> add_broadcast<T>(const BasicTensor<T>&, const BasicTensor<T>&); \
  template BasicTensor<T> scale<T>(const BasicTensor<T>&, T);                             \
  template BasicTensor<T> gelu<T>(const BasicTensor<T>&);                                 \
  template BasicTensor<T> sum<T>(const BasicTensor<T>&);                                  \
  template BasicTensor<T> mean<T>(const BasicTensor<T>&);                                 \
  template BasicTensor<T> mean_axis<T>(const BasicTensor<T>&, std::size_t);               \
  template BasicTensor<T> reshape<T>(const BasicTensor<T>&, Shape);                     \
  template BasicTensor<T> transpose<T>(const BasicTensor<T>&);                            \
  template BasicTensor<T> concat<T>(std::span<const BasicTensor<T>>, std::size_t);        \
  template BasicTensor<T> concat<T>(const BasicTensor<T>&, const BasicTensor<T>&,         \
                                    std::size_t);                                         \
  template BasicTensor<T> slice<T>(const BasicTensor<T>&, std::size_t, std::size_t,       \
                                   std::size_t);                                          \
  template BasicTensor<T> select<T>(const BasicTensor<T>&, std::size_t, std::size_t);     \
  template BasicTensor<T> gather_rows<T>(const BasicTensor<T>&,                           \
                                         std::span<const std::size_t>);                   \
  template BasicTensor<T> diagonal<T>(const BasicTensor<T>&);                             \
  template BasicTensor<T> softmax_rows<T>(const BasicTensor<T>&);                         \
  template BasicTensor<T> logsumexp_rows<T>(const BasicTensor<T>&);                       \
  template BasicTensor<T> layer_norm<T>(const BasicTensor<T>&, const BasicTensor<T>&,     \
                                        const BasicTensor<T>&, T);                        \
  template BasicTensor<T> l2_normalize<T>(const BasicTensor<T>&);

LAT_INSTANTIATE_TENSOR(float)
LAT_INSTANTIATE_TENSOR(double)

template BasicTensor<double> BasicTensor<float>::cast<double>() const;
template BasicTensor<float> BasicTensor<double>::cast<float>() const;
template BasicTensor<float> BasicTensor<float>::cast<float>() const;
template BasicTensor<double> BasicTensor<double>::cast<double>() const;

}  // namespace lat
