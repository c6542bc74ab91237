#include "lat/attention.hpp"

#include <algorithm>
#include <cmath>

#include "autograd.hpp"

namespace lat {

using detail::emit;
using detail::grad_buffer;
using detail::RowMatrix;
using detail::should_record;

template <typename T>
BasicTensor<T> xavier_uniform(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  std::vector<T> values(fan_in * fan_out);
  for (auto& v : values) v = static_cast<T>(dist(rng));
  return BasicTensor<T>(Shape{fan_in, fan_out}, std::move(values), true);
}

template <typename T>
BasicTensor<T> gaussian(Shape shape, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<T> values(shape.numel());
  for (auto& v : values) v = static_cast<T>(dist(rng));
  return BasicTensor<T>(shape, std::move(values), true);
}

void AttentionConfig::validate() const {
  if (dim == 0) throw ConfigError("attention: model dimension must be positive");
  if (heads == 0 || dim % heads != 0) {
    throw ConfigError("attention: dimension " + std::to_string(dim) +
                      " is not divisible by head count " + std::to_string(heads));
  }
  if (ffn_multiplier == 0) throw ConfigError("attention: feed-forward multiplier must be positive");
  if (!(layer_norm_eps > 0.0)) throw ConfigError("attention: layer-norm eps must be positive");
}

namespace {

struct AttentionDims {
  std::size_t batch, a, b, d, heads, head_dim;
};

template <typename T>
AttentionDims attention_dims(const BasicTensor<T>& q, const BasicTensor<T>& k,
                             const BasicTensor<T>& v, std::size_t heads) {
  const auto describe = [&] {
    return q.shape().str() + ", " + k.shape().str() + ", " + v.shape().str();
  };
  if (q.rank() != k.rank() || k.rank() != v.rank() || q.rank() < 2 || q.rank() > 3) {
    throw DimensionError("attention: inconsistent ranks " + describe());
  }
  const bool batched = q.rank() == 3;
  AttentionDims dims{};
  dims.batch = batched ? q.dim(0) : 1;
  dims.a = q.dim(q.rank() - 2);
  dims.b = k.dim(k.rank() - 2);
  dims.d = q.shape().back();
  if (k.shape().back() != dims.d || v.shape().back() != dims.d || !(k.shape() == v.shape()) ||
      (batched && k.dim(0) != dims.batch)) {
    throw DimensionError("attention: shape mismatch " + describe());
  }
  if (heads == 0 || dims.d % heads != 0) {
    throw ConfigError("attention: dimension " + std::to_string(dims.d) +
                      " is not divisible by head count " + std::to_string(heads));
  }
  dims.heads = heads;
  dims.head_dim = dims.d / heads;
  return dims;
}

template <typename T>
using BlockMap = Eigen::Map<const RowMatrix<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using MutableBlockMap = Eigen::Map<RowMatrix<T>, 0, Eigen::OuterStride<>>;

// Fills `probs` ([batch][head][a][b]) and, if `out` is non-null, the
// attention output.
template <typename T>
void attention_forward(const AttentionDims& s, const T* q, const T* k, const T* v,
                       std::vector<T>& probs, T* out) {
  const T scale = T(1) / std::sqrt(static_cast<T>(s.head_dim));
  const auto a = static_cast<Eigen::Index>(s.a);
  const auto b = static_cast<Eigen::Index>(s.b);
  const auto hd = static_cast<Eigen::Index>(s.head_dim);
  const Eigen::OuterStride<> stride(static_cast<Eigen::Index>(s.d));
  probs.resize(s.batch * s.heads * s.a * s.b);
  for (std::size_t n = 0; n < s.batch; ++n) {
    for (std::size_t h = 0; h < s.heads; ++h) {
      const std::size_t col = h * s.head_dim;
      BlockMap<T> qh(q + n * s.a * s.d + col, a, hd, stride);
      BlockMap<T> kh(k + n * s.b * s.d + col, b, hd, stride);
      detail::MatrixMap<T> p(probs.data() + (n * s.heads + h) * s.a * s.b, a, b);
      p.noalias() = (qh * kh.transpose()) * scale;
      for (Eigen::Index r = 0; r < a; ++r) {
        const T peak = p.row(r).maxCoeff();
        p.row(r) = (p.row(r).array() - peak).exp();
        p.row(r) /= p.row(r).sum();
      }
      if (out != nullptr) {
        BlockMap<T> vh(v + n * s.b * s.d + col, b, hd, stride);
        MutableBlockMap<T> oh(out + n * s.a * s.d + col, a, hd, stride);
        oh.noalias() = p * vh;
      }
    }
  }
}

}  // namespace

template <typename T>
BasicTensor<T> scaled_dot_product_attention(const BasicTensor<T>& q, const BasicTensor<T>& k,
                                            const BasicTensor<T>& v, std::size_t heads) {
  const AttentionDims s = attention_dims(q, k, v, heads);
  std::vector<T> out(q.numel());
  std::vector<T> probs;
  attention_forward(s, q.data().data(), k.data().data(), v.data().data(), probs, out.data());
  return emit<T>(
      q.shape(), std::move(out), should_record<T>({&q, &k, &v}), "attention",
      [qi = q.impl(), ki = k.impl(), vi = v.impl(), probs = std::move(probs),
       s](std::span<const T> g) {
        const T scale = T(1) / std::sqrt(static_cast<T>(s.head_dim));
        const auto a = static_cast<Eigen::Index>(s.a);
        const auto b = static_cast<Eigen::Index>(s.b);
        const auto hd = static_cast<Eigen::Index>(s.head_dim);
        const Eigen::OuterStride<> stride(static_cast<Eigen::Index>(s.d));
        // Allocate every buffer first: q, k and v may alias one another.
        for (auto* p : {qi.get(), ki.get(), vi.get()}) {
          if (p->requires_grad) grad_buffer(*p);
        }
        RowMatrix<T> dp(a, b);
        for (std::size_t n = 0; n < s.batch; ++n) {
          for (std::size_t h = 0; h < s.heads; ++h) {
            const std::size_t col = h * s.head_dim;
            detail::ConstMatrixMap<T> p(probs.data() + (n * s.heads + h) * s.a * s.b, a, b);
            BlockMap<T> dout(g.data() + n * s.a * s.d + col, a, hd, stride);
            BlockMap<T> qh(qi->data.data() + n * s.a * s.d + col, a, hd, stride);
            BlockMap<T> kh(ki->data.data() + n * s.b * s.d + col, b, hd, stride);
            BlockMap<T> vh(vi->data.data() + n * s.b * s.d + col, b, hd, stride);
            if (vi->requires_grad) {
              MutableBlockMap<T> dv(vi->grad.data() + n * s.b * s.d + col, b, hd, stride);
              dv.noalias() += p.transpose() * dout;
            }
            if (!qi->requires_grad && !ki->requires_grad) continue;
            dp.noalias() = dout * vh.transpose();
            for (Eigen::Index r = 0; r < a; ++r) {
              const T dot = dp.row(r).dot(p.row(r));
              dp.row(r) = (p.row(r).array() * (dp.row(r).array() - dot)).matrix();
            }
            if (qi->requires_grad) {
              MutableBlockMap<T> dq(qi->grad.data() + n * s.a * s.d + col, a, hd, stride);
              dq.noalias() += (dp * kh) * scale;
            }
            if (ki->requires_grad) {
              MutableBlockMap<T> dk(ki->grad.data() + n * s.b * s.d + col, b, hd, stride);
              dk.noalias() += (dp.transpose() * qh) * scale;
            }
          }
        }
      });
}

template <typename T>
std::vector<T> attention_weights(const BasicTensor<T>& q, const BasicTensor<T>& k,
                                 std::size_t heads) {
  const AttentionDims s = attention_dims(q, k, k, heads);
  std::vector<T> probs;
  attention_forward<T>(s, q.data().data(), k.data().data(), nullptr, probs, nullptr);
  return probs;
}

// ---- layers ---------------------------------------------------------------

template <typename T>
LinearLayer<T> LinearLayer<T>::init(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  return LinearLayer{xavier_uniform<T>(in, out, rng), BasicTensor<T>::zeros(Shape{out}, true)};
}

template <typename T>
BasicTensor<T> LinearLayer<T>::forward(const BasicTensor<T>& x) const {
  return add_broadcast(matmul(x, weight), bias);
}

template <typename T>
void LinearLayer<T>::collect_parameters(const std::string& prefix,
                                        ParameterList<T>& out) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

template <typename T>
LayerNormParams<T> LayerNormParams<T>::init(std::size_t dim, double eps) {
  return LayerNormParams{BasicTensor<T>::full(Shape{dim}, T(1), true),
                         BasicTensor<T>::zeros(Shape{dim}, true), static_cast<T>(eps)};
}

template <typename T>
BasicTensor<T> LayerNormParams<T>::forward(const BasicTensor<T>& x) const {
  return layer_norm(x, gamma, beta, eps);
}

template <typename T>
void LayerNormParams<T>::collect_parameters(const std::string& prefix,
                                            ParameterList<T>& out) const {
  out.push_back({prefix + ".gamma", gamma});
  out.push_back({prefix + ".beta", beta});
}

template <typename T>
MultiHeadAttention<T>::MultiHeadAttention(const AttentionConfig& config, std::mt19937_64& rng)
    : q_proj(LinearLayer<T>::init(config.dim, config.dim, rng)),
      k_proj(LinearLayer<T>::init(config.dim, config.dim, rng)),
      v_proj(LinearLayer<T>::init(config.dim, config.dim, rng)),
      out_proj(LinearLayer<T>::init(config.dim, config.dim, rng)),
      heads_(config.heads) {
  config.validate();
}

template <typename T>
BasicTensor<T> MultiHeadAttention<T>::forward(const BasicTensor<T>& q, const BasicTensor<T>& k,
                                              const BasicTensor<T>& v) const {
  return out_proj.forward(scaled_dot_product_attention(q_proj.forward(q), k_proj.forward(k),
                                                       v_proj.forward(v), heads_));
}

template <typename T>
void MultiHeadAttention<T>::collect_parameters(const std::string& prefix,
                                               ParameterList<T>& out) const {
  q_proj.collect_parameters(prefix + ".q_proj", out);
  k_proj.collect_parameters(prefix + ".k_proj", out);
  v_proj.collect_parameters(prefix + ".v_proj", out);
  out_proj.collect_parameters(prefix + ".out_proj", out);
}

template <typename T>
FeedForward<T>::FeedForward(const AttentionConfig& config, std::mt19937_64& rng)
    : expand(LinearLayer<T>::init(config.dim, config.dim * config.ffn_multiplier, rng)),
      contract(LinearLayer<T>::init(config.dim * config.ffn_multiplier, config.dim, rng)) {}

template <typename T>
BasicTensor<T> FeedForward<T>::forward(const BasicTensor<T>& x) const {
  return contract.forward(gelu(expand.forward(x)));
}

template <typename T>
void FeedForward<T>::collect_parameters(const std::string& prefix,
                                        ParameterList<T>& out) const {
  expand.collect_parameters(prefix + ".expand", out);
  contract.collect_parameters(prefix + ".contract", out);
}

template <typename T>
DecoderLayer<T>::DecoderLayer(const AttentionConfig& config, std::mt19937_64& rng)
    : self_attn(config, rng),
      cross_attn(config, rng),
      ffn(config, rng),
      norm1(LayerNormParams<T>::init(config.dim, config.layer_norm_eps)),
      norm2(LayerNormParams<T>::init(config.dim, config.layer_norm_eps)),
      norm3(LayerNormParams<T>::init(config.dim, config.layer_norm_eps)) {}

template <typename T>
BasicTensor<T> DecoderLayer<T>::forward(const BasicTensor<T>& hidden,
                                        const BasicTensor<T>& queries,
                                        const BasicTensor<T>& source) const {
  const BasicTensor<T> guided = add_broadcast(hidden, queries);
  BasicTensor<T> h = norm1.forward(add(hidden, self_attn.forward(guided, guided, hidden)));
  h = norm2.forward(add(h, cross_attn.forward(add_broadcast(h, queries), source, source)));
  return norm3.forward(add(h, ffn.forward(h)));
}

template <typename T>
void DecoderLayer<T>::collect_parameters(const std::string& prefix,
                                         ParameterList<T>& out) const {
  self_attn.collect_parameters(prefix + ".self_attn", out);
  cross_attn.collect_parameters(prefix + ".cross_attn", out);
  ffn.collect_parameters(prefix + ".ffn", out);
  norm1.collect_parameters(prefix + ".norm1", out);
  norm2.collect_parameters(prefix + ".norm2", out);
  norm3.collect_parameters(prefix + ".norm3", out);
}

template <typename T>
DecoderStack<T>::DecoderStack(const AttentionConfig& config, std::size_t depth,
                              std::mt19937_64& rng) {
  config.validate();
  if (depth == 0) throw ConfigError("decoder stack: depth must be at least 1");
  layers_.reserve(depth);
  for (std::size_t i = 0; i < depth; ++i) layers_.emplace_back(config, rng);
}

template <typename T>
BasicTensor<T> DecoderStack<T>::forward(const BasicTensor<T>& queries,
                                        const BasicTensor<T>& source) const {
  if (queries.rank() != 2 || source.rank() < 2 || source.rank() > 3 ||
      queries.dim(1) != source.shape().back()) {
    throw DimensionError("decoder: queries " + queries.shape().str() + " incompatible with source " +
                         source.shape().str());
  }
  const Shape hidden_shape = source.rank() == 3
                                 ? Shape{source.dim(0), queries.dim(0), queries.dim(1)}
                                 : queries.shape();
  BasicTensor<T> hidden = BasicTensor<T>::zeros(hidden_shape);
  for (const auto& layer : layers_) hidden = layer.forward(hidden, queries, source);
  return hidden;
}

template <typename T>
void DecoderStack<T>::collect_parameters(const std::string& prefix,
                                         ParameterList<T>& out) const {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    layers_[i].collect_parameters(prefix + ".layer" + std::to_string(i), out);
  }
}

template <typename T>
EncoderLayer<T>::EncoderLayer(const AttentionConfig& config, std::mt19937_64& rng)
    : self_attn(config, rng),
      ffn(config, rng),
      norm1(LayerNormParams<T>::init(config.dim, config.layer_norm_eps)),
      norm2(LayerNormParams<T>::init(config.dim, config.layer_norm_eps)) {}

template <typename T>
BasicTensor<T> EncoderLayer<T>::forward(const BasicTensor<T>& x) const {
  BasicTensor<T> h = norm1.forward(add(x, self_attn.forward(x, x, x)));
  return norm2.forward(add(h, ffn.forward(h)));
}

template <typename T>
void EncoderLayer<T>::collect_parameters(const std::string& prefix,
                                         ParameterList<T>& out) const {
  self_attn.collect_parameters(prefix + ".self_attn", out);
  ffn.collect_parameters(prefix + ".ffn", out);
  norm1.collect_parameters(prefix + ".norm1", out);
  norm2.collect_parameters(prefix + ".norm2", out);
}

std::size_t decoder_stack_parameter_count(const AttentionConfig& config, std::size_t depth) {
  const std::size_t d = config.dim;
  const std::size_t m = config.ffn_multiplier;
  const std::size_t attention = 4 * d * d + 4 * d;
  const std::size_t ffn = 2 * m * d * d + m * d + d;
  const std::size_t norms = 3 * 2 * d;
  return depth * (2 * attention + ffn + norms);
}

#define LAT_INSTANTIATE_ATTENTION(T)                                                        \
  template BasicTensor<T> xavier_uniform<T>(std::size_t, std::size_t, std::mt19937_64&);   \
  template BasicTensor<T> gaussian<T>(Shape, double, std::mt19937_64&);                    \
  template BasicTensor<T> scaled_dot_product_attention<T>(                                 \
      const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&, std::size_t);   \
  template std::vector<T> attention_weights<T>(const BasicTensor<T>&, const BasicTensor<T>&, \
                                               std::size_t);                               \
  template struct LinearLayer<T>;                                                          \
  template struct LayerNormParams<T>;                                                      \
  template class MultiHeadAttention<T>;                                                    \
  template class FeedForward<T>;                                                           \
  template class DecoderLayer<T>;                                                          \
  template class DecoderStack<T>;                                                          \
  template class EncoderLayer<T>;

LAT_INSTANTIATE_ATTENTION(float)
LAT_INSTANTIATE_ATTENTION(double)

}  // namespace lat
