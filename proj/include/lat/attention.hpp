#pragma once

// Multi-head attention and the query-guided decoder layer (self-attention
// over the hidden state, cross-attention onto source tokens, feed-forward;
// post-norm residuals), plus the self-attention encoder layer used by the
// plain-transformer baseline.

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "lat/parameters.hpp"
#include "lat/tensor.hpp"

namespace lat {

struct AttentionConfig {
  std::size_t dim = 64;
  std::size_t heads = 4;
  std::size_t ffn_multiplier = 4;
  double layer_norm_eps = 1e-5;

  void validate() const;
};

/// Scaled dot-product attention over `heads` column blocks of width
/// dim / heads. q: [a x d] or [B x a x d]; k, v: [b x d] or [B x b x d].
/// Fused op with a hand-written backward rule.
template <typename T>
BasicTensor<T> scaled_dot_product_attention(const BasicTensor<T>& q, const BasicTensor<T>& k,
                                            const BasicTensor<T>& v, std::size_t heads);

/// Attention probabilities of the fused op, laid out [batch][head][a][b].
/// Not differentiable; used for diagnostics.
template <typename T>
std::vector<T> attention_weights(const BasicTensor<T>& q, const BasicTensor<T>& k,
                                 std::size_t heads);

template <typename T>
struct LinearLayer {
  BasicTensor<T> weight;  // [in x out]
  BasicTensor<T> bias;    // [out]

  static LinearLayer init(std::size_t in, std::size_t out, std::mt19937_64& rng);
  BasicTensor<T> forward(const BasicTensor<T>& x) const;
  void collect_parameters(const std::string& prefix, ParameterList<T>& out) const;
};

template <typename T>
struct LayerNormParams {
  BasicTensor<T> gamma;
  BasicTensor<T> beta;
  T eps = T(1e-5);

  static LayerNormParams init(std::size_t dim, double eps);
  BasicTensor<T> forward(const BasicTensor<T>& x) const;
  void collect_parameters(const std::string& prefix, ParameterList<T>& out) const;
};

template <typename T>
class MultiHeadAttention {
 public:
  MultiHeadAttention(const AttentionConfig& config, std::mt19937_64& rng);

  BasicTensor<T> forward(const BasicTensor<T>& q, const BasicTensor<T>& k,
                         const BasicTensor<T>& v) const;
  void collect_parameters(const std::string& prefix, ParameterList<T>& out) const;

  std::size_t heads() const { return heads_; }

  LinearLayer<T> q_proj, k_proj, v_proj, out_proj;

 private:
  std::size_t heads_;
};

template <typename T>
class FeedForward {
 public:
  FeedForward(const AttentionConfig& config, std::mt19937_64& rng);
  BasicTensor<T> forward(const BasicTensor<T>& x) const;  // d -> m*d -> GELU -> d
  void collect_parameters(const std::string& prefix, ParameterList<T>& out) const;

  LinearLayer<T> expand, contract;
};

template <typename T>
class DecoderLayer {
 public:
  DecoderLayer(const AttentionConfig& config, std::mt19937_64& rng);

  /// hidden: [M x d] or [B x M x d]; queries: [M x d]; source: [L x d] or
  /// [B x L x d]. The token queries are added to the attention inputs
  /// (self-attention Q/K and cross-attention Q), never to the values.
  BasicTensor<T> forward(const BasicTensor<T>& hidden, const BasicTensor<T>& queries,
                         const BasicTensor<T>& source) const;
  void collect_parameters(const std::string& prefix, ParameterList<T>& out) const;

  MultiHeadAttention<T> self_attn;
  MultiHeadAttention<T> cross_attn;
  FeedForward<T> ffn;
  LayerNormParams<T> norm1, norm2, norm3;
};

template <typename T>
class DecoderStack {
 public:
  DecoderStack(const AttentionConfig& config, std::size_t depth, std::mt19937_64& rng);

  /// Hidden state starts at zero and passes through every layer in order.
  /// Output is [M x d] for a rank-2 source and [B x M x d] for rank 3.
  BasicTensor<T> forward(const BasicTensor<T>& queries, const BasicTensor<T>& source) const;
  void collect_parameters(const std::string& prefix, ParameterList<T>& out) const;

  std::size_t depth() const { return layers_.size(); }
  const DecoderLayer<T>& layer(std::size_t i) const { return layers_.at(i); }

 private:
  std::vector<DecoderLayer<T>> layers_;
};

template <typename T>
class EncoderLayer {
 public:
  EncoderLayer(const AttentionConfig& config, std::mt19937_64& rng);
  BasicTensor<T> forward(const BasicTensor<T>& x) const;
  void collect_parameters(const std::string& prefix, ParameterList<T>& out) const;

  MultiHeadAttention<T> self_attn;
  FeedForward<T> ffn;
  LayerNormParams<T> norm1, norm2;
};

/// Closed-form parameter count of a decoder stack:
///   depth * (2 * (4 d^2 + 4 d) + (2 m d^2 + m d + d) + 3 * 2 d)
/// where m is the feed-forward multiplier.
std::size_t decoder_stack_parameter_count(const AttentionConfig& config, std::size_t depth);

}  // namespace lat
