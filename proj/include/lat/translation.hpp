#pragma once

// Latent translators between the visual space V and the textual space T.
//
//   G : T -> V  (guided by its own token queries)
//   F : V -> T
//
// The query-guided decoder emits one output token per token query; row 0 is
// the global (CLS-equivalent) token, rows 1..M-1 are detail tokens. The
// ablation baselines emit a two-token layout [global, pooled detail].

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>

#include "lat/attention.hpp"
#include "lat/parameters.hpp"
#include "lat/tensor.hpp"

namespace lat {

enum class Direction { kTextToVisual, kVisualToText };
enum class TranslationMethod { kNone, kLinear, kTransformer, kDecoder };

std::string to_string(Direction direction);
std::string to_string(TranslationMethod method);
TranslationMethod parse_method(std::string_view name);

template <typename T>
class TranslationNetwork {
 public:
  explicit TranslationNetwork(Direction direction) : direction_(direction) {}
  virtual ~TranslationNetwork() = default;

  /// source: [L x d] or [B x L x d]; result keeps the batch axis.
  virtual BasicTensor<T> forward(const BasicTensor<T>& source) const = 0;
  virtual void collect_parameters(const std::string& prefix, ParameterList<T>& out) const = 0;
  virtual TranslationMethod method() const = 0;
  virtual std::size_t dim() const = 0;

  Direction direction() const { return direction_; }

 protected:
  void check_source(const BasicTensor<T>& source) const;

 private:
  Direction direction_;
};

/// Query-guided decoder translator.
template <typename T>
class QueryTranslator final : public TranslationNetwork<T> {
 public:
  QueryTranslator(Direction direction, const AttentionConfig& attention, std::size_t depth,
                  std::size_t query_count, double query_init_std, std::mt19937_64& rng);

  BasicTensor<T> forward(const BasicTensor<T>& source) const override;
  void collect_parameters(const std::string& prefix, ParameterList<T>& out) const override;
  TranslationMethod method() const override { return TranslationMethod::kDecoder; }
  std::size_t dim() const override { return token_queries.dim(1); }

  BasicTensor<T> token_queries;  // [M x d]
  DecoderStack<T> stack;
};

/// [token 0, mean of tokens 1..L-1] per item; a single token when L == 1.
template <typename T>
BasicTensor<T> pool_global_and_detail(const BasicTensor<T>& tokens);

/// "None": the pooled source layout, untouched.
template <typename T>
class PassthroughTranslator final : public TranslationNetwork<T> {
 public:
  PassthroughTranslator(Direction direction, std::size_t dim)
      : TranslationNetwork<T>(direction), dim_(dim) {}

  BasicTensor<T> forward(const BasicTensor<T>& source) const override;
  void collect_parameters(const std::string&, ParameterList<T>&) const override {}
  TranslationMethod method() const override { return TranslationMethod::kNone; }
  std::size_t dim() const override { return dim_; }

 private:
  std::size_t dim_;
};

/// "Linear": a stack of affine maps (GELU between them unless disabled)
/// applied to the pooled source layout.
template <typename T>
class LinearTranslator final : public TranslationNetwork<T> {
 public:
  LinearTranslator(Direction direction, std::size_t dim, std::size_t layers, bool activation,
                   std::mt19937_64& rng);

  BasicTensor<T> forward(const BasicTensor<T>& source) const override;
  void collect_parameters(const std::string& prefix, ParameterList<T>& out) const override;
  TranslationMethod method() const override { return TranslationMethod::kLinear; }
  std::size_t dim() const override { return layers_.front().weight.dim(0); }

  // Weights to the identity, biases to zero.
  void set_identity();

 private:
  std::vector<LinearLayer<T>> layers_;
  bool activation_;
};

/// "Transformer": self-attention encoder layers over the source tokens
/// (no token queries), then pooled.
template <typename T>
class EncoderTranslator final : public TranslationNetwork<T> {
 public:
  EncoderTranslator(Direction direction, const AttentionConfig& attention, std::size_t layers,
                    std::mt19937_64& rng);

  BasicTensor<T> forward(const BasicTensor<T>& source) const override;
  void collect_parameters(const std::string& prefix, ParameterList<T>& out) const override;
  TranslationMethod method() const override { return TranslationMethod::kTransformer; }
  std::size_t dim() const override { return dim_; }

 private:
  std::vector<EncoderLayer<T>> layers_;
  std::size_t dim_;
};

/// bwd(fwd(source)). The two translators must point in opposite directions.
template <typename T>
BasicTensor<T> cycle(const TranslationNetwork<T>& fwd, const TranslationNetwork<T>& bwd,
                     const BasicTensor<T>& source);

struct ModelConfig {
  TranslationMethod method = TranslationMethod::kDecoder;
  AttentionConfig attention;
  std::size_t depth = 3;            // decoder depth
  std::size_t baseline_layers = 3;  // Linear / Transformer baselines
  std::size_t visual_tokens = 9;    // L1, target layout of G
  std::size_t text_tokens = 31;     // L2, target layout of F
  std::size_t queries_g = 0;        // 0: visual_tokens
  std::size_t queries_f = 0;        // 0: text_tokens
  double query_init_std = 0.02;
  bool linear_activation = true;

  std::size_t resolved_queries_g() const { return queries_g ? queries_g : visual_tokens; }
  std::size_t resolved_queries_f() const { return queries_f ? queries_f : text_tokens; }
  void validate() const;
};

/// The translator pair (G, F) for one experiment. Parameters are
/// initialized from a single seeded stream, G first.
template <typename T>
class TranslatorPair {
 public:
  TranslatorPair(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  const TranslationNetwork<T>& g() const { return *g_; }
  const TranslationNetwork<T>& f() const { return *f_; }
  TranslationNetwork<T>& g() { return *g_; }
  TranslationNetwork<T>& f() { return *f_; }

  /// Every trainable tensor, named "G...." then "F....".
  ParameterList<T> parameters() const;

 private:
  ModelConfig config_;
  std::unique_ptr<TranslationNetwork<T>> g_;
  std::unique_ptr<TranslationNetwork<T>> f_;
};

/// Closed-form parameter count of one query-guided translator.
std::size_t query_translator_parameter_count(const AttentionConfig& attention, std::size_t depth,
                                             std::size_t query_count);

}  // namespace lat
