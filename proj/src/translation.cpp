#include "lat/translation.hpp"

#include <cmath>

namespace lat {

std::string to_string(Direction direction) {
  return direction == Direction::kTextToVisual ? "t2v" : "v2t";
}

std::string to_string(TranslationMethod method) {
  switch (method) {
    case TranslationMethod::kNone:
      return "none";
    case TranslationMethod::kLinear:
      return "linear";
    case TranslationMethod::kTransformer:
      return "transformer";
    case TranslationMethod::kDecoder:
      return "decoder";
  }
  return "unknown";
}

TranslationMethod parse_method(std::string_view name) {
  if (name == "none") return TranslationMethod::kNone;
  if (name == "linear") return TranslationMethod::kLinear;
  if (name == "transformer") return TranslationMethod::kTransformer;
  if (name == "decoder") return TranslationMethod::kDecoder;
  throw ConfigError("unknown translation method '" + std::string(name) +
                    "' (expected none, linear, transformer or decoder)");
}

template <typename T>
void TranslationNetwork<T>::check_source(const BasicTensor<T>& source) const {
  if (source.rank() < 2 || source.rank() > 3 || source.shape().back() != dim()) {
    throw DimensionError(to_string(direction_) + " translator of dimension " +
                         std::to_string(dim()) + " cannot take source " + source.shape().str());
  }
}

// ---- query-guided decoder ---------------------------------------------------

template <typename T>
QueryTranslator<T>::QueryTranslator(Direction direction, const AttentionConfig& attention,
                                    std::size_t depth, std::size_t query_count,
                                    double query_init_std, std::mt19937_64& rng)
    : TranslationNetwork<T>(direction),
      token_queries(gaussian<T>(Shape{query_count == 0 ? 1 : query_count, attention.dim},
                                query_init_std, rng)),
      stack(attention, depth, rng) {
  if (query_count == 0) throw ConfigError("translator: query count must be positive");
  const std::size_t d = attention.dim;
  const auto q = token_queries.data();
  for (std::size_t i = 0; i < query_count; ++i) {
    for (std::size_t j = i + 1; j < query_count; ++j) {
      double dist = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        const double diff = static_cast<double>(q[i * d + c]) - static_cast<double>(q[j * d + c]);
        dist += diff * diff;
      }
      if (!(dist > 0.0)) {
        throw ConfigError("translator: token queries " + std::to_string(i) + " and " +
                          std::to_string(j) + " coincide");
      }
    }
  }
}

template <typename T>
BasicTensor<T> QueryTranslator<T>::forward(const BasicTensor<T>& source) const {
  this->check_source(source);
  return stack.forward(token_queries, source);
}

template <typename T>
void QueryTranslator<T>::collect_parameters(const std::string& prefix,
                                            ParameterList<T>& out) const {
  out.push_back({prefix + ".token_queries", token_queries});
  stack.collect_parameters(prefix + ".decoder", out);
}

// ---- baselines ----------------------------------------------------------------

template <typename T>
BasicTensor<T> pool_global_and_detail(const BasicTensor<T>& tokens) {
  if (tokens.rank() < 2) {
    throw DimensionError("pool: expected [L x d] or [B x L x d], got " + tokens.shape().str());
  }
  const std::size_t axis = tokens.rank() - 2;
  const std::size_t count = tokens.dim(axis);
  BasicTensor<T> global = slice(tokens, axis, 0, 1);
  if (count == 1) return global;
  BasicTensor<T> detail = mean_axis(slice(tokens, axis, 1, count), axis);
  return concat(global, reshape(detail, global.shape()), axis);
}

template <typename T>
BasicTensor<T> PassthroughTranslator<T>::forward(const BasicTensor<T>& source) const {
  this->check_source(source);
  return pool_global_and_detail(source);
}

template <typename T>
LinearTranslator<T>::LinearTranslator(Direction direction, std::size_t dim, std::size_t layers,
                                      bool activation, std::mt19937_64& rng)
    : TranslationNetwork<T>(direction), activation_(activation) {
  if (layers == 0) throw ConfigError("linear translator: needs at least one layer");
  for (std::size_t i = 0; i < layers; ++i) layers_.push_back(LinearLayer<T>::init(dim, dim, rng));
}

template <typename T>
BasicTensor<T> LinearTranslator<T>::forward(const BasicTensor<T>& source) const {
  this->check_source(source);
  BasicTensor<T> h = pool_global_and_detail(source);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (i > 0 && activation_) h = gelu(h);
    h = layers_[i].forward(h);
  }
  return h;
}

template <typename T>
void LinearTranslator<T>::collect_parameters(const std::string& prefix,
                                             ParameterList<T>& out) const {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    layers_[i].collect_parameters(prefix + ".linear" + std::to_string(i), out);
  }
}

template <typename T>
void LinearTranslator<T>::set_identity() {
  for (auto& layer : layers_) {
    auto w = layer.weight.mutable_data();
    const std::size_t d = layer.weight.dim(0);
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = (i / d == i % d) ? T(1) : T(0);
    for (auto& b : layer.bias.mutable_data()) b = T(0);
  }
}

template <typename T>
EncoderTranslator<T>::EncoderTranslator(Direction direction, const AttentionConfig& attention,
                                        std::size_t layers, std::mt19937_64& rng)
    : TranslationNetwork<T>(direction), dim_(attention.dim) {
  attention.validate();
  if (layers == 0) throw ConfigError("transformer translator: needs at least one layer");
  for (std::size_t i = 0; i < layers; ++i) layers_.emplace_back(attention, rng);
}

template <typename T>
BasicTensor<T> EncoderTranslator<T>::forward(const BasicTensor<T>& source) const {
  this->check_source(source);
  BasicTensor<T> h = source;
  for (const auto& layer : layers_) h = layer.forward(h);
  return pool_global_and_detail(h);
}

template <typename T>
void EncoderTranslator<T>::collect_parameters(const std::string& prefix,
                                              ParameterList<T>& out) const {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    layers_[i].collect_parameters(prefix + ".encoder" + std::to_string(i), out);
  }
}

template <typename T>
BasicTensor<T> cycle(const TranslationNetwork<T>& fwd, const TranslationNetwork<T>& bwd,
                     const BasicTensor<T>& source) {
  if (fwd.direction() == bwd.direction()) {
    throw ConfigError("cycle: both translators map " + to_string(fwd.direction()));
  }
  return bwd.forward(fwd.forward(source));
}

// ---- translator pair ----------------------------------------------------------

void ModelConfig::validate() const {
  attention.validate();
  if (method == TranslationMethod::kDecoder && depth == 0) {
    throw ConfigError("decoder depth must be at least 1");
  }
  if ((method == TranslationMethod::kLinear || method == TranslationMethod::kTransformer) &&
      baseline_layers == 0) {
    throw ConfigError("baseline translators need at least one layer");
  }
  if (visual_tokens == 0 || text_tokens == 0) throw ConfigError("token counts must be positive");
}

template <typename T>
TranslatorPair<T>::TranslatorPair(const ModelConfig& config, std::uint64_t seed)
    : config_(config) {
  config_.validate();
  std::mt19937_64 rng(seed);
  const auto build = [&](Direction dir, std::size_t queries) -> std::unique_ptr<TranslationNetwork<T>> {
    switch (config_.method) {
      case TranslationMethod::kNone:
        return std::make_unique<PassthroughTranslator<T>>(dir, config_.attention.dim);
      case TranslationMethod::kLinear:
        return std::make_unique<LinearTranslator<T>>(dir, config_.attention.dim,
                                                     config_.baseline_layers,
                                                     config_.linear_activation, rng);
      case TranslationMethod::kTransformer:
        return std::make_unique<EncoderTranslator<T>>(dir, config_.attention,
                                                      config_.baseline_layers, rng);
      case TranslationMethod::kDecoder:
        return std::make_unique<QueryTranslator<T>>(dir, config_.attention, config_.depth,
                                                    queries, config_.query_init_std, rng);
    }
    throw ConfigError("unknown translation method");
  };
  g_ = build(Direction::kTextToVisual, config_.resolved_queries_g());
  f_ = build(Direction::kVisualToText, config_.resolved_queries_f());
}

template <typename T>
ParameterList<T> TranslatorPair<T>::parameters() const {
  ParameterList<T> out;
  g_->collect_parameters("G", out);
  f_->collect_parameters("F", out);
  return out;
}

std::size_t query_translator_parameter_count(const AttentionConfig& attention, std::size_t depth,
                                             std::size_t query_count) {
  return query_count * attention.dim + decoder_stack_parameter_count(attention, depth);
}

#define LAT_INSTANTIATE_TRANSLATION(T)                                                   \
  template class TranslationNetwork<T>;                                                  \
  template class QueryTranslator<T>;                                                     \
  template class PassthroughTranslator<T>;                                               \
  template class LinearTranslator<T>;                                                    \
  template class EncoderTranslator<T>;                                                   \
  template class TranslatorPair<T>;                                                      \
  template BasicTensor<T> pool_global_and_detail<T>(const BasicTensor<T>&);              \
  template BasicTensor<T> cycle<T>(const TranslationNetwork<T>&, const TranslationNetwork<T>&, \
                                   const BasicTensor<T>&);

LAT_INSTANTIATE_TRANSLATION(float)
LAT_INSTANTIATE_TRANSLATION(double)

}  // namespace lat
