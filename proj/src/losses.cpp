#include "lat/losses.hpp"

#include <string>

#include "lat/memory_bank.hpp"

namespace lat {

void LossWeights::validate() const {
  if (!(tau > 0.0)) throw ConfigError("temperature tau must be positive, got " + std::to_string(tau));
  const auto check = [](double value, const char* name) {
    if (!(value >= 0.0)) {
      throw ConfigError(std::string(name) + " must be nonnegative, got " + std::to_string(value));
    }
  };
  check(lambda_inter, "lambda_inter");
  check(lambda_intra, "lambda_intra");
  check(lambda_global, "lambda_global");
  check(lambda_token, "lambda_token");
}

template <typename T>
BasicTensor<T> info_nce_with_negatives(const BasicTensor<T>& sim, double tau,
                                       NceDirection direction) {
  if (!(tau > 0.0)) throw ConfigError("info_nce: tau must be positive");
  if (sim.rank() != 2) throw ContractError("info_nce: similarity must be a matrix, got " + sim.shape().str());
  // Put the candidates of each anchor on the last axis.
  const BasicTensor<T> oriented = direction == NceDirection::kVisualToText ? sim : transpose(sim);
  if (oriented.dim(1) < oriented.dim(0)) {
    throw ContractError("info_nce: " + sim.shape().str() +
                        " has fewer candidates than anchors for this direction");
  }
  const BasicTensor<T> logits = scale(oriented, static_cast<T>(1.0 / tau));
  return mean(sub(logsumexp_rows(logits), diagonal(logits)));
}

template <typename T>
BasicTensor<T> info_nce(const BasicTensor<T>& sim, double tau, NceDirection direction) {
  if (sim.rank() != 2 || sim.dim(0) != sim.dim(1)) {
    throw ContractError("info_nce: similarity matrix must be square, got " + sim.shape().str());
  }
  return info_nce_with_negatives(sim, tau, direction);
}

template <typename T>
BasicTensor<T> inter_modal_loss(const BasicTensor<T>& v_emb, const BasicTensor<T>& t_emb,
                                double tau) {
  if (v_emb.rank() != 2 || t_emb.rank() != 2 || v_emb.dim(0) != t_emb.dim(0)) {
    throw ContractError("inter_modal_loss: need paired [N x d] embeddings, got " +
                        v_emb.shape().str() + " and " + t_emb.shape().str());
  }
  const BasicTensor<T> sim = matmul(v_emb, transpose(t_emb));
  return scale(add(info_nce(sim, tau, NceDirection::kVisualToText),
                   info_nce(sim, tau, NceDirection::kTextToVisual)),
               T(0.5));
}

template <typename T>
BasicTensor<T> cycle_mse(const BasicTensor<T>& cycled_visual, const BasicTensor<T>& visual,
                         const BasicTensor<T>& cycled_text, const BasicTensor<T>& text) {
  if (!(cycled_visual.shape() == visual.shape()) || !(cycled_text.shape() == text.shape())) {
    throw DimensionError("cycle_mse: shape mismatch " + cycled_visual.shape().str() + "/" +
                         visual.shape().str() + ", " + cycled_text.shape().str() + "/" +
                         text.shape().str());
  }
  const BasicTensor<T> dv = sub(cycled_visual, visual);
  const BasicTensor<T> dt = sub(cycled_text, text);
  return scale(add(mean(mul(dv, dv)), mean(mul(dt, dt))), T(0.5));
}

template <typename T>
BasicTensor<T> level_view(const BasicTensor<T>& tokens, Level level) {
  if (tokens.rank() != 3) {
    throw DimensionError("level_view: expected [B x L x d], got " + tokens.shape().str());
  }
  if (level == Level::kGlobal) return select(tokens, 1, 0);
  const std::size_t count = tokens.dim(1);
  if (count < 2) {
    throw ConfigError("token-level loss needs at least 2 tokens per item, got " +
                      std::to_string(count));
  }
  return mean_axis(slice(tokens, 1, 1, count), 1);
}

template <typename T>
LevelLoss<T> level_loss(const TranslationBatch<T>& batch, Level level, const LossWeights& weights,
                        const NegativeSet<T>* negatives) {
  weights.validate();
  const bool global = level == Level::kGlobal;
  std::optional<BasicTensor<T>> bank_visual, bank_text;
  if (negatives != nullptr) {
    bank_visual = global ? negatives->visual_global : negatives->visual_token;
    bank_text = global ? negatives->text_global : negatives->text_token;
  }

  const BasicTensor<T> visual = level_view(batch.visual, level);
  const BasicTensor<T> text = level_view(batch.text, level);
  const BasicTensor<T> g_text = l2_normalize(level_view(batch.text_to_visual, level));
  const BasicTensor<T> f_visual = l2_normalize(level_view(batch.visual_to_text, level));
  const BasicTensor<T> visual_keys = l2_normalize(bank_extend(visual, bank_visual));
  const BasicTensor<T> text_keys = l2_normalize(bank_extend(text, bank_text));

  // F(v_i) against every text t_j; v_i against every translated text G(t_j).
  const BasicTensor<T> v2t = info_nce_with_negatives(matmul(f_visual, transpose(text_keys)),
                                                     weights.tau, NceDirection::kVisualToText);
  const BasicTensor<T> t2v = info_nce_with_negatives(matmul(visual_keys, transpose(g_text)),
                                                     weights.tau, NceDirection::kTextToVisual);
  LevelLoss<T> out;
  out.inter = scale(add(v2t, t2v), T(0.5));

  if (batch.visual_cycle && batch.text_cycle) {
    out.intra = cycle_mse(level_view(*batch.visual_cycle, level), visual,
                          level_view(*batch.text_cycle, level), text);
  } else if (weights.lambda_intra > 0.0) {
    throw ContractError("intra-modal loss requested but the batch carries no cycle translations");
  } else {
    out.intra = BasicTensor<T>::scalar(T(0));
  }
  out.combined = add(scale(out.inter, static_cast<T>(weights.lambda_inter)),
                     scale(out.intra, static_cast<T>(weights.lambda_intra)));
  return out;
}

template <typename T>
BasicTensor<T> global_loss(const TranslationBatch<T>& batch, const LossWeights& weights,
                           const NegativeSet<T>* negatives) {
  return level_loss(batch, Level::kGlobal, weights, negatives).combined;
}

template <typename T>
BasicTensor<T> token_loss(const TranslationBatch<T>& batch, const LossWeights& weights,
                          const NegativeSet<T>* negatives) {
  return level_loss(batch, Level::kToken, weights, negatives).combined;
}

template <typename T>
LossBreakdown<T> total_loss(const TranslationBatch<T>& batch, const LossWeights& weights,
                            const NegativeSet<T>* negatives) {
  LossBreakdown<T> out;
  out.global = level_loss(batch, Level::kGlobal, weights, negatives);
  out.total = scale(out.global.combined, static_cast<T>(weights.lambda_global));
  if (weights.lambda_token > 0.0) {
    out.token = level_loss(batch, Level::kToken, weights, negatives);
    out.total = add(out.total, scale(out.token->combined, static_cast<T>(weights.lambda_token)));
  }
  return out;
}

#define LAT_INSTANTIATE_LOSSES(T)                                                              \
  template BasicTensor<T> info_nce<T>(const BasicTensor<T>&, double, NceDirection);            \
  template BasicTensor<T> info_nce_with_negatives<T>(const BasicTensor<T>&, double,            \
                                                     NceDirection);                            \
  template BasicTensor<T> inter_modal_loss<T>(const BasicTensor<T>&, const BasicTensor<T>&,    \
                                              double);                                         \
  template BasicTensor<T> cycle_mse<T>(const BasicTensor<T>&, const BasicTensor<T>&,           \
                                       const BasicTensor<T>&, const BasicTensor<T>&);          \
  template BasicTensor<T> level_view<T>(const BasicTensor<T>&, Level);                         \
  template LevelLoss<T> level_loss<T>(const TranslationBatch<T>&, Level, const LossWeights&,   \
                                      const NegativeSet<T>*);                                  \
  template BasicTensor<T> global_loss<T>(const TranslationBatch<T>&, const LossWeights&,       \
                                         const NegativeSet<T>*);                               \
  template BasicTensor<T> token_loss<T>(const TranslationBatch<T>&, const LossWeights&,        \
                                        const NegativeSet<T>*);                                \
  template LossBreakdown<T> total_loss<T>(const TranslationBatch<T>&, const LossWeights&,      \
                                          const NegativeSet<T>*);

LAT_INSTANTIATE_LOSSES(float)
LAT_INSTANTIATE_LOSSES(double)

}  // namespace lat
