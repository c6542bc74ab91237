#pragma once

// Training objective: bidirectional InfoNCE between translated embeddings
// and true target-modality embeddings (inter-modal) plus cycle-consistency
// MSE (intra-modal), evaluated on the CLS token (global level) and on the
// mean of the detail tokens (token level):
//
//   L_level = lambda_inter * L_inter + lambda_intra * L_intra
//   L       = lambda_global * L_global + lambda_token * L_token

#include <optional>

#include "lat/tensor.hpp"

namespace lat {

struct LossWeights {
  double tau = 0.05;
  double lambda_inter = 1.0;
  double lambda_intra = 1.0;
  double lambda_global = 1.0;
  double lambda_token = 1.0;

  void validate() const;
};

// v2t: each row i is an item of modality A scored against every column j
// (softmax over columns). t2v: each column is scored against every row
// (softmax over rows).
enum class NceDirection { kVisualToText, kTextToVisual };

/// -1/N sum_i log softmax(sim / tau)_{ii}, log-sum-exp stabilized.
/// `sim` must be square.
template <typename T>
BasicTensor<T> info_nce(const BasicTensor<T>& sim, double tau, NceDirection direction);

/// As info_nce, with extra negatives: v2t takes [N x (N+K)], t2v takes
/// [(N+K) x N]. Positives sit on the leading N x N diagonal.
template <typename T>
BasicTensor<T> info_nce_with_negatives(const BasicTensor<T>& sim, double tau,
                                       NceDirection direction);

/// 1/2 (L_v2t + L_t2v) over sim = v_emb . t_emb^T. Rows are expected to be
/// unit-normalized.
template <typename T>
BasicTensor<T> inter_modal_loss(const BasicTensor<T>& v_emb, const BasicTensor<T>& t_emb,
                                double tau);

/// 1/2 (mean((G(F(v)) - v)^2) + mean((F(G(t)) - t)^2)).
template <typename T>
BasicTensor<T> cycle_mse(const BasicTensor<T>& cycled_visual, const BasicTensor<T>& visual,
                         const BasicTensor<T>& cycled_text, const BasicTensor<T>& text);

enum class Level { kGlobal, kToken };

/// [B x L x d] -> [B x d]: token 0 (global) or the mean of tokens 1..L-1.
template <typename T>
BasicTensor<T> level_view(const BasicTensor<T>& tokens, Level level);

/// Encoder embeddings and translator outputs for one batch, all [B x L x d].
template <typename T>
struct TranslationBatch {
  BasicTensor<T> visual;          // v
  BasicTensor<T> text;            // t
  BasicTensor<T> text_to_visual;  // G(t)
  BasicTensor<T> visual_to_text;  // F(v)
  std::optional<BasicTensor<T>> visual_cycle;  // G(F(v)); required when lambda_intra > 0
  std::optional<BasicTensor<T>> text_cycle;    // F(G(t))
};

/// Extra negatives [K x d] per modality and level (unnormalized).
template <typename T>
struct NegativeSet {
  std::optional<BasicTensor<T>> visual_global, visual_token;
  std::optional<BasicTensor<T>> text_global, text_token;
};

template <typename T>
struct LevelLoss {
  BasicTensor<T> inter;
  BasicTensor<T> intra;
  BasicTensor<T> combined;
};

template <typename T>
LevelLoss<T> level_loss(const TranslationBatch<T>& batch, Level level, const LossWeights& weights,
                        const NegativeSet<T>* negatives = nullptr);

template <typename T>
BasicTensor<T> global_loss(const TranslationBatch<T>& batch, const LossWeights& weights,
                           const NegativeSet<T>* negatives = nullptr);
template <typename T>
BasicTensor<T> token_loss(const TranslationBatch<T>& batch, const LossWeights& weights,
                          const NegativeSet<T>* negatives = nullptr);

template <typename T>
struct LossBreakdown {
  BasicTensor<T> total;
  LevelLoss<T> global;
  std::optional<LevelLoss<T>> token;  // absent when lambda_token == 0
};

template <typename T>
LossBreakdown<T> total_loss(const TranslationBatch<T>& batch, const LossWeights& weights,
                            const NegativeSet<T>* negatives = nullptr);

}  // namespace lat
