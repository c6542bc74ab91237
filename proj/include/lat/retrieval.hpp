#pragma once

// Retrieval in translated space and modality-gap diagnostics.
//
// T2V ranks gallery videos by cosine(G(t_query)[0], v_i[0]); V2T ranks
// gallery texts by cosine(F(v_query)[0], t_j[0]). Ties are broken
// pessimistically: the true item ranks after every item with an equal score.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "lat/data.hpp"
#include "lat/tensor.hpp"
#include "lat/translation.hpp"

namespace lat {

struct RetrievalReport {
  Direction direction = Direction::kTextToVisual;
  std::vector<std::size_t> ranks;  // 1-based rank of each query's true item
  double r1 = 0.0;
  double r5 = 0.0;
  double r10 = 0.0;
  double median_rank = 0.0;
  std::size_t gallery_size = 0;
};

double recall_at_k(std::span<const std::size_t> ranks, std::size_t k);
/// Median; mean of the two middle ranks for even counts.
double median_rank(std::span<const std::size_t> ranks);

/// Ranks from a row-major [queries x gallery] score matrix; query q's true
/// item is gallery column truth[q].
std::vector<std::size_t> true_pair_ranks(std::span<const double> scores, std::size_t queries,
                                         std::size_t gallery, std::span<const std::size_t> truth);

RetrievalReport report_from_ranks(std::vector<std::size_t> ranks, std::size_t gallery,
                                  Direction direction);

/// Row-major cosine similarities between the rows of two [n x d] / [m x d]
/// tensors.
std::vector<double> cosine_scores(const Tensor& queries, const Tensor& gallery);

/// CLS (token 0) of every item in a [N x L x d] tensor, as [N x d].
Tensor cls_tokens(const Tensor& tokens);

/// Translates `query_tokens` with `translator` (no gradient tape) and
/// returns its CLS rows as [N x d]. Runs in chunks of `chunk` items.
Tensor translate_cls(const TranslationNetwork<float>& translator, const Tensor& query_tokens,
                     std::size_t chunk = 64);

/// Scores translated queries against the gallery. The translator's
/// direction must equal `direction`; query i pairs with gallery i unless
/// `truth` is given.
RetrievalReport retrieve(const Tensor& query_tokens, const Tensor& gallery_tokens,
                         const TranslationNetwork<float>& translator, Direction direction,
                         std::span<const std::size_t> truth = {});

struct EvaluationReport {
  RetrievalReport t2v;
  RetrievalReport v2t;
};

/// Both directions over the listed items (queries and gallery alike).
EvaluationReport evaluate(const TranslatorPair<float>& model, const EmbeddingPairSet& set,
                          std::span<const std::size_t> items);

/// metric,value CSV (one header row).
std::string report_csv(const EvaluationReport& report);

// ---- gap diagnostics ------------------------------------------------------------

struct EmbeddingGroup {
  std::string label;  // T, V, GT or FV
  std::vector<std::string> ids;
  std::vector<std::vector<double>> vectors;
};

struct GapDiagnostics {
  std::vector<std::string> labels;  // "group:id"
  std::vector<std::string> groups;
  std::size_t size = 0;
  std::vector<double> similarity;  // row-major size x size
};

/// Full pairwise cosine matrix over every vector of every group, in order.
/// Zero vectors raise DegenerateVectorError.
GapDiagnostics similarity_table(std::span<const EmbeddingGroup> groups);
std::string similarity_csv(const GapDiagnostics& diagnostics);

/// CLS embeddings of the listed items in the four spaces, in the order
/// T, V, GT (= G(t)), FV (= F(v)).
std::vector<EmbeddingGroup> gap_groups(const TranslatorPair<float>& model,
                                       const EmbeddingPairSet& set,
                                       std::span<const std::size_t> items);

/// Mean cosine of paired (i, i) and mismatched (i, j != i) items between
/// two equally sized groups.
struct PairContrast {
  double matched = 0.0;
  double mismatched = 0.0;
};
PairContrast pair_contrast(const EmbeddingGroup& a, const EmbeddingGroup& b);

// ---- classical MDS ------------------------------------------------------------------

struct MdsOptions {
  std::size_t out_dim = 2;
  double tolerance = 1e-9;
  std::size_t max_iterations = 10000;
};

struct MdsResult {
  std::size_t points = 0;
  std::size_t out_dim = 0;
  std::vector<double> coordinates;  // row-major points x out_dim
  std::vector<double> eigenvalues;  // retained, descending
  double retained_ratio = 0.0;      // retained eigenvalue mass / trace(B)
};

/// Squared distances, B = -1/2 J D^2 J, top eigenpairs by deflated power
/// iteration, coordinates = eigenvector * sqrt(eigenvalue). Requires >= 3
/// points. Throws NumericError carrying the residual if an eigenpair fails
/// to converge.
MdsResult mds_project(std::span<const std::vector<double>> points, const MdsOptions& options = {});

/// id,group,x,y CSV.
std::string mds_csv(const MdsResult& result, std::span<const std::string> ids,
                    std::span<const std::string> groups);
/// Scatter plot, one colour per group label.
std::string mds_svg(const MdsResult& result, std::span<const std::string> groups);

}  // namespace lat
