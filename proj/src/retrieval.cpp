#include "lat/retrieval.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <sstream>

namespace lat {

double recall_at_k(std::span<const std::size_t> ranks, std::size_t k) {
  if (ranks.empty()) throw ContractError("recall_at_k: no ranks");
  const auto hits = std::count_if(ranks.begin(), ranks.end(), [k](std::size_t r) { return r <= k; });
  return static_cast<double>(hits) / static_cast<double>(ranks.size());
}

double median_rank(std::span<const std::size_t> ranks) {
  if (ranks.empty()) throw ContractError("median_rank: no ranks");
  std::vector<std::size_t> sorted(ranks.begin(), ranks.end());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  if (n % 2 == 1) return static_cast<double>(sorted[n / 2]);
  return 0.5 * static_cast<double>(sorted[n / 2 - 1] + sorted[n / 2]);
}

std::vector<std::size_t> true_pair_ranks(std::span<const double> scores, std::size_t queries,
                                         std::size_t gallery, std::span<const std::size_t> truth) {
  if (gallery == 0) throw ContractError("retrieval: empty gallery");
  if (scores.size() != queries * gallery || truth.size() != queries) {
    throw DimensionError("retrieval: score matrix does not match query/gallery sizes");
  }
  std::vector<std::size_t> ranks(queries);
  for (std::size_t q = 0; q < queries; ++q) {
    if (truth[q] >= gallery) throw DimensionError("retrieval: true index outside the gallery");
    const double* row = scores.data() + q * gallery;
    const double target = row[truth[q]];
    std::size_t rank = 1;
    for (std::size_t j = 0; j < gallery; ++j) {
      if (j == truth[q]) continue;
      if (row[j] >= target) ++rank;
    }
    ranks[q] = rank;
  }
  return ranks;
}

RetrievalReport report_from_ranks(std::vector<std::size_t> ranks, std::size_t gallery,
                                  Direction direction) {
  RetrievalReport r;
  r.direction = direction;
  r.gallery_size = gallery;
  r.r1 = recall_at_k(ranks, 1);
  r.r5 = recall_at_k(ranks, 5);
  r.r10 = recall_at_k(ranks, 10);
  r.median_rank = median_rank(ranks);
  r.ranks = std::move(ranks);
  return r;
}

namespace {

std::vector<double> normalized_rows(const Tensor& x) {
  if (x.rank() != 2) throw DimensionError("expected a matrix of embeddings, got " + x.shape().str());
  const std::size_t d = x.dim(1);
  std::vector<double> out(x.data().begin(), x.data().end());
  for (std::size_t r = 0; r < x.dim(0); ++r) {
    double sq = 0.0;
    for (std::size_t c = 0; c < d; ++c) sq += out[r * d + c] * out[r * d + c];
    const double norm = std::sqrt(sq);
    if (norm < kMinNormalizableNorm) {
      throw DegenerateVectorError("embedding row " + std::to_string(r) + " has zero norm");
    }
    for (std::size_t c = 0; c < d; ++c) out[r * d + c] /= norm;
  }
  return out;
}

}  // namespace

std::vector<double> cosine_scores(const Tensor& queries, const Tensor& gallery) {
  if (queries.rank() != 2 || gallery.rank() != 2 || queries.dim(1) != gallery.dim(1)) {
    throw DimensionError("cosine_scores: " + queries.shape().str() + " vs " + gallery.shape().str());
  }
  const std::size_t d = queries.dim(1);
  const std::vector<double> q = normalized_rows(queries);
  const std::vector<double> g = normalized_rows(gallery);
  const std::size_t nq = queries.dim(0);
  const std::size_t ng = gallery.dim(0);
  std::vector<double> out(nq * ng);
  for (std::size_t i = 0; i < nq; ++i) {
    for (std::size_t j = 0; j < ng; ++j) {
      double dot = 0.0;
      for (std::size_t c = 0; c < d; ++c) dot += q[i * d + c] * g[j * d + c];
      out[i * ng + j] = dot;
    }
  }
  return out;
}

Tensor cls_tokens(const Tensor& tokens) {
  if (tokens.rank() != 3) throw DimensionError("cls_tokens: expected [N x L x d], got " + tokens.shape().str());
  return select(tokens, 1, 0).detach();
}

Tensor translate_cls(const TranslationNetwork<float>& translator, const Tensor& query_tokens,
                     std::size_t chunk) {
  if (query_tokens.rank() != 3) {
    throw DimensionError("translate_cls: expected [N x L x d], got " + query_tokens.shape().str());
  }
  const std::size_t n = query_tokens.dim(0);
  const std::size_t d = translator.dim();
  std::vector<float> out;
  out.reserve(n * d);
  for (std::size_t start = 0; start < n; start += chunk) {
    const std::size_t end = std::min(n, start + chunk);
    const Tensor part = slice(query_tokens, 0, start, end);
    const Tensor cls = select(translator.forward(part), 1, 0);
    out.insert(out.end(), cls.data().begin(), cls.data().end());
  }
  return Tensor(Shape{n, d}, std::move(out));
}

RetrievalReport retrieve(const Tensor& query_tokens, const Tensor& gallery_tokens,
                         const TranslationNetwork<float>& translator, Direction direction,
                         std::span<const std::size_t> truth) {
  if (translator.direction() != direction) {
    throw ConfigError("retrieve: translator maps " + to_string(translator.direction()) +
                      " but " + to_string(direction) + " was requested");
  }
  if (gallery_tokens.rank() != 3) throw ContractError("retrieve: empty or malformed gallery");
  const Tensor queries = translate_cls(translator, query_tokens);
  const Tensor gallery = cls_tokens(gallery_tokens);
  std::vector<std::size_t> identity;
  if (truth.empty()) {
    identity.resize(queries.dim(0));
    std::iota(identity.begin(), identity.end(), std::size_t{0});
    truth = identity;
  }
  const auto scores = cosine_scores(queries, gallery);
  return report_from_ranks(true_pair_ranks(scores, queries.dim(0), gallery.dim(0), truth),
                           gallery.dim(0), direction);
}

EvaluationReport evaluate(const TranslatorPair<float>& model, const EmbeddingPairSet& set,
                          std::span<const std::size_t> items) {
  const Tensor visual = take_items(set.visual, items);
  const Tensor text = take_items(set.text, items);
  EvaluationReport out;
  out.t2v = retrieve(text, visual, model.g(), Direction::kTextToVisual);
  out.v2t = retrieve(visual, text, model.f(), Direction::kVisualToText);
  return out;
}

std::string report_csv(const EvaluationReport& report) {
  std::ostringstream os;
  os << "metric,value\n";
  for (const auto* r : {&report.t2v, &report.v2t}) {
    const std::string p = to_string(r->direction);
    os << p << "_r1," << format_float(r->r1) << '\n';
    os << p << "_r5," << format_float(r->r5) << '\n';
    os << p << "_r10," << format_float(r->r10) << '\n';
    os << p << "_medr," << format_float(r->median_rank) << '\n';
    os << p << "_gallery," << r->gallery_size << '\n';
  }
  return os.str();
}

// ---- gap diagnostics ----------------------------------------------------------------

GapDiagnostics similarity_table(std::span<const EmbeddingGroup> groups) {
  GapDiagnostics out;
  std::vector<std::vector<double>> unit;
  std::size_t dim = 0;
  for (const auto& g : groups) {
    if (g.ids.size() != g.vectors.size()) {
      throw ContractError("similarity_table: group " + g.label + " has mismatched ids/vectors");
    }
    for (std::size_t i = 0; i < g.vectors.size(); ++i) {
      const auto& v = g.vectors[i];
      if (dim == 0) dim = v.size();
      if (v.size() != dim || dim == 0) {
        throw DimensionError("similarity_table: embeddings must share one positive dimension");
      }
      double sq = 0.0;
      for (const double x : v) sq += x * x;
      const double norm = std::sqrt(sq);
      if (norm < kMinNormalizableNorm) {
        throw DegenerateVectorError("similarity_table: " + g.label + ":" + g.ids[i] + " is a zero vector");
      }
      std::vector<double> u(v);
      for (auto& x : u) x /= norm;
      unit.push_back(std::move(u));
      out.labels.push_back(g.label + ":" + g.ids[i]);
      out.groups.push_back(g.label);
    }
  }
  const std::size_t n = unit.size();
  out.size = n;
  out.similarity.assign(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    out.similarity[i * n + i] = 1.0;
    for (std::size_t j = i + 1; j < n; ++j) {
      double dot = 0.0;
      for (std::size_t c = 0; c < dim; ++c) dot += unit[i][c] * unit[j][c];
      out.similarity[i * n + j] = dot;
      out.similarity[j * n + i] = dot;
    }
  }
  return out;
}

std::string similarity_csv(const GapDiagnostics& diagnostics) {
  std::ostringstream os;
  os << "label";
  for (const auto& l : diagnostics.labels) os << ',' << l;
  os << '\n';
  const std::size_t n = diagnostics.size;
  for (std::size_t i = 0; i < n; ++i) {
    os << diagnostics.labels[i];
    for (std::size_t j = 0; j < n; ++j) os << ',' << format_float(diagnostics.similarity[i * n + j]);
    os << '\n';
  }
  return os.str();
}

namespace {

EmbeddingGroup group_from(const std::string& label, const Tensor& rows,
                          const EmbeddingPairSet& set, std::span<const std::size_t> items) {
  EmbeddingGroup g;
  g.label = label;
  const std::size_t d = rows.dim(1);
  for (std::size_t i = 0; i < items.size(); ++i) {
    g.ids.push_back(set.ids[items[i]]);
    g.vectors.emplace_back(rows.data().begin() + static_cast<std::ptrdiff_t>(i * d),
                           rows.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * d));
  }
  return g;
}

}  // namespace

std::vector<EmbeddingGroup> gap_groups(const TranslatorPair<float>& model,
                                       const EmbeddingPairSet& set,
                                       std::span<const std::size_t> items) {
  const Tensor visual = take_items(set.visual, items);
  const Tensor text = take_items(set.text, items);
  std::vector<EmbeddingGroup> out;
  out.push_back(group_from("T", cls_tokens(text), set, items));
  out.push_back(group_from("V", cls_tokens(visual), set, items));
  out.push_back(group_from("GT", translate_cls(model.g(), text), set, items));
  out.push_back(group_from("FV", translate_cls(model.f(), visual), set, items));
  return out;
}

PairContrast pair_contrast(const EmbeddingGroup& a, const EmbeddingGroup& b) {
  if (a.vectors.size() != b.vectors.size() || a.vectors.size() < 2) {
    throw ContractError("pair_contrast: groups must hold the same items, at least two");
  }
  const std::array<EmbeddingGroup, 2> both{a, b};
  const GapDiagnostics table = similarity_table(both);
  const std::size_t n = a.vectors.size();
  PairContrast out;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double s = table.similarity[i * table.size + n + j];
      (i == j ? out.matched : out.mismatched) += s;
    }
  }
  out.matched /= static_cast<double>(n);
  out.mismatched /= static_cast<double>(n * (n - 1));
  return out;
}

}  // namespace lat
