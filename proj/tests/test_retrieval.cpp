#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "lat/retrieval.hpp"
#include "lat/trainer.hpp"
#include "support.hpp"

using namespace lat;
using lat::testing::sort_ranks;
using lat::testing::sorted_median;

TEST(Metrics, RecallAndMedianExamples) {
  const std::vector<std::size_t> ranks{1, 2, 3, 4};
  EXPECT_EQ(recall_at_k(ranks, 1), 0.25);
  EXPECT_EQ(recall_at_k(ranks, 5), 1.0);
  EXPECT_EQ(median_rank(ranks), 2.5);
  const std::vector<std::size_t> odd{7, 1, 3};
  EXPECT_EQ(median_rank(odd), 3.0);
  EXPECT_THROW(recall_at_k({}, 1), ContractError);
  EXPECT_THROW(median_rank({}), ContractError);
}

TEST(Metrics, TruePairRanksExample) {
  const std::vector<double> scores{0.1, 0.9, 0.2, 0.8};
  const std::size_t truth[] = {0, 1};
  const auto ranks = true_pair_ranks(scores, 2, 2, truth);
  EXPECT_EQ(ranks, (std::vector<std::size_t>{2, 1}));
  const auto report = report_from_ranks(ranks, 2, Direction::kTextToVisual);
  EXPECT_EQ(report.r1, 0.5);
  EXPECT_EQ(report.median_rank, 1.5);
}

TEST(Metrics, BoundsAndAllFirst) {
  const std::vector<std::size_t> ones{1, 1, 1};
  EXPECT_EQ(recall_at_k(ones, 1), 1.0);
  EXPECT_EQ(median_rank(ones), 1.0);
  const std::vector<std::size_t> ranks{3, 1, 2};
  EXPECT_EQ(recall_at_k(ranks, 3), 1.0);
  EXPECT_EQ(recall_at_k(ranks, 10), 1.0);
}

TEST(Metrics, TiesArePessimistic) {
  const std::vector<double> scores{0.5, 0.5, 0.5};
  const std::size_t truth[] = {0};
  EXPECT_EQ(true_pair_ranks(scores, 1, 3, truth), (std::vector<std::size_t>{3}));
}

TEST(Metrics, MatchSortOracleOnRandomMatrices) {
  std::mt19937_64 rng(40);
  std::uniform_int_distribution<std::size_t> size(1, 64);
  std::uniform_int_distribution<int> coarse(0, 4);
  std::uniform_real_distribution<double> fine(-1.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t q = size(rng), g = size(rng);
    std::vector<double> scores(q * g);
    const bool tied = trial % 2 == 0;
    for (auto& s : scores) s = tied ? coarse(rng) * 0.25 : fine(rng);
    std::vector<std::size_t> truth(q);
    std::uniform_int_distribution<std::size_t> pick(0, g - 1);
    for (auto& t : truth) t = pick(rng);
    const auto expected = sort_ranks(scores, q, g, truth);
    const auto ranks = true_pair_ranks(scores, q, g, truth);
    ASSERT_EQ(ranks, expected);
    const auto report = report_from_ranks(ranks, g, Direction::kTextToVisual);
    EXPECT_EQ(report.median_rank, sorted_median(expected));
    std::size_t hits = 0;
    for (const auto r : expected) hits += r <= 5;
    EXPECT_EQ(report.r5, double(hits) / double(q));
    EXPECT_LE(report.r1, report.r5);
    EXPECT_LE(report.r5, report.r10);
    for (const auto r : ranks) {
      EXPECT_GE(r, 1u);
      EXPECT_LE(r, g);
    }
  }
}

TEST(Scores, CosineAndDegenerateRows) {
  const Tensor a(Shape{2, 2}, {1, 0, 0, 2});
  const Tensor b(Shape{1, 2}, {3, 3});
  const auto s = cosine_scores(a, b);
  EXPECT_NEAR(s[0], std::sqrt(0.5), 1e-7);
  EXPECT_NEAR(s[1], std::sqrt(0.5), 1e-7);
  EXPECT_THROW(cosine_scores(a, Tensor::zeros(Shape{1, 2})), DegenerateVectorError);
  const auto self = cosine_scores(a, a);
  EXPECT_NEAR(self[0], 1.0, 1e-12);
  EXPECT_EQ(self[1], 0.0);
  EXPECT_THROW(cosine_scores(a, Tensor::zeros(Shape{1, 3})), DimensionError);
}

TEST(Retrieval, IdentityTranslatorOnIdenticalTokensIsPerfect) {
  const PassthroughTranslator<float> none(Direction::kTextToVisual, 4);
  std::mt19937_64 rng(41);
  const Tensor x = lat::testing::uniform<float>(Shape{5, 3, 4}, rng);
  const auto report = retrieve(x, x, none, Direction::kTextToVisual);
  EXPECT_EQ(report.r1, 1.0);
  EXPECT_EQ(report.median_rank, 1.0);
  EXPECT_EQ(report.gallery_size, 5u);
  EXPECT_THROW(retrieve(x, x, none, Direction::kVisualToText), ConfigError);
}

TEST(Retrieval, ReportCsvLayout) {
  EvaluationReport r;
  r.t2v = report_from_ranks({1, 2}, 2, Direction::kTextToVisual);
  r.v2t = report_from_ranks({1, 1}, 2, Direction::kVisualToText);
  const std::string csv = report_csv(r);
  EXPECT_EQ(csv.rfind("metric,value\n", 0), 0u);
  EXPECT_NE(csv.find("t2v_r1,0.5\n"), std::string::npos);
  EXPECT_NE(csv.find("v2t_medr,1\n"), std::string::npos);
}

TEST(GapDiagnostics, SimilarityTableIsSymmetricWithUnitDiagonal) {
  EmbeddingGroup a{"T", {"x", "y"}, {{1, 0}, {1, 1}}};
  EmbeddingGroup b{"V", {"x", "y"}, {{0, 1}, {-1, 0}}};
  const std::vector<EmbeddingGroup> groups{a, b};
  const auto d = similarity_table(groups);
  ASSERT_EQ(d.size, 4u);
  EXPECT_EQ(d.labels[2], "V:x");
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_NEAR(d.similarity[i * 4 + i], 1.0, 1e-12);
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(d.similarity[i * 4 + j], d.similarity[j * 4 + i]);
  }
  EXPECT_NEAR(d.similarity[0 * 4 + 3], -1.0, 1e-12);
  const auto pc = pair_contrast(a, b);
  EXPECT_NEAR(pc.matched, 0.5 * (0.0 + -std::sqrt(0.5)), 1e-12);
  EXPECT_NEAR(pc.mismatched, 0.5 * (-1.0 + std::sqrt(0.5)), 1e-12);
  EmbeddingGroup zero{"GT", {"z"}, {{0, 0}}};
  const std::vector<EmbeddingGroup> bad{zero};
  EXPECT_THROW(similarity_table(bad), DegenerateVectorError);
}

TEST(GapDiagnostics, GroupsComeInFixedOrder) {
  SyntheticConfig sc;
  sc.items = 4;
  sc.dim = 8;
  sc.visual_tokens = 3;
  sc.text_tokens = 5;
  const auto set = generate_synthetic(sc);
  ModelConfig mc = fit_to_data(ModelConfig{}, set);
  mc.attention.heads = 2;
  mc.depth = 1;
  const TranslatorPair<float> model(mc, 1);
  const std::size_t items[] = {0, 1, 2};
  const auto groups = gap_groups(model, set, items);
  ASSERT_EQ(groups.size(), 4u);
  EXPECT_EQ(groups[0].label, "T");
  EXPECT_EQ(groups[1].label, "V");
  EXPECT_EQ(groups[2].label, "GT");
  EXPECT_EQ(groups[3].label, "FV");
  EXPECT_EQ(groups[3].vectors.size(), 3u);
  EXPECT_NEAR(groups[1].vectors[2][4], set.visual.at(2, 0, 4), 1e-7);
}

namespace {

std::vector<std::vector<double>> random_points(std::mt19937_64& rng, std::size_t n, std::size_t dim) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::vector<double>> pts(n, std::vector<double>(dim));
  for (auto& p : pts) {
    for (auto& x : p) x = normal(rng);
  }
  return pts;
}

double dist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

}  // namespace

TEST(Mds, PlanarPointsKeepTheirDistances) {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 20; ++trial) {
    auto planar = random_points(rng, 6 + trial, 2);
    // linear lift of the plane into 5-D
    std::vector<std::vector<double>> lifted;
    for (const auto& p : planar) {
      lifted.push_back({p[0], p[1], 0.5 * p[0] - p[1], 0.0, 2.0 * p[1]});
    }
    const auto result = mds_project(lifted);
    EXPECT_NEAR(result.retained_ratio, 1.0, 1e-9);
    for (std::size_t i = 0; i < lifted.size(); ++i) {
      for (std::size_t j = 0; j < lifted.size(); ++j) {
        const std::vector<double> a(result.coordinates.begin() + 2 * i, result.coordinates.begin() + 2 * i + 2);
        const std::vector<double> b(result.coordinates.begin() + 2 * j, result.coordinates.begin() + 2 * j + 2);
        EXPECT_NEAR(dist(a, b), dist(lifted[i], lifted[j]), 1e-6);
      }
    }
  }
}

TEST(Mds, IdenticalPointsGiveZeroCoordinates) {
  const std::vector<std::vector<double>> same(5, std::vector<double>{1.5, -2.0, 3.0});
  const auto r = mds_project(same);
  for (const double c : r.coordinates) EXPECT_EQ(c, 0.0);
}

TEST(Mds, CollinearPointsHaveNoSecondAxis) {
  std::vector<std::vector<double>> line;
  for (const double t : {-2.0, -0.5, 0.0, 1.0, 3.5}) line.push_back({1.0 + t, 2.0 - 2.0 * t, 0.5 * t});
  const auto r = mds_project(line);
  for (std::size_t i = 0; i < line.size(); ++i) EXPECT_NEAR(r.coordinates[2 * i + 1], 0.0, 1e-6);
  ASSERT_GE(r.eigenvalues.size(), 1u);
  if (r.eigenvalues.size() > 1) EXPECT_LE(r.eigenvalues[1], 1e-8 * r.eigenvalues[0]);
}

TEST(Mds, EigenvaluesDescendAndErrors) {
  std::mt19937_64 rng(43);
  const auto pts = random_points(rng, 12, 6);
  MdsOptions o;
  o.out_dim = 4;
  const auto r = mds_project(pts, o);
  for (std::size_t i = 1; i < r.eigenvalues.size(); ++i) EXPECT_GE(r.eigenvalues[i - 1], r.eigenvalues[i]);
  EXPECT_LT(r.retained_ratio, 1.0);
  EXPECT_THROW(mds_project(std::vector<std::vector<double>>(2, {1.0})), ContractError);
  o.max_iterations = 1;
  o.tolerance = 1e-15;
  EXPECT_THROW(mds_project(pts, o), NumericError);
}

TEST(Mds, CsvAndSvg) {
  std::mt19937_64 rng(44);
  const auto r = mds_project(random_points(rng, 4, 3));
  const std::vector<std::string> ids{"a", "b", "c", "d"}, groups{"T", "T", "V", "V"};
  const std::string csv = mds_csv(r, ids, groups);
  EXPECT_EQ(csv.rfind("id,group,x,y\n", 0), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
  const std::string svg = mds_svg(r, groups);
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
  EXPECT_NE(svg.find("</svg>"), std::string::npos);
}
