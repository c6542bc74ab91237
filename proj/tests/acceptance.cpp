// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails.

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>

#include "lat/binary_io.hpp"
#include "lat/cli.hpp"
#include "lat/losses.hpp"
#include "lat/retrieval.hpp"
#include "lat/trainer.hpp"
#include "support.hpp"

using namespace lat;
using lat::testing::gradcheck;
using lat::testing::naive_info_nce;
using lat::testing::uniform;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

int failures = 0;

void report(int id, const std::string& name, bool pass, const std::string& detail) {
  std::printf("%s %2d %s: %s\n", pass ? "PASS" : "FAIL", id, name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

std::string fmt(const char* pattern, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, pattern, a, b, c, d);
  return buf;
}

void run_guarded(int id, const std::string& name, const std::function<void()>& body) {
  try {
    body();
  } catch (const std::exception& e) {
    report(id, name, false, std::string("exception: ") + e.what());
  }
}

// ---- 1 ---------------------------------------------------------------------------

void gradient_integrity() {
  const auto start = Clock::now();
  std::mt19937_64 rng(101);
  const auto u = [&](Shape s) { return uniform<double>(s, rng); };
  double worst = 0.0;
  std::size_t checks = 0;
  const auto check = [&](std::vector<TensorD> in, const std::function<TensorD()>& f) {
    worst = std::max(worst, gradcheck(std::move(in), f));
    ++checks;
  };

  TensorD a = u(Shape{3, 4}), b = u(Shape{4, 2}), c = u(Shape{2, 3, 4});
  TensorD e1 = u(Shape{2, 3}), e2 = u(Shape{2, 3}), bias = u(Shape{3});
  TensorD x = u(Shape{2, 3, 4}), y = u(Shape{2, 2, 4}), m = u(Shape{3, 5}), sq = u(Shape{4, 4});
  TensorD r = u(Shape{3, 5}), gamma = u(Shape{5}), beta = u(Shape{5});
  const TensorD target = u(Shape{3, 5}), wt = u(Shape{2, 4, 3});
  const std::size_t idx[] = {2, 0, 2};
  check({a, b}, [&] { const auto p = matmul(a, b); return sum(mul(p, p)); });
  check({c, b}, [&] { return sum(gelu(matmul(c, b))); });
  check({e1, e2}, [&] { return sum(mul(add(e1, e2), sub(e1, e2))); });
  check({e1, bias}, [&] { return sum(mul(add_broadcast(e1, bias), e1)); });
  check({e1}, [&] { return mean(mul(scale(e1, 3.0), gelu(e1))); });
  for (std::size_t axis = 0; axis < 3; ++axis) {
    check({x}, [&] { const auto mm = mean_axis(x, axis); return sum(mul(mm, mm)); });
  }
  check({x}, [&] { const auto l = logsumexp_rows(x); return sum(mul(l, l)); });
  check({x}, [&] { return sum(mul(transpose(x), wt)); });
  check({x, y}, [&] { const auto cc = concat(x, y, 1); return sum(mul(cc, cc)); });
  check({x}, [&] { const auto s = slice(x, 1, 1, 3); return sum(mul(s, s)); });
  check({x}, [&] { const auto s = select(x, 2, 1); return sum(mul(s, s)); });
  check({x}, [&] { const auto rr = reshape(x, Shape{6, 4}); return sum(mul(rr, rr)); });
  check({m}, [&] { const auto g = gather_rows(m, idx); return sum(mul(g, g)); });
  check({sq}, [&] { const auto d = diagonal(sq); return sum(mul(d, d)); });
  check({r}, [&] { return sum(mul(softmax_rows(r), target)); });
  check({r, gamma, beta}, [&] { return sum(mul(layer_norm(r, gamma, beta, 1e-5), target)); });
  check({r}, [&] { return sum(mul(l2_normalize(r), target)); });

  TensorD q = u(Shape{2, 3, 4}), k = u(Shape{2, 5, 4}), v = u(Shape{2, 5, 4});
  const TensorD aw = u(Shape{2, 3, 4});
  check({q, k, v}, [&] { return sum(mul(scaled_dot_product_attention(q, k, v, 2), aw)); });

  TensorD sim = u(Shape{4, 4});
  check({sim}, [&] { return info_nce(sim, 0.1, NceDirection::kVisualToText); });
  check({sim}, [&] { return info_nce(sim, 0.1, NceDirection::kTextToVisual); });
  TensorD c1 = u(Shape{2, 4}), c2 = u(Shape{2, 4}), c3 = u(Shape{2, 4}), c4 = u(Shape{2, 4});
  check({c1, c2, c3, c4}, [&] { return cycle_mse(c1, c2, c3, c4); });

  // full objective on a 2-item batch, over every translator parameter and both inputs
  ModelConfig mc;
  mc.attention.dim = 4;
  mc.attention.heads = 2;
  mc.attention.ffn_multiplier = 2;
  mc.depth = 2;
  mc.visual_tokens = 3;
  mc.text_tokens = 4;
  const TranslatorPair<double> pair(mc, 7);
  lat::testing::randomize(pair.parameters(), rng);
  TensorD vis = u(Shape{2, 3, 4}), txt = u(Shape{2, 4, 4});
  LossWeights w;
  w.tau = 0.5;
  NegativeSet<double> bank;
  bank.visual_global = u(Shape{3, 4});
  bank.text_global = u(Shape{3, 4});
  bank.visual_token = u(Shape{3, 4});
  bank.text_token = u(Shape{3, 4});
  const auto objective = [&] {
    TranslationBatch<double> batch{vis, txt, pair.g().forward(txt), pair.f().forward(vis), std::nullopt,
                                   std::nullopt};
    batch.visual_cycle = pair.g().forward(batch.visual_to_text);
    batch.text_cycle = pair.f().forward(batch.text_to_visual);
    return total_loss(batch, w, &bank).total;
  };
  std::vector<TensorD> params{vis, txt};
  for (const auto& p : pair.parameters()) params.push_back(p.tensor);
  const double full = gradcheck(params, objective);
  worst = std::max(worst, full);
  ++checks;

  const double elapsed = seconds_since(start);
  report(1, "gradient integrity", worst <= 1e-4 && elapsed < 60.0,
         fmt("%.0f checks, max relative error %.2e (full objective %.2e), %.1f s", double(checks), worst, full,
             elapsed));
}

// ---- 2 ---------------------------------------------------------------------------

void loss_oracles() {
  std::mt19937_64 rng(202);
  std::uniform_int_distribution<std::size_t> size(4, 8);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = size(rng);
    const TensorD sim = uniform<double>(Shape{n, n}, rng);
    const std::vector<double> raw(sim.data().begin(), sim.data().end());
    for (const bool t2v : {false, true}) {
      const double got =
          info_nce(sim, 0.05, t2v ? NceDirection::kTextToVisual : NceDirection::kVisualToText).item();
      worst = std::max(worst, std::abs(got - naive_info_nce(raw, n, 0.05, t2v)));
    }
  }
  bool single_zero = true;
  for (const double s : {-3.0, 0.0, 0.7, 1e6}) {
    const TensorD one(Shape{1, 1}, {s});
    single_zero = single_zero && info_nce(one, 0.05, NceDirection::kVisualToText).item() == 0.0 &&
                  info_nce(one, 0.05, NceDirection::kTextToVisual).item() == 0.0;
  }
  double uniform_err = 0.0;
  for (std::size_t n = 2; n <= 16; ++n) {
    const TensorD flat = TensorD::full(Shape{n, n}, 0.42);
    for (const auto d : {NceDirection::kVisualToText, NceDirection::kTextToVisual}) {
      uniform_err = std::max(uniform_err, std::abs(info_nce(flat, 0.05, d).item() - std::log(double(n))));
    }
  }
  report(2, "loss oracles", worst <= 1e-6 && single_zero && uniform_err <= 1e-6,
         fmt("max |nce - oracle| %.2e over 100 matrices, max |uniform - ln N| %.2e, N=1 exact zero: ", worst,
             uniform_err) +
             (single_zero ? "yes" : "no"));
}

// ---- 3 ---------------------------------------------------------------------------

void decoder_invariances() {
  std::mt19937_64 rng(303);
  std::uniform_int_distribution<std::size_t> depth_d(1, 3), heads_d(1, 4), len_d(1, 12), width_d(2, 4);
  double src_err = 0.0, query_err = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    AttentionConfig c;
    c.heads = heads_d(rng);
    c.dim = c.heads * width_d(rng);
    c.ffn_multiplier = 2;
    const DecoderStack<float> stack(c, depth_d(rng), rng);
    const std::size_t m = len_d(rng), l = len_d(rng);
    const Tensor queries = uniform<float>(Shape{m, c.dim}, rng);
    const Tensor source = uniform<float>(Shape{l, c.dim}, rng);
    std::vector<std::size_t> sp(l), qp(m);
    std::iota(sp.begin(), sp.end(), 0);
    std::iota(qp.begin(), qp.end(), 0);
    std::shuffle(sp.begin(), sp.end(), rng);
    std::shuffle(qp.begin(), qp.end(), rng);
    const Tensor base = stack.forward(queries, source);
    const Tensor by_source = stack.forward(queries, gather_rows(source, std::span<const std::size_t>(sp)));
    const Tensor by_query = stack.forward(gather_rows(queries, std::span<const std::size_t>(qp)), source);
    const Tensor expected = gather_rows(base, std::span<const std::size_t>(qp));
    for (std::size_t i = 0; i < base.numel(); ++i) {
      src_err = std::max(src_err, std::abs(double(base.data()[i]) - by_source.data()[i]));
      query_err = std::max(query_err, std::abs(double(expected.data()[i]) - by_query.data()[i]));
    }
  }
  report(3, "decoder invariances", src_err <= 1e-5 && query_err <= 1e-5,
         fmt("100 configurations, source permutation max deviation %.2e, query permutation max deviation %.2e",
             src_err, query_err));
}

// ---- 4, 5, 6, 7, 9 ---------------------------------------------------------------

struct TrainedRun {
  EvaluationReport report;
  double cycle_before = 0.0;
  double cycle_after = 0.0;
  double seconds = 0.0;
  PairContrast fv_t, gt_v;
};

TrainedRun train_and_evaluate(const EmbeddingPairSet& set, TrainConfig config, bool diagnostics) {
  TrainedRun run;
  Trainer trainer(config, set);
  const auto& eval = trainer.split().eval;
  run.cycle_before = mean_cycle_mse(trainer.model(), set, eval);
  const auto start = Clock::now();
  trainer.run();
  run.seconds = seconds_since(start);
  run.report = evaluate(trainer.model(), set, eval);
  run.cycle_after = mean_cycle_mse(trainer.model(), set, eval);
  if (diagnostics) {
    const auto groups = gap_groups(trainer.model(), set, eval);
    run.fv_t = pair_contrast(groups[3], groups[0]);
    run.gt_v = pair_contrast(groups[2], groups[1]);
  }
  return run;
}

double r1(const TrainedRun& r, Direction d) {
  return d == Direction::kTextToVisual ? r.report.t2v.r1 : r.report.v2t.r1;
}

class IdentityStub final : public TranslationNetwork<float> {
 public:
  IdentityStub(Direction d, std::size_t dim) : TranslationNetwork<float>(d), dim_(dim) {}
  Tensor forward(const Tensor& source) const override { return source; }
  void collect_parameters(const std::string&, ParameterList<float>&) const override {}
  TranslationMethod method() const override { return TranslationMethod::kNone; }
  std::size_t dim() const override { return dim_; }

 private:
  std::size_t dim_;
};

void training_criteria() {
  const EmbeddingPairSet set = generate_synthetic(SyntheticConfig{});
  TrainConfig base;
  std::printf("     training on %zu items (d=%zu, %zu/%zu tokens), %zu epochs per method\n", set.count(), set.dim(),
              set.visual_tokens(), set.text_tokens(), base.epochs);
  std::fflush(stdout);

  const TrainedRun decoder = train_and_evaluate(set, base, true);
  const double dt = decoder.report.t2v.r1, dv = decoder.report.v2t.r1;
  report(4, "synthetic recovery", dt >= 0.9 && dv >= 0.9 && decoder.seconds <= 300.0,
         fmt("decoder T2V R@1 %.4f, V2T R@1 %.4f on %.0f held-out items, trained in %.1f s", dt, dv,
             double(decoder.report.t2v.gallery_size), decoder.seconds));

  std::vector<std::pair<std::string, TrainedRun>> baselines;
  for (const auto method : {TranslationMethod::kTransformer, TranslationMethod::kLinear, TranslationMethod::kNone}) {
    TrainConfig c = base;
    c.model.method = method;
    baselines.emplace_back(to_string(method), train_and_evaluate(set, c, false));
  }
  bool ordered = true;
  std::ostringstream detail;
  for (const auto d : {Direction::kTextToVisual, Direction::kVisualToText}) {
    const double de = r1(decoder, d), tr = r1(baselines[0].second, d), li = r1(baselines[1].second, d),
                 no = r1(baselines[2].second, d);
    ordered = ordered && de >= tr && tr >= li && de >= no + 0.05;
    detail << (d == Direction::kTextToVisual ? "T2V" : "; V2T") << " decoder " << de << " transformer " << tr
           << " linear " << li << " none " << no;
  }
  report(5, "ablation ordering", ordered, detail.str());

  TrainConfig quarter = base;
  quarter.model.queries_g = static_cast<std::size_t>(std::lround(set.visual_tokens() / 4.0));
  quarter.model.queries_f = static_cast<std::size_t>(std::lround(set.text_tokens() / 4.0));
  const TrainedRun few = train_and_evaluate(set, quarter, false);
  const bool queries_ok = dt >= few.report.t2v.r1 && dv >= few.report.v2t.r1;
  report(6, "query-count sensitivity", queries_ok,
         fmt("R@1 with %.0f/%.0f queries: T2V %.4f V2T %.4f", double(set.visual_tokens()),
             double(set.text_tokens()), dt, dv) +
             fmt("; with %.0f/%.0f queries: T2V %.4f V2T %.4f", double(quarter.model.queries_g),
                 double(quarter.model.queries_f), few.report.t2v.r1, few.report.v2t.r1));

  const IdentityStub g(Direction::kTextToVisual, set.dim()), f(Direction::kVisualToText, set.dim());
  const std::vector<std::size_t> head{0, 1, 2, 3};
  const Tensor v = take_items(set.visual, head), t = take_items(set.text, head);
  const double stub = cycle_mse(cycle(f, g, v), v, cycle(g, f, t), t).item();
  const double ratio = decoder.cycle_after / decoder.cycle_before;
  report(7, "cycle property", ratio <= 0.2 && stub == 0.0,
         fmt("cycle MSE %.4f at init, %.4f after training (%.1f%%), identity stubs %.1f", decoder.cycle_before,
             decoder.cycle_after, 100.0 * ratio, stub));

  const double gap_fv = decoder.fv_t.matched - decoder.fv_t.mismatched;
  const double gap_gt = decoder.gt_v.matched - decoder.gt_v.mismatched;
  report(9, "gap-diagnostic ordering", gap_fv >= 0.2 && gap_gt >= 0.2,
         fmt("FV-T matched %.4f vs mismatched %.4f; GT-V matched %.4f vs mismatched %.4f", decoder.fv_t.matched,
             decoder.fv_t.mismatched, decoder.gt_v.matched, decoder.gt_v.mismatched));
}

// ---- 8 ---------------------------------------------------------------------------

void metric_oracle() {
  std::mt19937_64 rng(808);
  std::uniform_int_distribution<std::size_t> size(1, 64);
  std::uniform_int_distribution<int> level(0, 3);
  std::uniform_real_distribution<double> real(-1.0, 1.0);
  std::size_t mismatches = 0, tie_cases = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t q = size(rng), g = size(rng);
    const bool ties = trial % 2 == 0;
    std::vector<double> scores(q * g);
    for (auto& s : scores) s = ties ? level(rng) / 3.0 : real(rng);
    std::vector<std::size_t> truth(q);
    for (std::size_t i = 0; i < q; ++i) truth[i] = std::uniform_int_distribution<std::size_t>(0, g - 1)(rng);
    tie_cases += ties;

    const auto oracle = lat::testing::sort_ranks(scores, q, g, truth);
    std::size_t h1 = 0, h5 = 0, h10 = 0;
    for (const auto r : oracle) {
      h1 += r <= 1;
      h5 += r <= 5;
      h10 += r <= 10;
    }
    const auto got = report_from_ranks(true_pair_ranks(scores, q, g, truth), g, Direction::kTextToVisual);
    const bool same = got.ranks == oracle && got.r1 == double(h1) / double(q) && got.r5 == double(h5) / double(q) &&
                      got.r10 == double(h10) / double(q) &&
                      got.median_rank == lat::testing::sorted_median(oracle);
    mismatches += !same;
  }
  report(8, "metric oracle equivalence", mismatches == 0,
         fmt("%.0f of 1000 score matrices differ from the sort-based oracle (%.0f with ties)", double(mismatches),
             double(tie_cases)));
}

// ---- 10 --------------------------------------------------------------------------

void mds_correctness() {
  std::mt19937_64 rng(1010);
  std::normal_distribution<double> normal(0.0, 1.0);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 5 + static_cast<std::size_t>(trial);
    Eigen::MatrixXd plane(n, 2);
    for (std::size_t i = 0; i < n; ++i) plane.row(i) << normal(rng), normal(rng);
    // rotate into a random 2-D subspace of R^6
    Eigen::MatrixXd basis = Eigen::MatrixXd::NullaryExpr(6, 2, [&] { return normal(rng); });
    basis = Eigen::HouseholderQR<Eigen::MatrixXd>(basis).householderQ() * Eigen::MatrixXd::Identity(6, 2);
    const Eigen::MatrixXd lifted = plane * basis.transpose();
    std::vector<std::vector<double>> points(n, std::vector<double>(6));
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < 6; ++j) points[i][j] = lifted(i, j);
    }
    const MdsResult result = mds_project(points);
    Eigen::MatrixXd got(n, 2);
    for (std::size_t i = 0; i < n; ++i) got.row(i) << result.coordinates[2 * i], result.coordinates[2 * i + 1];

    // orthogonal Procrustes after centering
    const Eigen::MatrixXd a = got.rowwise() - got.colwise().mean();
    const Eigen::MatrixXd b = plane.rowwise() - plane.colwise().mean();
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(a.transpose() * b, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Eigen::MatrixXd aligned = a * (svd.matrixU() * svd.matrixV().transpose());
    worst = std::max(worst, (aligned - b).cwiseAbs().maxCoeff());
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        worst = std::max(worst, std::abs((got.row(i) - got.row(j)).norm() - (plane.row(i) - plane.row(j)).norm()));
      }
    }
  }
  const std::vector<std::vector<double>> same(6, std::vector<double>{0.3, -1.2, 4.0, 2.5});
  const MdsResult degenerate = mds_project(same);
  bool zeros = true;
  for (const double c : degenerate.coordinates) zeros = zeros && c == 0.0;
  report(10, "MDS correctness", worst <= 1e-6 && zeros,
         fmt("20 planar sets, max deviation after rigid alignment %.2e; identical points all zero: ", worst) +
             (zeros ? "yes" : "no"));
}

// ---- 11 --------------------------------------------------------------------------

int latent(std::vector<std::string> args) {
  args.insert(args.begin(), "latent");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  if (code != cli::kExitOk) std::fprintf(stderr, "%s", err.str().c_str());
  return code;
}

void reproducibility() {
  namespace fs = std::filesystem;
  const fs::path root = fs::temp_directory_path() / "lat_acceptance_repro";
  fs::remove_all(root);
  std::vector<std::string> checkpoints, reports, histories;
  for (const char* name : {"a", "b"}) {
    const fs::path dir = root / name;
    fs::create_directories(dir);
    const std::string data = (dir / "set.late").string(), ck = (dir / "model.latc").string(),
                      rep = (dir / "report.csv").string();
    int code = latent({"gen", "--items", "96", "--dim", "16", "--seed", "11", "--out", data});
    if (code == 0) {
      code = latent({"train", "--data", data, "--out", ck, "--epochs", "3", "--heads", "2", "--depth", "2",
                     "--holdout", "32", "--batch", "16", "--bank", "32", "--seed", "3"});
    }
    if (code == 0) code = latent({"eval", "--data", data, "--checkpoint", ck, "--out", rep});
    if (code != 0) {
      report(11, "reproducibility", false, "pipeline exited with status " + std::to_string(code));
      return;
    }
    checkpoints.push_back(read_file(ck));
    reports.push_back(read_file(rep));
    histories.push_back(read_file(ck + ".history.csv"));
  }
  fs::remove_all(root);
  const bool same = checkpoints[0] == checkpoints[1] && reports[0] == reports[1] && histories[0] == histories[1];
  report(11, "reproducibility", same,
         fmt("gen -> train -> eval twice: checkpoint %.0f bytes, report %.0f bytes, ", double(checkpoints[0].size()),
             double(reports[0].size())) +
             (same ? "byte-identical" : "outputs differ"));
}

}  // namespace

int main() {
  const auto start = Clock::now();
  run_guarded(1, "gradient integrity", gradient_integrity);
  run_guarded(2, "loss oracles", loss_oracles);
  run_guarded(3, "decoder invariances", decoder_invariances);
  run_guarded(8, "metric oracle equivalence", metric_oracle);
  run_guarded(10, "MDS correctness", mds_correctness);
  run_guarded(11, "reproducibility", reproducibility);
  run_guarded(4, "synthetic recovery", training_criteria);
  std::printf("%d criteria failed, %.1f s total\n", failures, seconds_since(start));
  return failures == 0 ? 0 : 1;
}
