#include "lat/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cctype>
#include <chrono>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "lat/checkpoint.hpp"
#include "lat/data.hpp"
#include "lat/retrieval.hpp"
#include "lat/trainer.hpp"

namespace lat::cli {

namespace {

using KeyValues = std::vector<std::pair<std::string, std::string>>;

struct Manifest {
  std::string subcommand;
  KeyValues config;
  KeyValues inputs;
  KeyValues outputs;
  std::string seed = "none";
};

void write_manifest(const Manifest& m, const std::string& artifact, double seconds) {
  std::ostringstream os;
  os << "subcommand=" << m.subcommand << '\n';
  os << "tool_version=" << kToolVersion << '\n';
  os << "seed=" << m.seed << '\n';
  for (const auto& [k, v] : m.inputs) os << "input." << k << '=' << v << '\n';
  for (const auto& [k, v] : m.outputs) os << "output." << k << '=' << v << '\n';
  for (const auto& [k, v] : m.config) os << "config." << k << '=' << v << '\n';
  os << "duration_seconds=" << format_float(seconds) << '\n';
  write_file(artifact + ".manifest", os.str());
}

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

// Splices "--key value" pairs from a key=value file into the argument list,
// after the subcommand, for every key not already given as a flag.
std::vector<std::string> apply_config_file(std::vector<std::string> args) {
  std::optional<std::string> path;
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
  }
  if (!path || args.size() < 2) return args;

  std::istringstream in(read_file(*path));
  std::vector<std::string> extra;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(*path + ":" + std::to_string(line_no) + ": expected key=value");
    }
    std::string key = trim(line.substr(0, eq));
    if (key.rfind("--", 0) == 0) key.erase(0, 2);
    const std::string flag = "--" + key;
    const bool given = std::any_of(args.begin(), args.end(), [&](const std::string& a) {
      return a == flag || a.rfind(flag + "=", 0) == 0;
    });
    if (!given) {
      extra.push_back(flag);
      extra.push_back(trim(line.substr(eq + 1)));
    }
  }
  args.insert(args.begin() + 2, extra.begin(), extra.end());
  return args;
}

std::vector<std::size_t> evaluation_items(const TrainConfig& config, std::size_t count,
                                          const std::string& split) {
  if (split == "all" || config.holdout == 0 || config.holdout >= count) {
    std::vector<std::size_t> all(count);
    for (std::size_t i = 0; i < count; ++i) all[i] = i;
    return all;
  }
  if (split != "holdout") throw ConfigError("unknown split '" + split + "' (expected holdout or all)");
  return holdout_split(count, config.holdout).eval;
}

void print_report(std::ostream& out, const EvaluationReport& report) {
  out << "direction,R@1,R@5,R@10,MedR,gallery\n";
  for (const auto* r : {&report.t2v, &report.v2t}) {
    out << to_string(r->direction) << ',' << format_float(r->r1) << ',' << format_float(r->r5) << ','
        << format_float(r->r10) << ',' << format_float(r->median_rank) << ',' << r->gallery_size << '\n';
  }
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    part = trim(part);
    if (!part.empty()) out.push_back(part);
  }
  return out;
}

struct GenArgs {
  SyntheticConfig config;
  std::string mapping = "orthogonal_plus_tanh";
  std::string out;
  std::string csv;
};

struct TrainArgs {
  TrainConfig config;
  std::string method = "decoder";
  std::optional<std::size_t> queries;
  std::optional<std::size_t> epochs;
  std::string data, out, history, resume;
  bool save_every_epoch = false;
};

struct ModelArgs {
  std::string data, checkpoint, out, split = "holdout", groups = "T,V,GT,FV", svg;
  std::size_t count = 0;
  MdsOptions mds;
};

int cmd_gen(GenArgs& a, std::ostream& out) {
  const auto start = std::chrono::steady_clock::now();
  a.config.mapping = parse_mapping(a.mapping);
  a.config.validate();
  const EmbeddingPairSet set = generate_synthetic(a.config);
  save_set(set, a.out);
  Manifest m{"gen", {}, {}, {{"data", a.out}}, std::to_string(a.config.seed)};
  if (!a.csv.empty()) {
    write_file(a.csv, export_csv(set));
    m.outputs.emplace_back("csv", a.csv);
  }
  m.config = {{"items", std::to_string(a.config.items)},
              {"dim", std::to_string(a.config.dim)},
              {"tokens_a", std::to_string(a.config.visual_tokens)},
              {"tokens_b", std::to_string(a.config.text_tokens)},
              {"mapping", to_string(a.config.mapping)},
              {"noise", exact_decimal(a.config.noise_std)},
              {"seed", std::to_string(a.config.seed)}};
  write_manifest(m, a.out, std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  out << "wrote " << set.count() << " items (" << set.visual_tokens() << "/" << set.text_tokens()
      << " tokens, d=" << set.dim() << ") to " << a.out << '\n';
  return kExitOk;
}

int cmd_train(TrainArgs& a, std::ostream& out) {
  const auto start = std::chrono::steady_clock::now();
  const EmbeddingPairSet set = load_set(a.data);
  std::optional<Trainer> trainer;
  if (!a.resume.empty()) {
    trainer.emplace(load_checkpoint(a.resume), set);
  } else {
    a.config.model.method = parse_method(a.method);
    if (a.queries) {
      a.config.model.queries_g = *a.queries;
      a.config.model.queries_f = *a.queries;
    }
    if (a.epochs) a.config.epochs = *a.epochs;
    trainer.emplace(a.config, set);
  }
  if (a.epochs) trainer->set_epochs(*a.epochs);

  const std::string history_path = a.history.empty() ? a.out + ".history.csv" : a.history;
  trainer->run([&](const EpochStats& row) {
    out << "epoch " << row.epoch << " total=" << format_float(row.total) << " inter=" << format_float(row.inter)
        << " intra=" << format_float(row.intra) << '\n';
    if (a.save_every_epoch) save_checkpoint(trainer->checkpoint(), a.out);
  });

  const auto& eval = trainer->split().eval;
  if (!eval.empty()) {
    const EvaluationReport report = evaluate(trainer->model(), set, eval);
    trainer->set_metric("t2v_r1", report.t2v.r1);
    trainer->set_metric("t2v_r5", report.t2v.r5);
    trainer->set_metric("t2v_r10", report.t2v.r10);
    trainer->set_metric("t2v_medr", report.t2v.median_rank);
    trainer->set_metric("v2t_r1", report.v2t.r1);
    trainer->set_metric("v2t_r5", report.v2t.r5);
    trainer->set_metric("v2t_r10", report.v2t.r10);
    trainer->set_metric("v2t_medr", report.v2t.median_rank);
    trainer->set_metric("cycle_mse", mean_cycle_mse(trainer->model(), set, eval));
    print_report(out, report);
  }
  save_checkpoint(trainer->checkpoint(), a.out);
  write_file(history_path, history_csv(trainer->history()));

  Manifest m{"train", trainer->config().to_key_values(), {{"data", a.data}},
             {{"checkpoint", a.out}, {"history", history_path}}, std::to_string(trainer->config().seed)};
  if (!a.resume.empty()) m.inputs.emplace_back("resume", a.resume);
  write_manifest(m, a.out, std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  return kExitOk;
}

struct Loaded {
  EmbeddingPairSet set;
  Checkpoint checkpoint;
  TrainConfig config;
  TranslatorPair<float> model;
};

Loaded load_inputs(const ModelArgs& a) {
  EmbeddingPairSet set = load_set(a.data);
  Checkpoint cp = load_checkpoint(a.checkpoint);
  TrainConfig config = TrainConfig::from_key_values(cp.config);
  TranslatorPair<float> model = load_model(cp, &set);
  return {std::move(set), std::move(cp), config, std::move(model)};
}

int cmd_eval(const ModelArgs& a, std::ostream& out) {
  const auto start = std::chrono::steady_clock::now();
  const Loaded in = load_inputs(a);
  const auto items = evaluation_items(in.config, in.set.count(), a.split);
  const EvaluationReport report = evaluate(in.model, in.set, items);
  print_report(out, report);
  if (!a.out.empty()) {
    write_file(a.out, report_csv(report));
    Manifest m{"eval", {{"split", a.split}}, {{"data", a.data}, {"checkpoint", a.checkpoint}}, {{"report", a.out}},
               std::to_string(in.config.seed)};
    write_manifest(m, a.out, std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  }
  return kExitOk;
}

std::vector<std::size_t> first_items(const Loaded& in, const ModelArgs& a) {
  auto items = evaluation_items(in.config, in.set.count(), a.split);
  if (a.count > 0 && a.count < items.size()) items.resize(a.count);
  return items;
}

int cmd_diagnose(const ModelArgs& a, std::ostream& out) {
  const auto start = std::chrono::steady_clock::now();
  const Loaded in = load_inputs(a);
  const auto items = first_items(in, a);
  const auto groups = gap_groups(in.model, in.set, items);
  write_file(a.out, similarity_csv(similarity_table(groups)));
  if (items.size() >= 2) {
    const PairContrast fv_t = pair_contrast(groups[3], groups[0]);
    const PairContrast gt_v = pair_contrast(groups[2], groups[1]);
    const PairContrast v_t = pair_contrast(groups[1], groups[0]);
    out << "pair,matched,mismatched\n";
    out << "FV-T," << format_float(fv_t.matched) << ',' << format_float(fv_t.mismatched) << '\n';
    out << "GT-V," << format_float(gt_v.matched) << ',' << format_float(gt_v.mismatched) << '\n';
    out << "V-T," << format_float(v_t.matched) << ',' << format_float(v_t.mismatched) << '\n';
  }
  Manifest m{"diagnose", {{"split", a.split}, {"count", std::to_string(items.size())}},
             {{"data", a.data}, {"checkpoint", a.checkpoint}}, {{"similarity", a.out}},
             std::to_string(in.config.seed)};
  write_manifest(m, a.out, std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  return kExitOk;
}

int cmd_project(const ModelArgs& a, std::ostream& out) {
  const auto start = std::chrono::steady_clock::now();
  const Loaded in = load_inputs(a);
  const auto items = first_items(in, a);
  const auto wanted = split_list(a.groups);
  if (wanted.empty()) throw ConfigError("--groups names no group");
  const auto all = gap_groups(in.model, in.set, items);
  std::vector<EmbeddingGroup> chosen;
  for (const auto& name : wanted) {
    const auto it = std::find_if(all.begin(), all.end(), [&](const EmbeddingGroup& g) { return g.label == name; });
    if (it == all.end()) throw ConfigError("unknown group '" + name + "' (expected T, V, GT or FV)");
    chosen.push_back(*it);
  }
  std::vector<std::vector<double>> points;
  std::vector<std::string> ids, labels;
  for (const auto& g : chosen) {
    for (std::size_t i = 0; i < g.vectors.size(); ++i) {
      points.push_back(g.vectors[i]);
      ids.push_back(g.ids[i]);
      labels.push_back(g.label);
    }
  }
  const MdsResult result = mds_project(points, a.mds);
  write_file(a.out, mds_csv(result, ids, labels));
  Manifest m{"project",
             {{"groups", a.groups}, {"split", a.split}, {"count", std::to_string(items.size())},
              {"tolerance", exact_decimal(a.mds.tolerance)}, {"max_iterations", std::to_string(a.mds.max_iterations)}},
             {{"data", a.data}, {"checkpoint", a.checkpoint}},
             {{"coordinates", a.out}},
             std::to_string(in.config.seed)};
  if (!a.svg.empty()) {
    write_file(a.svg, mds_svg(result, labels));
    m.outputs.emplace_back("svg", a.svg);
  }
  write_manifest(m, a.out, std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  out << "projected " << result.points << " embeddings, retained eigenvalue ratio "
      << format_float(result.retained_ratio) << '\n';
  return kExitOk;
}

int cmd_export(const ModelArgs& a, std::ostream& out) {
  const auto start = std::chrono::steady_clock::now();
  const EmbeddingPairSet set = load_set(a.data);
  write_file(a.out, export_csv(set));
  write_manifest(Manifest{"export", {}, {{"data", a.data}}, {{"csv", a.out}}}, a.out,
                 std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  out << "exported " << set.count() << " items to " << a.out << '\n';
  return kExitOk;
}

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Latent translation between two embedding modalities", "latent"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);
  std::string config_path;

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "Generate a synthetic paired-embedding set");
  g->add_option("--config", config_path, "key=value file of defaults (flags win)");
  g->add_option("--items", gen.config.items, "Number of items")->capture_default_str();
  g->add_option("--dim", gen.config.dim, "Embedding dimension")->capture_default_str();
  g->add_option("--tokens-a", gen.config.visual_tokens, "Visual tokens per item (CLS + detail)")->capture_default_str();
  g->add_option("--tokens-b", gen.config.text_tokens, "Text tokens per item (CLS + detail)")->capture_default_str();
  g->add_option("--mapping", gen.mapping, "identity, orthogonal or orthogonal_plus_tanh")->capture_default_str();
  g->add_option("--noise", gen.config.noise_std, "Gaussian noise std on text tokens")->capture_default_str();
  g->add_option("--seed", gen.config.seed, "Random seed")->capture_default_str();
  g->add_option("--out", gen.out, "Output LATE file")->required();
  g->add_option("--csv", gen.csv, "Also export a token CSV");

  TrainArgs train;
  auto& tc = train.config;
  auto* t = app.add_subcommand("train", "Train a translator pair");
  t->add_option("--config", config_path, "key=value file of defaults (flags win)");
  t->add_option("--data", train.data, "Input LATE file")->required();
  t->add_option("--out", train.out, "Output LATC checkpoint")->required();
  t->add_option("--history", train.history, "Loss history CSV (default: <out>.history.csv)");
  t->add_option("--resume", train.resume, "Continue from this checkpoint");
  t->add_flag("--save-every-epoch", train.save_every_epoch, "Rewrite the checkpoint after each epoch");
  t->add_option("--method", train.method, "none, linear, transformer or decoder")->capture_default_str();
  t->add_option("--depth", tc.model.depth, "Decoder depth")->capture_default_str();
  t->add_option("--heads", tc.model.attention.heads, "Attention heads")->capture_default_str();
  t->add_option("--baseline-layers", tc.model.baseline_layers, "Layers of the linear/transformer baselines")
      ->capture_default_str();
  t->add_option("--linear-activation", tc.model.linear_activation, "GELU between linear baseline layers")
      ->capture_default_str();
  t->add_option("--queries", train.queries, "Token queries of both translators (default: target token count)");
  t->add_option("--queries-g", tc.model.queries_g, "Token queries of G (0: visual token count)");
  t->add_option("--queries-f", tc.model.queries_f, "Token queries of F (0: text token count)");
  t->add_option("--tau", tc.weights.tau, "InfoNCE temperature")->capture_default_str();
  t->add_option("--lambda-inter", tc.weights.lambda_inter)->capture_default_str();
  t->add_option("--lambda-intra", tc.weights.lambda_intra)->capture_default_str();
  t->add_option("--lambda-global", tc.weights.lambda_global)->capture_default_str();
  t->add_option("--lambda-token", tc.weights.lambda_token)->capture_default_str();
  t->add_option("--bank", tc.bank_capacity, "Memory bank capacity per modality")->capture_default_str();
  t->add_option("--epochs", train.epochs, "Epochs (default " + std::to_string(tc.epochs) + ")");
  t->add_option("--batch", tc.batch_size, "Batch size")->capture_default_str();
  t->add_option("--lr", tc.adam.learning_rate, "Adam learning rate")->capture_default_str();
  t->add_option("--beta1", tc.adam.beta1)->capture_default_str();
  t->add_option("--beta2", tc.adam.beta2)->capture_default_str();
  t->add_option("--adam-eps", tc.adam.eps)->capture_default_str();
  t->add_option("--clip", tc.clip_norm, "Global gradient-norm clip")->capture_default_str();
  t->add_option("--holdout", tc.holdout, "Trailing items held out for evaluation")->capture_default_str();
  t->add_option("--seed", tc.seed, "Random seed")->capture_default_str();

  ModelArgs eval, diag, proj, exp;
  auto* e = app.add_subcommand("eval", "Retrieval metrics of a checkpoint");
  auto* d = app.add_subcommand("diagnose", "Cosine-similarity table across T, V, GT and FV");
  auto* p = app.add_subcommand("project", "Classical MDS coordinates of chosen embedding groups");
  for (auto [cmd, target] : {std::pair{e, &eval}, std::pair{d, &diag}, std::pair{p, &proj}}) {
    cmd->add_option("--config", config_path, "key=value file of defaults (flags win)");
    cmd->add_option("--data", target->data, "Input LATE file")->required();
    cmd->add_option("--checkpoint", target->checkpoint, "Trained LATC checkpoint")->required();
    cmd->add_option("--split", target->split, "holdout or all")->capture_default_str();
  }
  e->add_option("--out", eval.out, "Report CSV (metric,value)");
  diag.count = 8;
  d->add_option("--count", diag.count, "Items per group")->capture_default_str();
  d->add_option("--out", diag.out, "Similarity matrix CSV")->required();
  proj.count = 64;
  p->add_option("--count", proj.count, "Items per group")->capture_default_str();
  p->add_option("--groups", proj.groups, "Comma-separated groups among T,V,GT,FV")->capture_default_str();
  p->add_option("--out", proj.out, "Coordinates CSV (id,group,x,y)")->required();
  p->add_option("--svg", proj.svg, "Scatter plot SVG");
  p->add_option("--tolerance", proj.mds.tolerance, "Power-iteration tolerance")->capture_default_str();
  p->add_option("--max-iterations", proj.mds.max_iterations)->capture_default_str();

  auto* x = app.add_subcommand("export", "Export a LATE file as token CSV");
  x->add_option("--config", config_path, "key=value file of defaults (flags win)");
  x->add_option("--data", exp.data, "Input LATE file")->required();
  x->add_option("--out", exp.out, "Output CSV")->required();

  std::vector<const char*> argv;
  for (const auto& s : args) argv.push_back(s.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& error) {
    const int code = app.exit(error, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  if (g->parsed()) return cmd_gen(gen, out);
  if (t->parsed()) return cmd_train(train, out);
  if (e->parsed()) return cmd_eval(eval, out);
  if (d->parsed()) return cmd_diagnose(diag, out);
  if (p->parsed()) return cmd_project(proj, out);
  return cmd_export(exp, out);
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  try {
    std::vector<std::string> args(argv, argv + argc);
    if (args.empty()) args.emplace_back("latent");
    return dispatch(apply_config_file(std::move(args)), out, err);
  } catch (const ConfigError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ContractError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const FormatError& e) {
    err << "format error: " << e.what() << '\n';
    return kExitData;
  } catch (const FileError& e) {
    err << "file error: " << e.what() << '\n';
    return kExitData;
  } catch (const DimensionError& e) {
    err << "dimension error: " << e.what() << '\n';
    return kExitData;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const DegenerateVectorError& e) {
    err << "numeric error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

}  // namespace lat::cli
