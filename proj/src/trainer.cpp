#include "lat/trainer.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

namespace lat {

void AdamConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw ConfigError("Adam eps must be positive");
}

Adam::Adam(ParameterList<float> params, AdamConfig config)
    : params_(std::move(params)), config_(config) {
  config_.validate();
  for (const auto& p : params_) {
    m_.emplace_back(p.tensor.numel(), 0.0f);
    v_.emplace_back(p.tensor.numel(), 0.0f);
  }
}

void Adam::step() {
  ++step_;
  const double b1 = config_.beta1;
  const double b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& tensor = params_[i].tensor;
    auto data = tensor.mutable_data();
    const bool has_grad = tensor.has_grad();
    const auto grad = has_grad ? tensor.grad() : std::span<const float>{};
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < data.size(); ++j) {
      const double g = has_grad ? grad[j] : 0.0;
      m[j] = static_cast<float>(b1 * m[j] + (1.0 - b1) * g);
      v[j] = static_cast<float>(b2 * v[j] + (1.0 - b2) * g * g);
      const double m_hat = m[j] / c1;
      const double v_hat = v[j] / c2;
      data[j] = static_cast<float>(data[j] - config_.learning_rate * m_hat / (std::sqrt(v_hat) + config_.eps));
    }
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

double Adam::clip_grad_norm(double max_norm) {
  double sq = 0.0;
  for (const auto& p : params_) {
    if (!p.tensor.has_grad()) continue;
    for (const float g : p.tensor.grad()) sq += static_cast<double>(g) * g;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double scale = max_norm / norm;
    for (auto& p : params_) {
      if (!p.tensor.has_grad()) continue;
      for (float& g : p.tensor.mutable_grad()) g = static_cast<float>(g * scale);
    }
  }
  return norm;
}

void Adam::restore(std::vector<std::vector<float>> m, std::vector<std::vector<float>> v,
                   std::uint64_t step) {
  if (m.size() != params_.size() || v.size() != params_.size()) {
    throw DimensionError("Adam::restore: moment count does not match parameter count");
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (m[i].size() != params_[i].tensor.numel() || v[i].size() != params_[i].tensor.numel()) {
      throw DimensionError("Adam::restore: moment shape mismatch for " + params_[i].name);
    }
  }
  m_ = std::move(m);
  v_ = std::move(v);
  step_ = step;
}

// ---- configuration ------------------------------------------------------------------

void TrainConfig::validate() const {
  model.validate();
  weights.validate();
  adam.validate();
  if (batch_size < 2) throw ConfigError("batch size must be at least 2");
  if (!(clip_norm > 0.0)) throw ConfigError("gradient clip norm must be positive");
}

namespace {

std::string bool_text(bool b) { return b ? "true" : "false"; }

double parse_double(const std::string& key, const std::string& text) {
  double out = 0.0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), out);
  if (res.ec != std::errc{} || res.ptr != text.data() + text.size()) {
    throw ConfigError("invalid number for " + key + ": '" + text + "'");
  }
  return out;
}

std::uint64_t parse_unsigned(const std::string& key, const std::string& text) {
  std::uint64_t out = 0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), out);
  if (res.ec != std::errc{} || res.ptr != text.data() + text.size()) {
    throw ConfigError("invalid non-negative integer for " + key + ": '" + text + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError("invalid boolean for " + key + ": '" + text + "'");
}

}  // namespace

std::vector<std::pair<std::string, std::string>> TrainConfig::to_key_values() const {
  const auto d = exact_decimal;
  const auto u = [](std::uint64_t x) { return std::to_string(x); };
  return {
      {"method", to_string(model.method)},
      {"dim", u(model.attention.dim)},
      {"heads", u(model.attention.heads)},
      {"ffn_multiplier", u(model.attention.ffn_multiplier)},
      {"layer_norm_eps", d(model.attention.layer_norm_eps)},
      {"depth", u(model.depth)},
      {"baseline_layers", u(model.baseline_layers)},
      {"visual_tokens", u(model.visual_tokens)},
      {"text_tokens", u(model.text_tokens)},
      {"queries_g", u(model.queries_g)},
      {"queries_f", u(model.queries_f)},
      {"query_init_std", d(model.query_init_std)},
      {"linear_activation", bool_text(model.linear_activation)},
      {"tau", d(weights.tau)},
      {"lambda_inter", d(weights.lambda_inter)},
      {"lambda_intra", d(weights.lambda_intra)},
      {"lambda_global", d(weights.lambda_global)},
      {"lambda_token", d(weights.lambda_token)},
      {"learning_rate", d(adam.learning_rate)},
      {"beta1", d(adam.beta1)},
      {"beta2", d(adam.beta2)},
      {"eps", d(adam.eps)},
      {"epochs", u(epochs)},
      {"batch_size", u(batch_size)},
      {"seed", u(seed)},
      {"bank_capacity", u(bank_capacity)},
      {"clip_norm", d(clip_norm)},
      {"holdout", u(holdout)},
  };
}

TrainConfig TrainConfig::from_key_values(const std::vector<std::pair<std::string, std::string>>& kv) {
  TrainConfig c;
  for (const auto& [key, value] : kv) {
    if (key == "method") c.model.method = parse_method(value);
    else if (key == "dim") c.model.attention.dim = parse_unsigned(key, value);
    else if (key == "heads") c.model.attention.heads = parse_unsigned(key, value);
    else if (key == "ffn_multiplier") c.model.attention.ffn_multiplier = parse_unsigned(key, value);
    else if (key == "layer_norm_eps") c.model.attention.layer_norm_eps = parse_double(key, value);
    else if (key == "depth") c.model.depth = parse_unsigned(key, value);
    else if (key == "baseline_layers") c.model.baseline_layers = parse_unsigned(key, value);
    else if (key == "visual_tokens") c.model.visual_tokens = parse_unsigned(key, value);
    else if (key == "text_tokens") c.model.text_tokens = parse_unsigned(key, value);
    else if (key == "queries_g") c.model.queries_g = parse_unsigned(key, value);
    else if (key == "queries_f") c.model.queries_f = parse_unsigned(key, value);
    else if (key == "query_init_std") c.model.query_init_std = parse_double(key, value);
    else if (key == "linear_activation") c.model.linear_activation = parse_bool(key, value);
    else if (key == "tau") c.weights.tau = parse_double(key, value);
    else if (key == "lambda_inter") c.weights.lambda_inter = parse_double(key, value);
    else if (key == "lambda_intra") c.weights.lambda_intra = parse_double(key, value);
    else if (key == "lambda_global") c.weights.lambda_global = parse_double(key, value);
    else if (key == "lambda_token") c.weights.lambda_token = parse_double(key, value);
    else if (key == "learning_rate") c.adam.learning_rate = parse_double(key, value);
    else if (key == "beta1") c.adam.beta1 = parse_double(key, value);
    else if (key == "beta2") c.adam.beta2 = parse_double(key, value);
    else if (key == "eps") c.adam.eps = parse_double(key, value);
    else if (key == "epochs") c.epochs = parse_unsigned(key, value);
    else if (key == "batch_size") c.batch_size = parse_unsigned(key, value);
    else if (key == "seed") c.seed = parse_unsigned(key, value);
    else if (key == "bank_capacity") c.bank_capacity = parse_unsigned(key, value);
    else if (key == "clip_norm") c.clip_norm = parse_double(key, value);
    else if (key == "holdout") c.holdout = parse_unsigned(key, value);
  }
  return c;
}

std::string history_csv(std::span<const EpochStats> history) {
  std::ostringstream os;
  os << "epoch,mean_total,mean_inter,mean_intra,mean_global,mean_token\n";
  for (const auto& h : history) {
    os << h.epoch << ',' << format_float(h.total) << ',' << format_float(h.inter) << ','
       << format_float(h.intra) << ',' << format_float(h.global) << ',' << format_float(h.token) << '\n';
  }
  return os.str();
}

ModelConfig fit_to_data(ModelConfig model, const EmbeddingPairSet& set) {
  model.attention.dim = set.dim();
  model.visual_tokens = set.visual_tokens();
  model.text_tokens = set.text_tokens();
  return model;
}

// ---- trainer ------------------------------------------------------------------------

namespace {

TrainConfig prepared(TrainConfig config, const EmbeddingPairSet& set) {
  set.validate();
  config.model = fit_to_data(config.model, set);
  config.validate();
  if (config.holdout >= set.count()) {
    throw ConfigError("holdout (" + std::to_string(config.holdout) + ") must leave training items out of " +
                      std::to_string(set.count()));
  }
  if (config.batch_size > set.count() - config.holdout) {
    throw ConfigError("batch size " + std::to_string(config.batch_size) + " exceeds the " +
                      std::to_string(set.count() - config.holdout) + " training items");
  }
  return config;
}

std::string join_items(const std::vector<std::size_t>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(items[i]);
  }
  return out;
}

std::vector<std::size_t> split_items(const std::string& key, const std::string& text) {
  std::vector<std::size_t> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find(',', pos);
    if (end == std::string::npos) end = text.size();
    out.push_back(parse_unsigned(key, text.substr(pos, end - pos)));
    pos = end + 1;
  }
  return out;
}

void check_term(const Tensor& value, const char* term) {
  if (!std::isfinite(value.item())) {
    throw NumericError(std::string("non-finite loss term ") + term);
  }
}

void load_parameters(const ParameterList<float>& params, const Checkpoint& checkpoint) {
  for (const auto& p : params) {
    const auto* section = checkpoint.find_section("param/" + p.name);
    if (section == nullptr) throw FormatError("checkpoint: missing parameter section " + p.name, 0);
    if (!(section->shape == p.tensor.shape())) {
      throw DimensionError("checkpoint: parameter " + p.name + " has shape " + section->shape.str() +
                           ", model expects " + p.tensor.shape().str());
    }
    auto tensor = p.tensor;
    std::copy(section->data.begin(), section->data.end(), tensor.mutable_data().begin());
  }
}

}  // namespace

Trainer::Trainer(TrainConfig config, const EmbeddingPairSet& set)
    : config_(prepared(std::move(config), set)),
      set_(set),
      split_(holdout_split(set.count(), config_.holdout)),
      model_(config_.model, config_.seed),
      optimizer_(model_.parameters(), config_.adam),
      visual_bank_(config_.bank_capacity, Modality::kVisual, set.dim()),
      text_bank_(config_.bank_capacity, Modality::kText, set.dim()) {}

Trainer::Trainer(const Checkpoint& checkpoint, const EmbeddingPairSet& set)
    : Trainer(TrainConfig::from_key_values(checkpoint.config), set) {
  const TrainConfig stored = TrainConfig::from_key_values(checkpoint.config);
  if (stored.model.attention.dim != set.dim() || stored.model.visual_tokens != set.visual_tokens() ||
      stored.model.text_tokens != set.text_tokens()) {
    throw DimensionError("checkpoint was trained on a different token layout or dimension");
  }
  const auto params = optimizer_.parameters();
  load_parameters(params, checkpoint);
  std::vector<std::vector<float>> m, v;
  for (const auto& p : params) {
    const auto* sm = checkpoint.find_section("adam_m/" + p.name);
    const auto* sv = checkpoint.find_section("adam_v/" + p.name);
    if (sm == nullptr || sv == nullptr) throw FormatError("checkpoint: missing optimizer state for " + p.name, 0);
    m.push_back(sm->data);
    v.push_back(sv->data);
  }
  optimizer_.restore(std::move(m), std::move(v), parse_unsigned("state.step", checkpoint.require("state.step")));
  epochs_done_ = parse_unsigned("state.epochs_done", checkpoint.require("state.epochs_done"));
  for (const auto& item : split_items("state.bank.visual", checkpoint.require("state.bank.visual"))) {
    const std::size_t one[] = {item};
    visual_bank_.push_tokens(take_items(set.visual, one), one);
  }
  for (const auto& item : split_items("state.bank.text", checkpoint.require("state.bank.text"))) {
    const std::size_t one[] = {item};
    text_bank_.push_tokens(take_items(set.text, one), one);
  }
  for (std::size_t e = 1; e <= epochs_done_; ++e) {
    const std::string key = "history." + std::to_string(e);
    const auto values = checkpoint.require(key);
    std::vector<double> parts;
    std::size_t pos = 0;
    while (pos <= values.size()) {
      std::size_t end = values.find(',', pos);
      if (end == std::string::npos) end = values.size();
      parts.push_back(parse_double(key, values.substr(pos, end - pos)));
      pos = end + 1;
    }
    if (parts.size() != 5) throw FormatError("checkpoint: malformed " + key, 0);
    history_.push_back({e, parts[0], parts[1], parts[2], parts[3], parts[4]});
  }
  for (const auto& [key, value] : checkpoint.config) {
    if (key.rfind("metric.", 0) == 0) metrics_[key.substr(7)] = parse_double(key, value);
  }
}

double Trainer::train_batch(std::span<const std::size_t> items, EpochStats& sums) {
  const Tensor visual = take_items(set_.visual, items);
  const Tensor text = take_items(set_.text, items);
  const auto& weights = config_.weights;
  double total = 0.0;
  {
    Tape<float> tape;
    TranslationBatch<float> batch{visual, text, model_.g().forward(text), model_.f().forward(visual),
                                  std::nullopt, std::nullopt};
    if (weights.lambda_intra > 0.0) {
      batch.visual_cycle = model_.g().forward(batch.visual_to_text);
      batch.text_cycle = model_.f().forward(batch.text_to_visual);
    }
    NegativeSet<float> negatives;
    negatives.visual_global = visual_bank_.negatives(false, items);
    negatives.text_global = text_bank_.negatives(false, items);
    if (weights.lambda_token > 0.0) {
      negatives.visual_token = visual_bank_.negatives(true, items);
      negatives.text_token = text_bank_.negatives(true, items);
    }
    const auto loss = total_loss(batch, weights, &negatives);
    check_term(loss.global.inter, "global.inter");
    check_term(loss.global.intra, "global.intra");
    if (loss.token) {
      check_term(loss.token->inter, "token.inter");
      check_term(loss.token->intra, "token.intra");
    }
    check_term(loss.total, "total");

    total = loss.total.item();
    sums.total += total;
    sums.inter += loss.global.inter.item();
    sums.intra += loss.global.intra.item();
    sums.global += loss.global.combined.item();
    if (loss.token) {
      sums.inter += loss.token->inter.item();
      sums.intra += loss.token->intra.item();
      sums.token += loss.token->combined.item();
    }
    if (loss.total.requires_grad()) tape.backward(loss.total);
  }
  if (!optimizer_.parameters().empty()) {
    optimizer_.clip_grad_norm(config_.clip_norm);
    optimizer_.step();
    optimizer_.zero_grad();
  }
  visual_bank_.push_tokens(visual, items);
  text_bank_.push_tokens(text, items);
  return total;
}

EpochStats Trainer::run_epoch() {
  const std::size_t epoch = epochs_done_ + 1;
  const auto batches = epoch_batches(split_.train.size(), config_.batch_size, config_.seed, epoch);
  EpochStats sums;
  std::vector<std::size_t> items;
  for (std::size_t b = 0; b < batches.size(); ++b) {
    items.clear();
    for (const std::size_t idx : batches[b]) items.push_back(split_.train[idx]);
    try {
      train_batch(items, sums);
    } catch (const NumericError& e) {
      throw NumericError("epoch " + std::to_string(epoch) + ", batch " + std::to_string(b + 1) + ": " +
                         e.what());
    }
  }
  const double n = static_cast<double>(batches.size());
  EpochStats row{epoch, sums.total / n, sums.inter / n, sums.intra / n, sums.global / n, sums.token / n};
  history_.push_back(row);
  epochs_done_ = epoch;
  return row;
}

void Trainer::run(const std::function<void(const EpochStats&)>& on_epoch) {
  while (epochs_done_ < config_.epochs) {
    const EpochStats row = run_epoch();
    if (on_epoch) on_epoch(row);
  }
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint cp;
  cp.config = config_.to_key_values();
  cp.set("data.items", std::to_string(set_.count()));
  cp.set("state.step", std::to_string(optimizer_.steps()));
  cp.set("state.epochs_done", std::to_string(epochs_done_));
  cp.set("state.bank.visual", join_items(visual_bank_.items()));
  cp.set("state.bank.text", join_items(text_bank_.items()));
  for (const auto& h : history_) {
    cp.set("history." + std::to_string(h.epoch), exact_decimal(h.total) + "," + exact_decimal(h.inter) + "," +
                                                     exact_decimal(h.intra) + "," + exact_decimal(h.global) +
                                                     "," + exact_decimal(h.token));
  }
  for (const auto& [name, value] : metrics_) cp.set("metric." + name, exact_decimal(value));

  const auto& params = optimizer_.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params[i];
    const auto data = p.tensor.data();
    cp.sections.push_back({"param/" + p.name, p.tensor.shape(), {data.begin(), data.end()}});
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    cp.sections.push_back({"adam_m/" + params[i].name, params[i].tensor.shape(), optimizer_.first_moments()[i]});
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    cp.sections.push_back({"adam_v/" + params[i].name, params[i].tensor.shape(), optimizer_.second_moments()[i]});
  }
  return cp;
}

TranslatorPair<float> load_model(const Checkpoint& checkpoint, const EmbeddingPairSet* set) {
  const TrainConfig config = TrainConfig::from_key_values(checkpoint.config);
  if (set != nullptr) {
    if (config.model.attention.dim != set->dim()) {
      throw DimensionError("checkpoint dimension " + std::to_string(config.model.attention.dim) +
                           " does not match data dimension " + std::to_string(set->dim()));
    }
    if (config.model.visual_tokens != set->visual_tokens() || config.model.text_tokens != set->text_tokens()) {
      throw DimensionError("checkpoint token layout " + std::to_string(config.model.visual_tokens) + "/" +
                           std::to_string(config.model.text_tokens) + " does not match data layout " +
                           std::to_string(set->visual_tokens()) + "/" + std::to_string(set->text_tokens()));
    }
  }
  TranslatorPair<float> model(config.model, config.seed);
  load_parameters(model.parameters(), checkpoint);
  return model;
}

double mean_cycle_mse(const TranslatorPair<float>& model, const EmbeddingPairSet& set,
                      std::span<const std::size_t> items) {
  if (items.empty()) throw ContractError("mean_cycle_mse: no items");
  constexpr std::size_t kChunk = 64;
  double sum = 0.0;
  for (std::size_t start = 0; start < items.size(); start += kChunk) {
    const auto part = items.subspan(start, std::min(kChunk, items.size() - start));
    const Tensor v = take_items(set.visual, part);
    const Tensor t = take_items(set.text, part);
    const Tensor gfv = model.g().forward(model.f().forward(v));
    const Tensor fgt = model.f().forward(model.g().forward(t));
    for (const Level level : {Level::kGlobal, Level::kToken}) {
      const Tensor mse = cycle_mse(level_view(gfv, level), level_view(v, level), level_view(fgt, level),
                                   level_view(t, level));
      sum += 0.5 * mse.item() * static_cast<double>(part.size());
    }
  }
  return sum / static_cast<double>(items.size());
}

}  // namespace lat
