#include "lat/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <numeric>
#include <set>
#include <sstream>

#include "lat/memory_bank.hpp"

namespace lat {

namespace {

constexpr std::string_view kSetMagic = "LATE";
constexpr std::uint16_t kSetVersion = 1;

}  // namespace

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileError("cannot open '" + path + "' for reading");
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::string& path, std::string_view contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FileError("cannot open '" + path + "' for writing");
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  if (!out) throw FileError("failed writing '" + path + "'");
}

std::string format_float(double value) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", value);
  return buf;
}

// ---- EmbeddingPairSet -------------------------------------------------------

void EmbeddingPairSet::validate() const {
  if (visual.rank() != 3 || text.rank() != 3) {
    throw ContractError("embedding set: token tensors must be [N x L x d]");
  }
  if (visual.dim(0) != ids.size() || text.dim(0) != ids.size() || visual.dim(2) != text.dim(2)) {
    throw ContractError("embedding set: inconsistent shapes " + visual.shape().str() + " / " +
                        text.shape().str() + " for " + std::to_string(ids.size()) + " ids");
  }
  std::set<std::string_view> seen;
  for (const auto& id : ids) {
    if (!seen.insert(id).second) throw ContractError("embedding set: duplicate id '" + id + "'");
  }
}

bool operator==(const EmbeddingPairSet& a, const EmbeddingPairSet& b) {
  return a.ids == b.ids && a.visual.shape() == b.visual.shape() &&
         a.text.shape() == b.text.shape() &&
         std::ranges::equal(a.visual.data(), b.visual.data()) &&
         std::ranges::equal(a.text.data(), b.text.data());
}

std::string to_string(Mapping mapping) {
  switch (mapping) {
    case Mapping::kIdentity:
      return "identity";
    case Mapping::kOrthogonal:
      return "orthogonal";
    case Mapping::kOrthogonalTanh:
      return "orthogonal_plus_tanh";
  }
  return "unknown";
}

Mapping parse_mapping(std::string_view name) {
  if (name == "identity") return Mapping::kIdentity;
  if (name == "orthogonal") return Mapping::kOrthogonal;
  if (name == "orthogonal_plus_tanh") return Mapping::kOrthogonalTanh;
  throw ConfigError("unknown mapping '" + std::string(name) +
                    "' (expected identity, orthogonal or orthogonal_plus_tanh)");
}

void SyntheticConfig::validate() const {
  if (items == 0) throw ConfigError("synthetic set: item count must be positive");
  if (dim == 0) throw ConfigError("synthetic set: dimension must be positive");
  if (visual_tokens < 2 || text_tokens < 2) {
    throw ConfigError("synthetic set: each modality needs a CLS token plus at least one detail token");
  }
  if (dim > 0xFFFF || visual_tokens > 0xFFFF || text_tokens > 0xFFFF || items > 0xFFFFFFFFull) {
    throw ConfigError("synthetic set: extents exceed the file format's field widths");
  }
  if (!(noise_std >= 0.0) || !std::isfinite(noise_std)) {
    throw ConfigError("synthetic set: noise_std must be finite and nonnegative");
  }
}

// ---- generation ----------------------------------------------------------------

std::vector<double> random_orthogonal(std::size_t dim, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> q(dim * dim);
  for (auto& v : q) v = normal(rng);
  // Modified Gram-Schmidt over rows, applied twice for stability.
  for (int pass = 0; pass < 2; ++pass) {
    for (std::size_t i = 0; i < dim; ++i) {
      double* row = q.data() + i * dim;
      for (std::size_t j = 0; j < i; ++j) {
        const double* prev = q.data() + j * dim;
        double dot = 0.0;
        for (std::size_t c = 0; c < dim; ++c) dot += row[c] * prev[c];
        for (std::size_t c = 0; c < dim; ++c) row[c] -= dot * prev[c];
      }
      double norm = 0.0;
      for (std::size_t c = 0; c < dim; ++c) norm += row[c] * row[c];
      norm = std::sqrt(norm);
      if (norm < 1e-12) throw NumericError("random_orthogonal: rank-deficient draw");
      for (std::size_t c = 0; c < dim; ++c) row[c] /= norm;
    }
  }
  for (std::size_t i = 0; i < dim; ++i) {
    for (std::size_t j = 0; j < dim; ++j) {
      double dot = 0.0;
      for (std::size_t c = 0; c < dim; ++c) dot += q[i * dim + c] * q[j * dim + c];
      if (std::abs(dot - (i == j ? 1.0 : 0.0)) > 1e-5) {
        throw NumericError("random_orthogonal: Q Q^T deviates from identity");
      }
    }
  }
  return q;
}

EmbeddingPairSet generate_synthetic(const SyntheticConfig& config) {
  config.validate();
  const std::size_t n = config.items;
  const std::size_t d = config.dim;
  const std::size_t lv = config.visual_tokens;
  const std::size_t lt = config.text_tokens;

  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> q;
  if (config.mapping != Mapping::kIdentity) q = random_orthogonal(d, rng);

  std::vector<float> visual(n * lv * d);
  std::vector<float> text(n * lt * d);
  std::vector<double> detail(lv * d);
  std::vector<double> mapped(d);
  std::vector<double> tokens(lt * d);

  const auto set_cls = [d](std::vector<double>& buf, std::size_t count) {
    for (std::size_t c = 0; c < d; ++c) {
      double acc = 0.0;
      for (std::size_t k = 1; k < count; ++k) acc += buf[k * d + c];
      buf[c] = acc / static_cast<double>(count - 1);
    }
  };

  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = d; k < lv * d; ++k) detail[k] = normal(rng);
    set_cls(detail, lv);
    for (std::size_t k = 1; k < lt; ++k) {
      const double* src = detail.data() + (((k - 1) % (lv - 1)) + 1) * d;
      for (std::size_t r = 0; r < d; ++r) {
        if (config.mapping == Mapping::kIdentity) {
          mapped[r] = src[r];
        } else {
          double acc = 0.0;
          for (std::size_t c = 0; c < d; ++c) acc += q[r * d + c] * src[c];
          mapped[r] = config.mapping == Mapping::kOrthogonalTanh ? std::tanh(acc) : acc;
        }
      }
      for (std::size_t r = 0; r < d; ++r) {
        const double noise = config.noise_std > 0.0 ? config.noise_std * normal(rng) : 0.0;
        tokens[k * d + r] = mapped[r] + noise;
      }
    }
    set_cls(tokens, lt);
    std::transform(detail.begin(), detail.end(), visual.begin() + static_cast<std::ptrdiff_t>(i * lv * d),
                   [](double v) { return static_cast<float>(v); });
    std::transform(tokens.begin(), tokens.end(), text.begin() + static_cast<std::ptrdiff_t>(i * lt * d),
                   [](double v) { return static_cast<float>(v); });
  }

  EmbeddingPairSet set;
  set.ids.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "item%05zu", i);
    set.ids.emplace_back(buf);
  }
  set.visual = Tensor(Shape{n, lv, d}, std::move(visual));
  set.text = Tensor(Shape{n, lt, d}, std::move(text));
  return set;
}

// ---- LATE format ---------------------------------------------------------------

std::string serialize_set(const EmbeddingPairSet& set) {
  set.validate();
  if (set.count() > 0xFFFFFFFFull || set.visual_tokens() > 0xFFFF || set.text_tokens() > 0xFFFF ||
      set.dim() > 0xFFFF) {
    throw ContractError("embedding set exceeds the LATE field widths");
  }
  ByteWriter w;
  w.bytes(kSetMagic);
  w.u16(kSetVersion);
  w.u32(static_cast<std::uint32_t>(set.count()));
  w.u16(static_cast<std::uint16_t>(set.visual_tokens()));
  w.u16(static_cast<std::uint16_t>(set.text_tokens()));
  w.u16(static_cast<std::uint16_t>(set.dim()));
  const std::size_t vstride = set.visual_tokens() * set.dim();
  const std::size_t tstride = set.text_tokens() * set.dim();
  for (std::size_t i = 0; i < set.count(); ++i) {
    const std::string& id = set.ids[i];
    if (id.size() > 0xFFFF) throw ContractError("embedding set: id too long");
    w.u16(static_cast<std::uint16_t>(id.size()));
    w.bytes(id);
    for (std::size_t k = 0; k < vstride; ++k) w.f32(set.visual.data()[i * vstride + k]);
    for (std::size_t k = 0; k < tstride; ++k) w.f32(set.text.data()[i * tstride + k]);
  }
  return w.take();
}

EmbeddingPairSet deserialize_set(std::string_view bytes) {
  ByteReader r(bytes, "embedding file");
  r.require(kSetMagic.size());
  const std::string_view magic = r.bytes(kSetMagic.size());
  for (std::size_t i = 0; i < kSetMagic.size(); ++i) {
    if (magic[i] != kSetMagic[i]) {
      throw BadMagicError("embedding file: bad magic, expected \"LATE\"", i);
    }
  }
  const std::size_t version_offset = r.offset();
  const std::uint16_t version = r.u16();
  if (version != kSetVersion) {
    throw VersionMismatchError("embedding file: unsupported version " + std::to_string(version) +
                                   " (expected " + std::to_string(kSetVersion) + ")",
                               version_offset);
  }
  const std::size_t n = r.u32();
  const std::size_t lv = r.u16();
  const std::size_t lt = r.u16();
  const std::size_t d = r.u16();
  if (n == 0 || lv == 0 || lt == 0 || d == 0) {
    throw FormatError("embedding file: zero extent in header", r.offset());
  }
  EmbeddingPairSet set;
  std::vector<float> visual;
  std::vector<float> text;
  visual.reserve(std::min<std::size_t>(n * lv * d, r.remaining() / 4));
  text.reserve(std::min<std::size_t>(n * lt * d, r.remaining() / 4));
  const auto read_floats = [&](std::vector<float>& dst, std::size_t count) {
    r.require(count * 4);
    for (std::size_t k = 0; k < count; ++k) {
      const std::size_t at = r.offset();
      const float v = r.f32();
      if (!std::isfinite(v)) throw NonFiniteValueError("embedding file: non-finite value", at);
      dst.push_back(v);
    }
  };
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t len = r.u16();
    set.ids.emplace_back(r.bytes(len));
    read_floats(visual, lv * d);
    read_floats(text, lt * d);
  }
  if (r.remaining() != 0) {
    throw FormatError("embedding file: " + std::to_string(r.remaining()) + " trailing bytes",
                      r.offset());
  }
  set.visual = Tensor(Shape{n, lv, d}, std::move(visual));
  set.text = Tensor(Shape{n, lt, d}, std::move(text));
  set.validate();
  return set;
}

void save_set(const EmbeddingPairSet& set, const std::string& path) {
  write_file(path, serialize_set(set));
}

EmbeddingPairSet load_set(const std::string& path) {
  return deserialize_set(read_file(path));
}

std::string export_csv(const EmbeddingPairSet& set) {
  std::ostringstream os;
  os << "id,modality,token_index";
  for (std::size_t c = 0; c < set.dim(); ++c) os << ",x" << c;
  os << '\n';
  const auto emit_tokens = [&](const std::string& id, const char* modality, const Tensor& t,
                               std::size_t item) {
    const std::size_t count = t.dim(1);
    const std::size_t d = t.dim(2);
    for (std::size_t k = 0; k < count; ++k) {
      os << id << ',' << modality << ',' << k;
      for (std::size_t c = 0; c < d; ++c) os << ',' << format_float(t.data()[(item * count + k) * d + c]);
      os << '\n';
    }
  };
  for (std::size_t i = 0; i < set.count(); ++i) {
    emit_tokens(set.ids[i], "visual", set.visual, i);
    emit_tokens(set.ids[i], "text", set.text, i);
  }
  return os.str();
}

// ---- batching ------------------------------------------------------------------

Tensor take_items(const Tensor& tokens, std::span<const std::size_t> items) {
  if (tokens.rank() != 3) throw DimensionError("take_items: expected [N x L x d], got " + tokens.shape().str());
  if (items.empty()) throw ContractError("take_items: no items");
  const std::size_t stride = tokens.dim(1) * tokens.dim(2);
  std::vector<float> out(items.size() * stride);
  for (std::size_t b = 0; b < items.size(); ++b) {
    if (items[b] >= tokens.dim(0)) {
      throw DimensionError("take_items: item " + std::to_string(items[b]) + " out of range");
    }
    std::copy_n(tokens.data().data() + items[b] * stride, stride, out.data() + b * stride);
  }
  return Tensor(Shape{items.size(), tokens.dim(1), tokens.dim(2)}, std::move(out));
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t count, std::size_t batch_size,
                                                    std::uint64_t seed, std::uint64_t epoch) {
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  if (batch_size > count) {
    throw ConfigError("batch size " + std::to_string(batch_size) + " exceeds item count " +
                      std::to_string(count));
  }
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(epoch >> 32)};
  std::mt19937_64 rng(seq);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start + batch_size <= count; start += batch_size) {
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                     order.begin() + static_cast<std::ptrdiff_t>(start + batch_size));
  }
  return out;
}

Split holdout_split(std::size_t count, std::size_t holdout) {
  if (holdout >= count) {
    throw ConfigError("holdout " + std::to_string(holdout) + " leaves no training items out of " +
                      std::to_string(count));
  }
  Split s;
  for (std::size_t i = 0; i < count; ++i) (i < count - holdout ? s.train : s.eval).push_back(i);
  return s;
}

// ---- memory bank ---------------------------------------------------------------

MemoryBank::MemoryBank(std::size_t capacity, Modality modality, std::size_t dim)
    : capacity_(capacity), modality_(modality), dim_(dim) {
  if (dim == 0) throw ConfigError("memory bank: dimension must be positive");
}

void MemoryBank::push(BankEntry entry) {
  if (entry.global.size() != dim_ || entry.detail.size() != dim_) {
    throw DimensionError("memory bank: entry of dimension " + std::to_string(entry.global.size()) +
                         " pushed into bank of dimension " + std::to_string(dim_));
  }
  if (capacity_ == 0) return;
  if (entries_.size() == capacity_) entries_.pop_front();
  entries_.push_back(std::move(entry));
}

void MemoryBank::push_tokens(const Tensor& tokens, std::span<const std::size_t> items) {
  if (tokens.rank() != 3 || tokens.dim(0) != items.size() || tokens.dim(2) != dim_) {
    throw DimensionError("memory bank: cannot push " + tokens.shape().str() + " for " +
                         std::to_string(items.size()) + " items into dimension " +
                         std::to_string(dim_));
  }
  const std::size_t count = tokens.dim(1);
  for (std::size_t b = 0; b < items.size(); ++b) {
    const float* base = tokens.data().data() + b * count * dim_;
    BankEntry e;
    e.item = items[b];
    e.global.assign(base, base + dim_);
    e.detail.assign(dim_, 0.0f);
    if (count == 1) {
      e.detail = e.global;
    } else {
      for (std::size_t k = 1; k < count; ++k) {
        for (std::size_t c = 0; c < dim_; ++c) e.detail[c] += base[k * dim_ + c];
      }
      for (auto& v : e.detail) v /= static_cast<float>(count - 1);
    }
    push(std::move(e));
  }
}

std::optional<Tensor> MemoryBank::negatives(bool detail_level,
                                            std::span<const std::size_t> exclude) const {
  std::vector<float> values;
  std::size_t rows = 0;
  for (const auto& e : entries_) {
    if (std::find(exclude.begin(), exclude.end(), e.item) != exclude.end()) continue;
    const auto& src = detail_level ? e.detail : e.global;
    values.insert(values.end(), src.begin(), src.end());
    ++rows;
  }
  if (rows == 0) return std::nullopt;
  return Tensor(Shape{rows, dim_}, std::move(values));
}

std::vector<std::size_t> MemoryBank::items() const {
  std::vector<std::size_t> out;
  for (const auto& e : entries_) out.push_back(e.item);
  return out;
}

template <typename T>
BasicTensor<T> bank_extend(const BasicTensor<T>& batch, const std::optional<BasicTensor<T>>& bank) {
  if (!bank) return batch;
  if (batch.rank() != 2 || bank->rank() != 2 || bank->dim(1) != batch.dim(1)) {
    throw DimensionError("bank_extend: bank " + bank->shape().str() +
                         " does not match batch " + batch.shape().str());
  }
  return concat(batch, *bank, 0);
}

template BasicTensor<float> bank_extend<float>(const BasicTensor<float>&,
                                               const std::optional<BasicTensor<float>>&);
template BasicTensor<double> bank_extend<double>(const BasicTensor<double>&,
                                                 const std::optional<BasicTensor<double>>&);

}  // namespace lat
