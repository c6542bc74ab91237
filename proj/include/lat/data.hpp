#pragma once

// Paired two-modality token embeddings: the synthetic generator, the LATE
// binary format, CSV export and epoch batching.
//
// LATE layout (little-endian):
//   "LATE" | u16 version=1 | u32 n_items | u16 L1 | u16 L2 | u16 d
//   per item: u16 id_len, id bytes (UTF-8), L1*d f32 (visual), L2*d f32 (text)

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lat/binary_io.hpp"
#include "lat/tensor.hpp"

namespace lat {

struct EmbeddingPairSet {
  std::vector<std::string> ids;
  Tensor visual;  // [N x L1 x d]; token 0 is the CLS surrogate
  Tensor text;    // [N x L2 x d]

  std::size_t count() const { return ids.size(); }
  std::size_t visual_tokens() const { return visual.dim(1); }
  std::size_t text_tokens() const { return text.dim(1); }
  std::size_t dim() const { return visual.dim(2); }

  /// Throws ContractError on inconsistent shapes or duplicate ids.
  void validate() const;
};

bool operator==(const EmbeddingPairSet& a, const EmbeddingPairSet& b);

enum class Mapping { kIdentity, kOrthogonal, kOrthogonalTanh };

std::string to_string(Mapping mapping);
Mapping parse_mapping(std::string_view name);

struct SyntheticConfig {
  std::size_t items = 512;
  std::size_t dim = 64;
  std::size_t visual_tokens = 9;  // 1 CLS + 8 detail
  std::size_t text_tokens = 31;   // 1 CLS + 30 detail
  std::uint64_t seed = 0;
  Mapping mapping = Mapping::kOrthogonalTanh;
  double noise_std = 0.05;

  void validate() const;
};

/// Random orthogonal matrix (row-major, dim x dim) from Gram-Schmidt on a
/// Gaussian draw. Throws NumericError if Q Q^T deviates from I by > 1e-5.
std::vector<double> random_orthogonal(std::size_t dim, std::mt19937_64& rng);

/// Visual detail tokens ~ N(0, I). Text detail token k (k >= 1) is
/// mapping(visual detail token ((k - 1) mod (L1 - 1)) + 1) plus Gaussian
/// noise. Token 0 of each item is the mean of its detail tokens.
EmbeddingPairSet generate_synthetic(const SyntheticConfig& config);

std::string serialize_set(const EmbeddingPairSet& set);
EmbeddingPairSet deserialize_set(std::string_view bytes);
void save_set(const EmbeddingPairSet& set, const std::string& path);
EmbeddingPairSet load_set(const std::string& path);

/// One row per token: id, modality, token_index, x0..x{d-1}.
std::string export_csv(const EmbeddingPairSet& set);

/// [B x L x d] copy of the listed items.
Tensor take_items(const Tensor& tokens, std::span<const std::size_t> items);

/// Seeded shuffle of [0, count) split into floor(count / batch_size)
/// batches; the short tail is dropped.
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t count, std::size_t batch_size,
                                                    std::uint64_t seed, std::uint64_t epoch);

/// Items [0, N - holdout) train, [N - holdout, N) evaluate.
struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> eval;
};
Split holdout_split(std::size_t count, std::size_t holdout);

/// Floats as text with 6 significant digits.
std::string format_float(double value);

}  // namespace lat
