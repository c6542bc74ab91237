#pragma once

// FIFO store of past target-modality embeddings used as extra contrastive
// negatives. Entries are plain copies of data and never receive gradients.

#include <cstddef>
#include <deque>
#include <optional>
#include <span>
#include <vector>

#include "lat/tensor.hpp"

namespace lat {

enum class Modality { kVisual, kText };

struct BankEntry {
  std::size_t item = 0;        // dataset index; used to keep positives out
  std::vector<float> global;   // CLS-level embedding
  std::vector<float> detail;   // mean of detail tokens
};

class MemoryBank {
 public:
  MemoryBank(std::size_t capacity, Modality modality, std::size_t dim);

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t dim() const { return dim_; }
  Modality modality() const { return modality_; }

  /// Appends one entry, evicting the oldest when full.
  void push(BankEntry entry);

  /// Pushes every item of a [B x L x d] token batch (global = token 0,
  /// detail = mean of tokens 1..L-1, or token 0 again when L == 1).
  void push_tokens(const Tensor& tokens, std::span<const std::size_t> items);

  /// Stored embeddings at one level whose item is not in `exclude`, oldest
  /// first, as a gradient-free [K x d] tensor. nullopt when nothing remains.
  std::optional<Tensor> negatives(bool detail_level, std::span<const std::size_t> exclude) const;

  const std::deque<BankEntry>& entries() const { return entries_; }
  std::vector<std::size_t> items() const;
  void clear() { entries_.clear(); }

 private:
  std::size_t capacity_;
  Modality modality_;
  std::size_t dim_;
  std::deque<BankEntry> entries_;
};

/// Rows of `batch` followed by the bank rows. Batch positives stay on the
/// leading diagonal of any similarity matrix built from the result.
template <typename T>
BasicTensor<T> bank_extend(const BasicTensor<T>& batch, const std::optional<BasicTensor<T>>& bank);

}  // namespace lat
