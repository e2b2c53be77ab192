#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "vimed/io.hpp"
#include "vimed/pubmed_ingest.hpp"
#include "vimed/random.hpp"

namespace vimed {

struct FilterConfig {
  std::size_t max_tokens = 512;
  bool dedup = true;
  std::optional<std::size_t> subset_size;
  std::uint64_t subset_seed = 0;

  void validate() const;  // throws UsageError
};

struct FilterStats {
  std::uint64_t input_count = 0;
  std::uint64_t dropped_too_long = 0;
  std::uint64_t duplicates = 0;
  std::optional<std::size_t> subset_requested;
  std::uint64_t subset_shortfall = 0;  // requested minus available, if positive
  std::uint64_t output_count = 0;
  std::uint64_t subset_seed = 0;

  std::string to_json() const;
};

// Abstracts with token_count <= max_tokens survive, order kept.
std::pair<std::vector<Abstract>, std::size_t> filter_by_length(
    const std::vector<Abstract>& abstracts, const FilterConfig& cfg);

// Dedup key: digest of the canonical (NFC, whitespace-collapsed) body.
io::Digest dedup_key(const Abstract& a);

// Streaming first-occurrence-wins deduplicator.
class Deduplicator {
 public:
  // True the first time a body key is seen.
  bool admit(const Abstract& a) { return seen_.insert(dedup_key(a)).second; }
  std::size_t distinct() const { return seen_.size(); }

 private:
  std::unordered_set<io::Digest, io::DigestHash> seen_;
};

std::pair<std::vector<Abstract>, std::size_t> dedup(const std::vector<Abstract>& abstracts);

// Seeded Algorithm R reservoir over a stream. Items remember their stream
// position so the sample can be returned in input order.
template <typename T>
class Reservoir {
 public:
  Reservoir(std::size_t capacity, std::uint64_t seed) : capacity_(capacity), rng_(seed) {
    slots_.reserve(capacity);
  }

  void add(T item) {
    const std::uint64_t index = seen_++;
    if (capacity_ == 0) return;
    if (slots_.size() < capacity_) {
      slots_.emplace_back(index, std::move(item));
      return;
    }
    const std::uint64_t j = rng_.below(seen_);
    if (j < capacity_) slots_[j] = {index, std::move(item)};
  }

  std::uint64_t seen() const { return seen_; }
  std::size_t capacity() const { return capacity_; }

  // Sampled items in stream order; the reservoir is left empty.
  std::vector<T> take_in_order();

 private:
  std::size_t capacity_;
  std::uint64_t seen_ = 0;
  Rng rng_;
  std::vector<std::pair<std::uint64_t, T>> slots_;
};

template <typename T>
std::vector<T> Reservoir<T>::take_in_order() {
  std::sort(slots_.begin(), slots_.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<T> out;
  out.reserve(slots_.size());
  for (auto& slot : slots_) out.push_back(std::move(slot.second));
  slots_.clear();
  return out;
}

struct SubsetResult {
  std::vector<Abstract> sample;
  std::uint64_t shortfall = 0;
};

// Uniform sample without replacement, returned in input order.
SubsetResult take_subset(const std::vector<Abstract>& abstracts, std::size_t size,
                         std::uint64_t seed);

// filter_by_length, then dedup (if enabled), then take_subset (if set).
std::pair<std::vector<Abstract>, FilterStats> run_filter(std::vector<Abstract> abstracts,
                                                         const FilterConfig& cfg);

}  // namespace vimed
