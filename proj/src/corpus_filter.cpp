#include "vimed/corpus_filter.hpp"

#include <algorithm>
#include <nlohmann/json.hpp>

#include "vimed/error.hpp"
#include "vimed/text.hpp"

namespace vimed {

void FilterConfig::validate() const {
  if (max_tokens < 1) throw UsageError("max_tokens must be >= 1");
}

std::string FilterStats::to_json() const {
  nlohmann::ordered_json j;
  j["input_count"] = input_count;
  j["dropped_too_long"] = dropped_too_long;
  j["duplicates"] = duplicates;
  if (subset_requested) {
    j["subset_requested"] = *subset_requested;
  } else {
    j["subset_requested"] = nullptr;
  }
  j["subset_shortfall"] = subset_shortfall;
  j["subset_seed"] = subset_seed;
  j["output_count"] = output_count;
  return j.dump(2);
}

std::pair<std::vector<Abstract>, std::size_t> filter_by_length(
    const std::vector<Abstract>& abstracts, const FilterConfig& cfg) {
  cfg.validate();
  std::vector<Abstract> kept;
  std::size_t dropped = 0;
  for (const Abstract& a : abstracts) {
    if (a.token_count <= cfg.max_tokens) {
      kept.push_back(a);
    } else {
      ++dropped;
    }
  }
  return {std::move(kept), dropped};
}

io::Digest dedup_key(const Abstract& a) { return io::digest(text::canonical(a.body)); }

std::pair<std::vector<Abstract>, std::size_t> dedup(const std::vector<Abstract>& abstracts) {
  Deduplicator seen;
  std::vector<Abstract> unique;
  std::size_t duplicates = 0;
  for (const Abstract& a : abstracts) {
    if (seen.admit(a)) {
      unique.push_back(a);
    } else {
      ++duplicates;
    }
  }
  return {std::move(unique), duplicates};
}

SubsetResult take_subset(const std::vector<Abstract>& abstracts, std::size_t size,
                         std::uint64_t seed) {
  Reservoir<Abstract> reservoir(size, seed);
  for (const Abstract& a : abstracts) reservoir.add(a);
  SubsetResult result;
  result.sample = reservoir.take_in_order();
  if (size > abstracts.size()) result.shortfall = size - abstracts.size();
  return result;
}

std::pair<std::vector<Abstract>, FilterStats> run_filter(std::vector<Abstract> abstracts,
                                                         const FilterConfig& cfg) {
  FilterStats stats;
  stats.input_count = abstracts.size();
  stats.subset_requested = cfg.subset_size;
  stats.subset_seed = cfg.subset_seed;

  auto [kept, dropped] = filter_by_length(abstracts, cfg);
  stats.dropped_too_long = dropped;
  if (cfg.dedup) {
    auto [unique, duplicates] = dedup(kept);
    stats.duplicates = duplicates;
    kept = std::move(unique);
  }
  if (cfg.subset_size) {
    SubsetResult subset = take_subset(kept, *cfg.subset_size, cfg.subset_seed);
    stats.subset_shortfall = subset.shortfall;
    kept = std::move(subset.sample);
  }
  stats.output_count = kept.size();
  return {std::move(kept), stats};
}

}  // namespace vimed
