#pragma once

// Synthetic bitext from monolingual abstracts, mixed with gold bitext.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "vimed/pubmed_ingest.hpp"
#include "vimed/translation.hpp"

namespace vimed {

enum class Origin { gold, synthetic };

std::string_view to_string(Origin origin);
Origin origin_from_string(std::string_view s);  // throws DataError

class BitextPair {
 public:
  // Throws DataError if source or target is empty.
  BitextPair(std::string source, std::string target, Origin origin, std::string domain);

  const std::string& source() const { return source_; }
  const std::string& target() const { return target_; }
  Origin origin() const { return origin_; }
  const std::string& domain() const { return domain_; }

  friend bool operator==(const BitextPair&, const BitextPair&) = default;
  friend auto operator<=>(const BitextPair&, const BitextPair&) = default;

 private:
  std::string source_;
  std::string target_;
  Origin origin_;
  std::string domain_;
};

// TSV `source<TAB>target<TAB>origin<TAB>domain`. Backslash, tab, CR and LF
// inside fields are written as \\, \t, \r, \n.
std::string to_tsv_line(const BitextPair& pair);
BitextPair bitext_from_tsv(std::string_view line);
std::vector<BitextPair> load_bitext(const std::filesystem::path& path);

// Line-aligned source/target text files, e.g. a gold MT corpus.
std::vector<BitextPair> load_parallel(const std::filesystem::path& source,
                                      const std::filesystem::path& target, Origin origin,
                                      const std::string& domain);

struct SynthesisResult {
  std::vector<BitextPair> pairs;
  std::vector<std::string> failed_pmids;
  BatchResult batch;
};

// One synthetic "medical" pair per abstract whose translation succeeded.
SynthesisResult synthesize_bitext(const std::vector<Abstract>& mono, TranslatorBackend& backend,
                                  const BatchOptions& options = {},
                                  const std::filesystem::path& checkpoint = {});

struct MixManifest {
  std::size_t gold_count = 0;
  std::size_t synthetic_count = 0;
  std::size_t total_count = 0;
  std::uint64_t shuffle_seed = 0;
  std::vector<std::string> output_shards;
  std::size_t cross_set_source_collisions = 0;  // synthetic sources also in gold

  std::string to_json() const;
};

struct MixResult {
  std::vector<BitextPair> pairs;
  MixManifest manifest;
};

// Concatenation of gold then synthetic, Fisher-Yates shuffled under seed.
MixResult mix_corpora(const std::vector<BitextPair>& gold,
                      const std::vector<BitextPair>& synthetic, std::uint64_t seed);

// Writes pairs into shard files of at most shard_size lines (0: one file)
// named <prefix>-NNNNN.tsv under dir; records the paths in the manifest.
void write_shards(const std::vector<BitextPair>& pairs, const std::filesystem::path& dir,
                  std::string_view prefix, std::size_t shard_size, MixManifest& manifest);

}  // namespace vimed
