#pragma once

// Span-masking pretraining examples with indexed sentinel tokens.
//
// Given n tokens and rate r, exactly round(r*n) tokens (clamped to [0, n-1])
// are masked, split into k = max(1, round(masked/mean_span_length)) spans.
// Span i is replaced in the input by sentinel i; the target lists sentinel i
// followed by span i's tokens for every span, then a terminal sentinel k.
// Masked spans never touch, so each sentinel stands for exactly one span.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace vimed {

// Sentinel naming pattern such as "<extra_id_{i}>".
class SentinelPattern {
 public:
  // Throws UsageError unless the pattern holds "{i}" exactly once.
  explicit SentinelPattern(std::string_view pattern = "<extra_id_{i}>");

  std::string make(std::size_t index) const;
  // Index if the token is a sentinel under this pattern.
  std::optional<std::size_t> parse(std::string_view token) const;
  const std::string& pattern() const { return pattern_; }

 private:
  std::string pattern_;
  std::string prefix_;
  std::string suffix_;
};

struct CorruptionConfig {
  double corruption_rate = 0.15;
  double mean_span_length = 3.0;
  std::string sentinel_pattern = "<extra_id_{i}>";
  std::uint64_t seed = 0;

  void validate() const;  // throws UsageError
};

struct SpanCorruptionExample {
  std::vector<std::string> input_tokens;
  std::vector<std::string> target_tokens;
  std::size_t original_length = 0;

  friend bool operator==(const SpanCorruptionExample&, const SpanCorruptionExample&) = default;
};

// Number of tokens corrupt() masks for a sequence of the given length.
std::size_t masked_token_count(std::size_t length, double rate);

// Throws DataError for empty input or a token that reads as a sentinel.
SpanCorruptionExample corrupt(const std::vector<std::string>& tokens,
                              const CorruptionConfig& cfg);

// Splices target spans back into the input. Throws DataError when the
// sentinels of input and target disagree.
std::vector<std::string> reconstruct(const std::vector<std::string>& input_tokens,
                                     const std::vector<std::string>& target_tokens,
                                     const SentinelPattern& sentinels = SentinelPattern());

// JSON object with input, target (space-joined) and original_length.
std::string to_json_line(const SpanCorruptionExample& example);

}  // namespace vimed
