#include "vimed/span_corruption.hpp"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>
#include <set>

#include "vimed/error.hpp"
#include "vimed/random.hpp"
#include "vimed/text.hpp"

namespace vimed {

SentinelPattern::SentinelPattern(std::string_view pattern) : pattern_(pattern) {
  constexpr std::string_view kPlaceholder = "{i}";
  const std::size_t at = pattern.find(kPlaceholder);
  if (at == std::string_view::npos ||
      pattern.find(kPlaceholder, at + kPlaceholder.size()) != std::string_view::npos) {
    throw UsageError("sentinel pattern must contain {i} exactly once: " + pattern_);
  }
  prefix_ = pattern.substr(0, at);
  suffix_ = pattern.substr(at + kPlaceholder.size());
  if (prefix_.empty() && suffix_.empty()) {
    throw UsageError("sentinel pattern needs literal text around {i}");
  }
  if (text::whitespace_spans(pattern_).size() != 1) {
    throw UsageError("sentinel pattern must be a single token: " + pattern_);
  }
}

std::string SentinelPattern::make(std::size_t index) const {
  return prefix_ + std::to_string(index) + suffix_;
}

std::optional<std::size_t> SentinelPattern::parse(std::string_view token) const {
  if (token.size() <= prefix_.size() + suffix_.size()) return std::nullopt;
  if (!token.starts_with(prefix_) || !token.ends_with(suffix_)) return std::nullopt;
  const std::string_view digits =
      token.substr(prefix_.size(), token.size() - prefix_.size() - suffix_.size());
  std::size_t value = 0;
  for (const char c : digits) {
    if (c < '0' || c > '9') return std::nullopt;
    value = value * 10 + static_cast<std::size_t>(c - '0');
  }
  return value;
}

void CorruptionConfig::validate() const {
  if (!(corruption_rate >= 0.0 && corruption_rate <= 1.0)) {
    throw UsageError("corruption rate must lie in [0, 1]");
  }
  if (!(mean_span_length >= 1.0) || !std::isfinite(mean_span_length)) {
    throw UsageError("mean span length must be >= 1");
  }
  SentinelPattern{sentinel_pattern};
}

std::size_t masked_token_count(std::size_t length, double rate) {
  if (length == 0) return 0;
  const auto wanted = static_cast<std::size_t>(std::llround(rate * static_cast<double>(length)));
  return std::min(wanted, length - 1);
}

namespace {

// k distinct values from [0, n), ascending (Floyd's algorithm).
std::vector<std::size_t> sample_distinct(std::size_t k, std::size_t n, Rng& rng) {
  std::set<std::size_t> chosen;
  for (std::size_t j = n - k; j < n; ++j) {
    const std::size_t t = rng.below(j + 1);
    if (!chosen.insert(t).second) chosen.insert(j);
  }
  return {chosen.begin(), chosen.end()};
}

// Random composition of `total` into `parts` positive integers.
std::vector<std::size_t> positive_composition(std::size_t total, std::size_t parts, Rng& rng) {
  std::vector<std::size_t> cuts = sample_distinct(parts - 1, total - 1, rng);
  std::vector<std::size_t> out;
  out.reserve(parts);
  std::size_t previous = 0;
  for (const std::size_t cut : cuts) {
    out.push_back(cut + 1 - previous);
    previous = cut + 1;
  }
  out.push_back(total - previous);
  return out;
}

// Random composition of `total` into `parts` non-negative integers.
std::vector<std::size_t> weak_composition(std::size_t total, std::size_t parts, Rng& rng) {
  const std::size_t slots = total + parts - 1;
  std::vector<std::size_t> bars = sample_distinct(parts - 1, slots, rng);
  std::vector<std::size_t> out;
  out.reserve(parts);
  std::size_t previous = 0;
  for (const std::size_t bar : bars) {
    out.push_back(bar - previous);
    previous = bar + 1;
  }
  out.push_back(slots - previous);
  return out;
}

}  // namespace

SpanCorruptionExample corrupt(const std::vector<std::string>& tokens,
                              const CorruptionConfig& cfg) {
  cfg.validate();
  const SentinelPattern sentinels(cfg.sentinel_pattern);
  if (tokens.empty()) throw DataError("cannot corrupt an empty token sequence");
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (sentinels.parse(tokens[i])) {
      throw DataError("token " + std::to_string(i) + " '" + tokens[i] +
                      "' collides with the sentinel pattern");
    }
  }

  SpanCorruptionExample ex;
  ex.original_length = tokens.size();
  const std::size_t length = tokens.size();
  const std::size_t masked = masked_token_count(length, cfg.corruption_rate);
  if (masked == 0) {
    ex.input_tokens = tokens;
    ex.target_tokens = {sentinels.make(0)};
    return ex;
  }

  const std::size_t kept = length - masked;
  auto spans = static_cast<std::size_t>(
      std::llround(static_cast<double>(masked) / cfg.mean_span_length));
  spans = std::clamp<std::size_t>(spans, 1, std::min(masked, kept + 1));

  Rng rng(cfg.seed);
  const std::vector<std::size_t> span_lengths = positive_composition(masked, spans, rng);
  // spans + 1 runs of kept tokens; interior runs hold at least one token so
  // neighbouring spans never merge.
  std::vector<std::size_t> gaps = weak_composition(kept - (spans - 1), spans + 1, rng);
  for (std::size_t g = 1; g < spans; ++g) ++gaps[g];

  ex.input_tokens.reserve(kept + spans);
  ex.target_tokens.reserve(masked + spans + 1);
  std::size_t pos = 0;
  for (std::size_t s = 0; s <= spans; ++s) {
    ex.input_tokens.insert(ex.input_tokens.end(), tokens.begin() + static_cast<std::ptrdiff_t>(pos),
                           tokens.begin() + static_cast<std::ptrdiff_t>(pos + gaps[s]));
    pos += gaps[s];
    if (s == spans) break;
    const std::string sentinel = sentinels.make(s);
    ex.input_tokens.push_back(sentinel);
    ex.target_tokens.push_back(sentinel);
    ex.target_tokens.insert(ex.target_tokens.end(),
                            tokens.begin() + static_cast<std::ptrdiff_t>(pos),
                            tokens.begin() + static_cast<std::ptrdiff_t>(pos + span_lengths[s]));
    pos += span_lengths[s];
  }
  ex.target_tokens.push_back(sentinels.make(spans));
  return ex;
}

std::vector<std::string> reconstruct(const std::vector<std::string>& input_tokens,
                                     const std::vector<std::string>& target_tokens,
                                     const SentinelPattern& sentinels) {
  struct Span {
    std::size_t index;
    std::vector<std::string> tokens;
  };
  std::vector<Span> spans;
  for (const std::string& token : target_tokens) {
    if (const auto index = sentinels.parse(token)) {
      if (!spans.empty() && *index <= spans.back().index) {
        throw DataError("target sentinels are not in increasing order");
      }
      if (!spans.empty() && spans.back().tokens.empty()) {
        throw DataError("target sentinel " + sentinels.make(spans.back().index) +
                        " has no span tokens");
      }
      spans.push_back({*index, {}});
    } else {
      if (spans.empty()) throw DataError("target must start with a sentinel");
      spans.back().tokens.push_back(token);
    }
  }
  if (spans.empty()) throw DataError("target has no terminal sentinel");
  if (!spans.back().tokens.empty()) throw DataError("target must end with a sentinel");
  spans.pop_back();  // terminal

  std::vector<std::string> out;
  std::size_t next = 0;
  for (const std::string& token : input_tokens) {
    const auto index = sentinels.parse(token);
    if (!index) {
      out.push_back(token);
      continue;
    }
    if (next >= spans.size() || spans[next].index != *index) {
      throw DataError("input sentinel " + token + " does not match the target");
    }
    out.insert(out.end(), spans[next].tokens.begin(), spans[next].tokens.end());
    ++next;
  }
  if (next != spans.size()) {
    throw DataError("target has " + std::to_string(spans.size()) + " spans but input has " +
                    std::to_string(next) + " sentinels");
  }
  return out;
}

std::string to_json_line(const SpanCorruptionExample& example) {
  nlohmann::ordered_json j;
  j["input"] = text::join(example.input_tokens, " ");
  j["target"] = text::join(example.target_tokens, " ");
  j["original_length"] = example.original_length;
  return j.dump();
}

}  // namespace vimed
