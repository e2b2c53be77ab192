#pragma once

// Translation backends and checkpointed batch orchestration.

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "vimed/random.hpp"

namespace vimed {

// Single-token source -> single-token target substitutions.
using Lexicon = std::unordered_map<std::string, std::string>;

// TSV `source<TAB>target`, UTF-8. Blank lines are ignored. Throws DataError on
// a malformed line, a multi-token entry, or a repeated source.
Lexicon load_lexicon(const std::filesystem::path& path);
Lexicon parse_lexicon(std::string_view tsv);

// Substitutes whitespace tokens found in the lexicon; separators are kept
// byte-for-byte.
std::string mock_translate(const Lexicon& lexicon, std::string_view text);

struct BackendConfig {
  enum class Kind { mock_lexicon, http_service };

  Kind kind = Kind::mock_lexicon;
  std::filesystem::path lexicon_path;  // mock_lexicon; empty = identity
  std::string endpoint;                // http_service, e.g. http://host:8000/translate
  std::string auth_token;              // sent as "Authorization: Bearer ..."
  std::size_t batch_size = 16;
  std::chrono::milliseconds timeout{30000};
  unsigned retry_budget = 3;  // retries after the first attempt
  std::chrono::milliseconds backoff_base{200};
  std::chrono::milliseconds backoff_max{10000};
  std::uint64_t jitter_seed = 0;

  void validate() const;  // throws UsageError
};

class TranslatorBackend {
 public:
  virtual ~TranslatorBackend() = default;

  // One entry per input text, positionally aligned; nullopt marks a failure.
  virtual std::vector<std::optional<std::string>> translate(
      std::span<const std::string> texts) = 0;

  virtual std::size_t batch_size() const = 0;
};

class MockLexiconBackend final : public TranslatorBackend {
 public:
  explicit MockLexiconBackend(Lexicon lexicon, std::size_t batch_size = 16)
      : lexicon_(std::move(lexicon)), batch_size_(batch_size) {}

  std::vector<std::optional<std::string>> translate(
      std::span<const std::string> texts) override;
  std::size_t batch_size() const override { return batch_size_; }

 private:
  Lexicon lexicon_;
  std::size_t batch_size_;
};

// POSTs {"texts": [...]} and expects {"translations": [...]} of equal
// length. Failed requests are retried with exponential backoff and jitter;
// once the budget is spent every text in the batch is reported failed.
class HttpBackend final : public TranslatorBackend {
 public:
  explicit HttpBackend(BackendConfig config);

  std::vector<std::optional<std::string>> translate(
      std::span<const std::string> texts) override;
  std::size_t batch_size() const override { return config_.batch_size; }

  // Total HTTP requests issued, retries included.
  std::size_t requests_sent() const;

 private:
  std::optional<std::vector<std::string>> attempt(std::span<const std::string> texts);
  std::chrono::milliseconds backoff(unsigned attempt);

  BackendConfig config_;
  std::string scheme_host_port_;
  std::string path_;
  mutable std::mutex mutex_;
  Rng jitter_;
  std::size_t requests_ = 0;
};

std::unique_ptr<TranslatorBackend> make_backend(const BackendConfig& config);

struct TranslationItem {
  std::string id;
  std::string text;
};

struct TranslationJob {
  std::vector<TranslationItem> items;
  std::map<std::string, std::string> completed;  // id -> translation
  std::filesystem::path checkpoint_path;         // empty: no checkpointing
};

struct BatchOptions {
  std::size_t parallelism = 1;          // in-flight backend calls
  std::size_t checkpoint_interval = 1;  // completions per checkpoint flush
};

enum class JobStatus { complete, partial };

struct BatchResult {
  JobStatus status = JobStatus::complete;
  std::vector<std::string> failed_ids;  // in item order
  std::size_t resumed = 0;              // completions restored from checkpoint
  std::size_t backend_calls = 0;        // translate() invocations this run
};

// Loads completions from an append-only JSON-lines checkpoint into the job.
// A trailing line without '\n' (a torn write) is discarded and truncated
// away. Throws DataError for corrupt interior lines or unknown ids.
std::size_t load_checkpoint(TranslationJob& job);

// Translates every item not yet completed. Exceptions thrown by the backend
// propagate after in-flight work finishes and pending checkpoint lines are
// flushed.
BatchResult translate_batch(TranslatorBackend& backend, TranslationJob& job,
                            const BatchOptions& options = {});

// (id, translation) in item order, completed items only.
std::vector<std::pair<std::string, std::string>> ordered_completions(
    const TranslationJob& job);

}  // namespace vimed
