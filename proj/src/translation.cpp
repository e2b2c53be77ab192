#include "vimed/translation.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <fstream>
#include <nlohmann/json.hpp>
#include <set>
#include <thread>

#include "httplib.h"
#include "vimed/error.hpp"
#include "vimed/io.hpp"
#include "vimed/text.hpp"

namespace vimed {

Lexicon parse_lexicon(std::string_view tsv) {
  Lexicon lexicon;
  std::size_t line_number = 0;
  std::size_t pos = 0;
  while (pos < tsv.size()) {
    std::size_t eol = tsv.find('\n', pos);
    if (eol == std::string_view::npos) eol = tsv.size();
    std::string_view line = tsv.substr(pos, eol - pos);
    pos = eol + 1;
    ++line_number;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (text::trim(line).empty()) continue;
    const auto where = "lexicon line " + std::to_string(line_number);
    text::require_utf8(line, where);
    const std::size_t tab = line.find('\t');
    if (tab == std::string_view::npos || line.find('\t', tab + 1) != std::string_view::npos) {
      throw DataError(where + ": expected exactly two tab-separated fields");
    }
    const std::string_view source = line.substr(0, tab);
    const std::string_view target = line.substr(tab + 1);
    if (text::whitespace_spans(source).size() != 1 ||
        text::whitespace_spans(target).size() != 1 || text::trim(source) != source ||
        text::trim(target) != target) {
      throw DataError(where + ": entries must be single tokens");
    }
    if (!lexicon.emplace(std::string(source), std::string(target)).second) {
      throw DataError(where + ": duplicate source token '" + std::string(source) + "'");
    }
  }
  return lexicon;
}

Lexicon load_lexicon(const std::filesystem::path& path) {
  return parse_lexicon(io::read_file(path));
}

std::string mock_translate(const Lexicon& lexicon, std::string_view text) {
  if (lexicon.empty()) return std::string(text);
  std::string out;
  out.reserve(text.size());
  std::size_t copied = 0;
  for (const text::Span& span : text::whitespace_spans(text)) {
    out.append(text.substr(copied, span.begin - copied));
    const std::string token(text.substr(span.begin, span.end - span.begin));
    const auto it = lexicon.find(token);
    out.append(it == lexicon.end() ? token : it->second);
    copied = span.end;
  }
  out.append(text.substr(copied));
  return out;
}

void BackendConfig::validate() const {
  if (batch_size < 1) throw UsageError("batch size must be >= 1");
  if (kind == Kind::http_service && endpoint.empty()) {
    throw UsageError("http backend requires an endpoint URL");
  }
}

std::vector<std::optional<std::string>> MockLexiconBackend::translate(
    std::span<const std::string> texts) {
  std::vector<std::optional<std::string>> out;
  out.reserve(texts.size());
  for (const std::string& t : texts) out.emplace_back(mock_translate(lexicon_, t));
  return out;
}

HttpBackend::HttpBackend(BackendConfig config)
    : config_(std::move(config)), jitter_(config_.jitter_seed) {
  config_.validate();
  const std::string& url = config_.endpoint;
  const std::size_t scheme_end = url.find("://");
  if (scheme_end == std::string::npos || url.substr(0, scheme_end) != "http") {
    throw UsageError("endpoint must be an http:// URL: " + url);
  }
  const std::size_t path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) {
    scheme_host_port_ = url;
    path_ = "/";
  } else {
    scheme_host_port_ = url.substr(0, path_start);
    path_ = url.substr(path_start);
  }
}

std::size_t HttpBackend::requests_sent() const {
  std::lock_guard lock(mutex_);
  return requests_;
}

std::optional<std::vector<std::string>> HttpBackend::attempt(
    std::span<const std::string> texts) {
  {
    std::lock_guard lock(mutex_);
    ++requests_;
  }
  httplib::Client client(scheme_host_port_);
  const auto timeout_s = std::chrono::duration_cast<std::chrono::seconds>(config_.timeout);
  const auto timeout_us = std::chrono::duration_cast<std::chrono::microseconds>(
      config_.timeout - timeout_s);
  client.set_connection_timeout(timeout_s.count(), timeout_us.count());
  client.set_read_timeout(timeout_s.count(), timeout_us.count());
  client.set_write_timeout(timeout_s.count(), timeout_us.count());
  httplib::Headers headers;
  if (!config_.auth_token.empty()) {
    headers.emplace("Authorization", "Bearer " + config_.auth_token);
  }
  nlohmann::json request;
  request["texts"] = std::vector<std::string>(texts.begin(), texts.end());
  const auto response = client.Post(path_, headers, request.dump(), "application/json");
  if (!response || response->status != 200) return std::nullopt;
  try {
    const auto body = nlohmann::json::parse(response->body);
    auto translations = body.at("translations").get<std::vector<std::string>>();
    if (translations.size() != texts.size()) return std::nullopt;
    return translations;
  } catch (const nlohmann::json::exception&) {
    return std::nullopt;
  }
}

std::chrono::milliseconds HttpBackend::backoff(unsigned attempt) {
  const auto base = static_cast<double>(config_.backoff_base.count());
  const auto cap = static_cast<double>(config_.backoff_max.count());
  const double exp = std::min(cap, base * static_cast<double>(1ULL << std::min(attempt, 30U)));
  double jitter;
  {
    std::lock_guard lock(mutex_);
    jitter = jitter_.unit();
  }
  return std::chrono::milliseconds(static_cast<std::int64_t>(exp * (0.5 + 0.5 * jitter)));
}

std::vector<std::optional<std::string>> HttpBackend::translate(
    std::span<const std::string> texts) {
  for (unsigned attempt_no = 0; attempt_no <= config_.retry_budget; ++attempt_no) {
    if (attempt_no > 0) std::this_thread::sleep_for(backoff(attempt_no - 1));
    if (auto result = attempt(texts)) {
      return {result->begin(), result->end()};
    }
  }
  return std::vector<std::optional<std::string>>(texts.size());
}

std::unique_ptr<TranslatorBackend> make_backend(const BackendConfig& config) {
  config.validate();
  switch (config.kind) {
    case BackendConfig::Kind::mock_lexicon: {
      Lexicon lexicon;
      if (!config.lexicon_path.empty()) lexicon = load_lexicon(config.lexicon_path);
      return std::make_unique<MockLexiconBackend>(std::move(lexicon), config.batch_size);
    }
    case BackendConfig::Kind::http_service:
      return std::make_unique<HttpBackend>(config);
  }
  throw UsageError("unknown backend kind");
}

namespace {

void check_unique_ids(const TranslationJob& job) {
  std::set<std::string_view> ids;
  for (const auto& item : job.items) {
    if (!ids.insert(item.id).second) throw DataError("duplicate job item id '" + item.id + "'");
  }
}

// Appends completions to the checkpoint, flushing every `interval` entries.
class CheckpointWriter {
 public:
  CheckpointWriter(const std::filesystem::path& path, std::size_t interval)
      : interval_(std::max<std::size_t>(interval, 1)) {
    if (path.empty()) return;
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    out_.open(path, std::ios::binary | std::ios::app);
    if (!out_) throw IoError("cannot open checkpoint " + path.string());
    enabled_ = true;
  }
  ~CheckpointWriter() {
    try {
      flush();
    } catch (...) {
    }
  }
  CheckpointWriter(const CheckpointWriter&) = delete;
  CheckpointWriter& operator=(const CheckpointWriter&) = delete;

  void record(const std::string& id, const std::string& translation) {
    if (!enabled_) return;
    nlohmann::ordered_json j;
    j["id"] = id;
    j["translation"] = translation;
    pending_ += j.dump();
    pending_ += '\n';
    if (++pending_count_ >= interval_) flush();
  }

  void flush() {
    if (!enabled_ || pending_.empty()) return;
    out_.write(pending_.data(), static_cast<std::streamsize>(pending_.size()));
    out_.flush();
    if (!out_) throw IoError("checkpoint write failed");
    pending_.clear();
    pending_count_ = 0;
  }

 private:
  std::ofstream out_;
  bool enabled_ = false;
  std::size_t interval_;
  std::string pending_;
  std::size_t pending_count_ = 0;
};

}  // namespace

std::size_t load_checkpoint(TranslationJob& job) {
  const auto& path = job.checkpoint_path;
  if (path.empty() || !std::filesystem::exists(path)) return 0;
  const std::string content = io::read_file(path);
  std::set<std::string_view> ids;
  for (const auto& item : job.items) ids.insert(item.id);

  std::size_t loaded = 0;
  std::size_t pos = 0;
  std::size_t line_number = 0;
  while (pos < content.size()) {
    const std::size_t eol = content.find('\n', pos);
    if (eol == std::string::npos) {
      // Torn trailing write: drop it so later appends start on a clean line.
      std::filesystem::resize_file(path, pos);
      break;
    }
    ++line_number;
    const std::string_view line(content.data() + pos, eol - pos);
    pos = eol + 1;
    std::string id;
    std::string translation;
    try {
      const auto j = nlohmann::json::parse(line);
      id = j.at("id").get<std::string>();
      translation = j.at("translation").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw DataError("checkpoint " + path.string() + " line " + std::to_string(line_number) +
                      ": " + e.what());
    }
    if (!ids.contains(id)) {
      throw DataError("checkpoint " + path.string() + " names unknown id '" + id + "'");
    }
    if (job.completed.insert_or_assign(std::move(id), std::move(translation)).second) {
      ++loaded;
    }
  }
  return loaded;
}

BatchResult translate_batch(TranslatorBackend& backend, TranslationJob& job,
                            const BatchOptions& options) {
  check_unique_ids(job);
  BatchResult result;
  result.resumed = load_checkpoint(job);

  std::vector<std::size_t> pending;
  for (std::size_t i = 0; i < job.items.size(); ++i) {
    if (!job.completed.contains(job.items[i].id)) pending.push_back(i);
  }
  const std::size_t batch = std::max<std::size_t>(backend.batch_size(), 1);
  const std::size_t batch_count = (pending.size() + batch - 1) / batch;

  CheckpointWriter checkpoint(job.checkpoint_path, options.checkpoint_interval);
  std::mutex merge_mutex;
  std::vector<bool> failed(job.items.size(), false);
  std::atomic<std::size_t> next_batch{0};
  std::atomic<std::size_t> calls{0};
  std::atomic<bool> stop{false};
  std::exception_ptr error;

  auto worker = [&] {
    while (!stop.load()) {
      const std::size_t b = next_batch.fetch_add(1);
      if (b >= batch_count) return;
      const std::size_t first = b * batch;
      const std::size_t last = std::min(first + batch, pending.size());
      std::vector<std::string> texts;
      texts.reserve(last - first);
      for (std::size_t k = first; k < last; ++k) texts.push_back(job.items[pending[k]].text);
      try {
        ++calls;
        auto translations = backend.translate(texts);
        if (translations.size() != texts.size()) {
          throw Error("backend returned " + std::to_string(translations.size()) +
                      " results for " + std::to_string(texts.size()) + " texts");
        }
        std::lock_guard lock(merge_mutex);
        for (std::size_t k = first; k < last; ++k) {
          const std::size_t index = pending[k];
          auto& translation = translations[k - first];
          if (translation) {
            checkpoint.record(job.items[index].id, *translation);
            job.completed.insert_or_assign(job.items[index].id, std::move(*translation));
          } else {
            failed[index] = true;
          }
        }
      } catch (...) {
        std::lock_guard lock(merge_mutex);
        if (!error) error = std::current_exception();
        stop.store(true);
        return;
      }
    }
  };

  const std::size_t threads =
      std::min(std::max<std::size_t>(options.parallelism, 1), std::max<std::size_t>(batch_count, 1));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(threads);
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  checkpoint.flush();
  result.backend_calls = calls.load();
  if (error) std::rethrow_exception(error);

  for (std::size_t i = 0; i < job.items.size(); ++i) {
    if (failed[i]) result.failed_ids.push_back(job.items[i].id);
  }
  result.status = result.failed_ids.empty() ? JobStatus::complete : JobStatus::partial;
  return result;
}

std::vector<std::pair<std::string, std::string>> ordered_completions(
    const TranslationJob& job) {
  std::vector<std::pair<std::string, std::string>> out;
  out.reserve(job.completed.size());
  for (const auto& item : job.items) {
    const auto it = job.completed.find(item.id);
    if (it != job.completed.end()) out.emplace_back(item.id, it->second);
  }
  return out;
}

}  // namespace vimed
