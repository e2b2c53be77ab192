#include "vimed/cli.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdlib>
#include <exception>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "CLI11.hpp"
#include "vimed/corpus_filter.hpp"
#include "vimed/error.hpp"
#include "vimed/io.hpp"
#include "vimed/mednli.hpp"
#include "vimed/metrics.hpp"
#include "vimed/pubmed_ingest.hpp"
#include "vimed/random.hpp"
#include "vimed/refine_service.hpp"
#include "vimed/self_training.hpp"
#include "vimed/span_corruption.hpp"
#include "vimed/text.hpp"
#include "vimed/translation.hpp"

namespace vimed::cli {
namespace {

using ordered_json = nlohmann::ordered_json;
namespace fs = std::filesystem;

constexpr const char* kTokenEnv = "VIMED_TRANSLATE_TOKEN";

std::size_t default_jobs() {
  const unsigned n = std::thread::hardware_concurrency();
  return n == 0 ? 1 : n;
}

struct Globals {
  std::uint64_t seed = 0;
  std::size_t jobs = default_jobs();
  bool dry_run = false;
};

// Stage seed: the explicit flag if given, else derived from the global seed.
std::uint64_t stage_seed(const Globals& g, const CLI::Option* flag, std::uint64_t value,
                         std::string_view stage) {
  return flag->count() > 0 ? value : derive_seed(g.seed, stage);
}

void print_plan(const ordered_json& plan) { std::cout << plan.dump(2) << '\n'; }

void write_json(const std::string& path, const std::string& json, std::ostream& err) {
  if (path.empty()) {
    err << json << '\n';
  } else {
    io::write_file_atomic(path, json + "\n");
  }
}

ordered_json paths_json(const std::vector<std::string>& paths) {
  ordered_json arr = ordered_json::array();
  for (const auto& p : paths) arr.push_back(p);
  return arr;
}

// Runs fn(i) for i in [0, n) on up to `jobs` threads; rethrows the first
// exception after all workers stop.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t jobs, Fn&& fn) {
  jobs = std::clamp<std::size_t>(jobs, 1, std::max<std::size_t>(n, 1));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  {
    std::vector<std::jthread> workers;
    for (std::size_t w = 0; w < jobs; ++w) {
      workers.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            fn(i);
          } catch (...) {
            std::lock_guard lock(failure_mutex);
            if (!failure) failure = std::current_exception();
            next = n;
          }
        }
      });
    }
  }
  if (failure) std::rethrow_exception(failure);
}

std::vector<Abstract> load_abstracts(const std::string& path) {
  std::vector<Abstract> out;
  io::for_each_line(path, [&](std::string_view line, std::size_t number) {
    if (text::trim(line).empty()) return;
    try {
      out.push_back(abstract_from_json(line));
    } catch (const DataError& e) {
      throw DataError(path + ":" + std::to_string(number) + ": " + e.what());
    }
  });
  return out;
}

std::vector<std::string> read_lines(const std::string& path) {
  std::vector<std::string> lines;
  io::for_each_line(path, [&](std::string_view line, std::size_t) {
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.emplace_back(line);
  });
  return lines;
}

// ---------------------------------------------------------------- backends

struct BackendArgs {
  std::string kind = "mock";
  std::string lexicon;
  std::string endpoint;
  std::size_t batch_size = 16;
  std::int64_t timeout_ms = 30000;
  unsigned retries = 3;
  std::int64_t backoff_ms = 200;
  std::string checkpoint;
  std::size_t checkpoint_interval = 1;
};

void add_backend_options(CLI::App* cmd, BackendArgs& a) {
  cmd->add_option("--backend", a.kind, "Translator backend")
      ->check(CLI::IsMember({"mock", "http"}))
      ->capture_default_str();
  cmd->add_option("--lexicon", a.lexicon, "Mock backend lexicon TSV (empty: identity)");
  cmd->add_option("--endpoint", a.endpoint, "HTTP backend URL");
  cmd->add_option("--batch-size", a.batch_size, "Texts per backend request")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  cmd->add_option("--timeout-ms", a.timeout_ms, "HTTP request timeout")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  cmd->add_option("--retries", a.retries, "HTTP retries after the first attempt")
      ->capture_default_str();
  cmd->add_option("--backoff-ms", a.backoff_ms, "Base retry backoff")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  cmd->add_option("--checkpoint", a.checkpoint, "Append-only JSON-lines checkpoint for resume");
  cmd->add_option("--checkpoint-interval", a.checkpoint_interval,
                  "Completions per checkpoint flush")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
}

BackendConfig backend_config(const BackendArgs& a, const Globals& g) {
  BackendConfig cfg;
  cfg.kind = a.kind == "http" ? BackendConfig::Kind::http_service
                              : BackendConfig::Kind::mock_lexicon;
  cfg.lexicon_path = a.lexicon;
  cfg.endpoint = a.endpoint;
  if (const char* token = std::getenv(kTokenEnv)) cfg.auth_token = token;
  cfg.batch_size = a.batch_size;
  cfg.timeout = std::chrono::milliseconds(a.timeout_ms);
  cfg.retry_budget = a.retries;
  cfg.backoff_base = std::chrono::milliseconds(a.backoff_ms);
  cfg.jitter_seed = derive_seed(g.seed, "translate.jitter");
  cfg.validate();
  return cfg;
}

ordered_json backend_plan(const BackendArgs& a) {
  ordered_json j;
  j["backend"] = a.kind;
  if (a.kind == "mock") {
    j["lexicon"] = a.lexicon;
  } else {
    j["endpoint"] = a.endpoint;
    j["auth_token_set"] = std::getenv(kTokenEnv) != nullptr;
  }
  j["batch_size"] = a.batch_size;
  j["checkpoint"] = a.checkpoint;
  j["checkpoint_interval"] = a.checkpoint_interval;
  return j;
}

ordered_json batch_summary(const BatchResult& r, std::size_t items) {
  ordered_json j;
  j["status"] = r.status == JobStatus::complete ? "complete" : "partial";
  j["items"] = items;
  j["failed"] = r.failed_ids.size();
  j["resumed"] = r.resumed;
  j["backend_calls"] = r.backend_calls;
  return j;
}

// ------------------------------------------------------------------ ingest

struct IngestArgs {
  std::vector<std::string> inputs;
  std::string out = "-";
  std::string stats;
};

int run_ingest(const IngestArgs& a, const Globals& g, std::ostream& err) {
  if (g.dry_run) {
    print_plan({{"command", "ingest"}, {"inputs", paths_json(a.inputs)}, {"out", a.out},
                {"stats", a.stats}});
    return kSuccess;
  }
  io::Output out(a.out);
  PmidRegistry registry;
  IngestStats total;
  ordered_json files = ordered_json::array();
  for (const auto& input : a.inputs) {
    auto stream = open_source(input);
    ParseOptions options;
    options.source_file = input;
    options.registry = &registry;
    IngestStats stats;
    try {
      stats = parse_medline_stream(
          *stream, [&](Abstract&& r) { out.stream() << to_json_line(r) << '\n'; }, options);
    } catch (const DataError& e) {
      throw DataError(input + ": " + e.what());
    }
    total += stats;
    ordered_json f = ordered_json::parse(stats.to_json());
    f["file"] = input;
    files.push_back(std::move(f));
  }
  out.close();
  ordered_json summary = ordered_json::parse(total.to_json());
  summary["files"] = std::move(files);
  write_json(a.stats, summary.dump(2), err);
  return kSuccess;
}

// ------------------------------------------------------------------ filter

struct FilterArgs {
  std::string in = "-";
  std::string out = "-";
  std::size_t max_tokens = 512;
  bool no_dedup = false;
  std::size_t subset = 0;
  std::uint64_t subset_seed = 0;
  std::string stats;
  CLI::Option* subset_opt = nullptr;
  CLI::Option* seed_opt = nullptr;
};

int run_filter(const FilterArgs& a, const Globals& g, std::ostream& err) {
  FilterConfig cfg;
  cfg.max_tokens = a.max_tokens;
  cfg.dedup = !a.no_dedup;
  if (a.subset_opt->count() > 0) cfg.subset_size = a.subset;
  cfg.subset_seed = stage_seed(g, a.seed_opt, a.subset_seed, "filter.subset");
  cfg.validate();
  if (g.dry_run) {
    ordered_json plan{{"command", "filter"}, {"in", a.in},          {"out", a.out},
                      {"max_tokens", cfg.max_tokens}, {"dedup", cfg.dedup}};
    plan["subset_size"] = cfg.subset_size ? ordered_json(*cfg.subset_size) : ordered_json();
    plan["subset_seed"] = cfg.subset_seed;
    print_plan(plan);
    return kSuccess;
  }

  FilterStats stats;
  stats.subset_requested = cfg.subset_size;
  stats.subset_seed = cfg.subset_seed;
  Deduplicator dedup;
  std::optional<Reservoir<std::string>> reservoir;
  if (cfg.subset_size) reservoir.emplace(*cfg.subset_size, cfg.subset_seed);

  io::Output out(a.out);
  // Survivors are copied as raw lines, so they stay byte-identical.
  io::for_each_line(a.in, [&](std::string_view line, std::size_t number) {
    if (text::trim(line).empty()) return;
    Abstract record;
    try {
      record = abstract_from_json(line);
    } catch (const DataError& e) {
      throw DataError(a.in + ":" + std::to_string(number) + ": " + e.what());
    }
    ++stats.input_count;
    if (record.token_count > cfg.max_tokens) {
      ++stats.dropped_too_long;
      return;
    }
    if (cfg.dedup && !dedup.admit(record)) {
      ++stats.duplicates;
      return;
    }
    if (reservoir) {
      reservoir->add(std::string(line));
    } else {
      out.stream() << line << '\n';
      ++stats.output_count;
    }
  });
  if (reservoir) {
    if (reservoir->seen() < *cfg.subset_size) {
      stats.subset_shortfall = *cfg.subset_size - reservoir->seen();
    }
    for (const auto& line : reservoir->take_in_order()) {
      out.stream() << line << '\n';
      ++stats.output_count;
    }
  }
  out.close();
  write_json(a.stats, stats.to_json(), err);
  return kSuccess;
}

// --------------------------------------------------------------- translate

struct TranslateArgs {
  std::string in = "-";
  std::string out = "-";
  std::string bitext_out;
  std::string domain = "medical";
  bool translate_title = false;
  BackendArgs backend;
};

int run_translate(const TranslateArgs& a, const Globals& g, std::ostream& err) {
  const BackendConfig cfg = backend_config(a.backend, g);
  if (g.dry_run) {
    ordered_json plan{{"command", "translate"}, {"in", a.in}, {"out", a.out},
                      {"bitext_out", a.bitext_out}, {"translate_title", a.translate_title},
                      {"jobs", g.jobs}};
    plan.update(backend_plan(a.backend));
    print_plan(plan);
    return kSuccess;
  }
  const std::vector<Abstract> abstracts = load_abstracts(a.in);
  TranslationJob job;
  job.checkpoint_path = a.backend.checkpoint;
  for (const auto& r : abstracts) job.items.push_back({r.pmid, r.body});
  if (a.translate_title) {
    for (const auto& r : abstracts) {
      if (!r.title.empty()) job.items.push_back({r.pmid + "#title", r.title});
    }
  }
  BatchResult result;
  if (!job.items.empty()) {
    auto backend = make_backend(cfg);
    result = translate_batch(*backend, job, {g.jobs, a.backend.checkpoint_interval});
  }

  std::vector<std::string> failed;
  io::Output out(a.out);
  std::optional<io::Output> bitext;
  if (!a.bitext_out.empty()) bitext.emplace(a.bitext_out);
  for (const auto& r : abstracts) {
    const auto body = job.completed.find(r.pmid);
    std::optional<std::string> title = r.title;
    if (a.translate_title && !r.title.empty()) {
      const auto t = job.completed.find(r.pmid + "#title");
      title = t == job.completed.end() ? std::nullopt : std::optional(t->second);
    }
    if (body == job.completed.end() || text::trim(body->second).empty() || !title) {
      failed.push_back(r.pmid);
      continue;
    }
    Abstract t = r;
    t.title = *title;
    t.body = body->second;
    t.token_count = text::count_tokens(t.body);
    out.stream() << to_json_line(t) << '\n';
    if (bitext) {
      bitext->stream() << to_tsv_line(BitextPair(r.body, t.body, Origin::synthetic, a.domain))
                       << '\n';
    }
  }
  out.close();
  if (bitext) bitext->close();

  ordered_json summary = batch_summary(result, job.items.size());
  summary["records_in"] = abstracts.size();
  summary["records_out"] = abstracts.size() - failed.size();
  summary["failed_pmids"] = failed;
  err << summary.dump() << '\n';
  return failed.empty() ? kSuccess : kPartial;
}

// ----------------------------------------------------------- selftrain-mix

struct MixArgs {
  std::vector<std::string> gold;
  std::string gold_src;
  std::string gold_tgt;
  std::string gold_domain = "general";
  std::vector<std::string> synthetic;
  std::string out_dir;
  std::string prefix = "mixed";
  std::size_t shard_size = 0;
  std::uint64_t shuffle_seed = 0;
  CLI::Option* seed_opt = nullptr;
};

int run_mix(const MixArgs& a, const Globals& g, std::ostream& err) {
  if (a.gold_src.empty() != a.gold_tgt.empty()) {
    throw UsageError("--gold-src and --gold-tgt go together");
  }
  const std::uint64_t seed = stage_seed(g, a.seed_opt, a.shuffle_seed, "selftrain-mix");
  if (g.dry_run) {
    print_plan({{"command", "selftrain-mix"}, {"gold", paths_json(a.gold)},
                {"gold_src", a.gold_src}, {"gold_tgt", a.gold_tgt},
                {"synthetic", paths_json(a.synthetic)}, {"out_dir", a.out_dir},
                {"shard_size", a.shard_size}, {"shuffle_seed", seed}});
    return kSuccess;
  }
  std::vector<BitextPair> gold;
  for (const auto& p : a.gold) {
    auto pairs = load_bitext(p);
    gold.insert(gold.end(), pairs.begin(), pairs.end());
  }
  if (!a.gold_src.empty()) {
    auto pairs = load_parallel(a.gold_src, a.gold_tgt, Origin::gold, a.gold_domain);
    gold.insert(gold.end(), pairs.begin(), pairs.end());
  }
  std::vector<BitextPair> synthetic;
  for (const auto& p : a.synthetic) {
    auto pairs = load_bitext(p);
    synthetic.insert(synthetic.end(), pairs.begin(), pairs.end());
  }
  MixResult mixed = mix_corpora(gold, synthetic, seed);
  write_shards(mixed.pairs, a.out_dir, a.prefix, a.shard_size, mixed.manifest);
  const std::string manifest = mixed.manifest.to_json();
  io::write_file_atomic(fs::path(a.out_dir) / "manifest.json", manifest + "\n");
  err << manifest << '\n';
  return kSuccess;
}

// ----------------------------------------------------------------- corrupt

struct CorruptArgs {
  std::string in = "-";
  std::string out;
  std::string out_dir;
  std::string prefix = "corrupt";
  std::size_t shard_size = 0;
  double rate = 0.15;
  double mean_span = 3.0;
  std::string sentinel = "<extra_id_{i}>";
  std::uint64_t corrupt_seed = 0;
  CLI::Option* seed_opt = nullptr;
};

// Rolls over to a new numbered file every shard_size records.
class ShardWriter {
 public:
  ShardWriter(fs::path dir, std::string prefix, std::size_t shard_size)
      : dir_(std::move(dir)), prefix_(std::move(prefix)), shard_size_(shard_size) {
    fs::create_directories(dir_);
  }

  void write(const std::string& line) {
    if (!out_ || (shard_size_ > 0 && in_shard_ == shard_size_)) open_next();
    out_->stream() << line << '\n';
    ++in_shard_;
  }

  std::vector<std::string> finish() {
    if (!out_) open_next();  // an empty corpus still yields one (empty) shard
    out_->close();
    return names_;
  }

 private:
  void open_next() {
    if (out_) out_->close();
    std::ostringstream name;
    name << prefix_ << '-' << std::setw(5) << std::setfill('0') << names_.size() << ".jsonl";
    names_.push_back(name.str());
    out_ = std::make_unique<io::Output>(dir_ / names_.back());
    in_shard_ = 0;
  }

  fs::path dir_;
  std::string prefix_;
  std::size_t shard_size_;
  std::size_t in_shard_ = 0;
  std::unique_ptr<io::Output> out_;
  std::vector<std::string> names_;
};

int run_corrupt(const CorruptArgs& a, const Globals& g, std::ostream& err) {
  if (!a.out.empty() && !a.out_dir.empty()) throw UsageError("give --out or --out-dir, not both");
  CorruptionConfig cfg;
  cfg.corruption_rate = a.rate;
  cfg.mean_span_length = a.mean_span;
  cfg.sentinel_pattern = a.sentinel;
  cfg.seed = stage_seed(g, a.seed_opt, a.corrupt_seed, "corrupt");
  cfg.validate();
  const SentinelPattern pattern(cfg.sentinel_pattern);
  if (g.dry_run) {
    print_plan({{"command", "corrupt"}, {"in", a.in},
                {"out", a.out_dir.empty() ? (a.out.empty() ? "-" : a.out) : a.out_dir},
                {"corruption_rate", cfg.corruption_rate},
                {"mean_span_length", cfg.mean_span_length},
                {"sentinel_pattern", cfg.sentinel_pattern}, {"seed", cfg.seed},
                {"shard_size", a.shard_size}, {"jobs", g.jobs}});
    return kSuccess;
  }

  std::unique_ptr<io::Output> single;
  std::unique_ptr<ShardWriter> shards;
  if (a.out_dir.empty()) {
    single = std::make_unique<io::Output>(a.out.empty() ? "-" : a.out);
  } else {
    shards = std::make_unique<ShardWriter>(a.out_dir, a.prefix, a.shard_size);
  }
  std::uint64_t records = 0;
  std::uint64_t tokens = 0;
  std::uint64_t masked = 0;

  constexpr std::size_t kChunk = 4096;
  std::vector<std::pair<std::size_t, std::string>> chunk;
  std::vector<std::string> encoded;
  std::vector<std::size_t> lengths;
  auto flush = [&] {
    encoded.assign(chunk.size(), {});
    lengths.assign(chunk.size(), 0);
    parallel_for(chunk.size(), g.jobs, [&](std::size_t i) {
      const auto& [number, line] = chunk[i];
      try {
        const Abstract record = abstract_from_json(line);
        CorruptionConfig local = cfg;
        local.seed = derive_seed(cfg.seed, record.pmid);
        const auto example = corrupt(text::tokenize(record.body), local);
        lengths[i] = example.original_length;
        encoded[i] = to_json_line(example);
      } catch (const DataError& e) {
        throw DataError(a.in + ":" + std::to_string(number) + ": " + e.what());
      }
    });
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      if (shards) {
        shards->write(encoded[i]);
      } else {
        single->stream() << encoded[i] << '\n';
      }
      ++records;
      tokens += lengths[i];
      masked += masked_token_count(lengths[i], cfg.corruption_rate);
    }
    chunk.clear();
  };
  io::for_each_line(a.in, [&](std::string_view line, std::size_t number) {
    if (text::trim(line).empty()) return;
    chunk.emplace_back(number, std::string(line));
    if (chunk.size() == kChunk) flush();
  });
  flush();

  ordered_json manifest;
  manifest["records"] = records;
  manifest["tokens"] = tokens;
  manifest["masked_tokens"] = masked;
  manifest["corruption_rate"] = cfg.corruption_rate;
  manifest["mean_span_length"] = cfg.mean_span_length;
  manifest["sentinel_pattern"] = cfg.sentinel_pattern;
  manifest["seed"] = cfg.seed;
  if (shards) {
    manifest["shards"] = shards->finish();
    io::write_file_atomic(fs::path(a.out_dir) / "manifest.json", manifest.dump(2) + "\n");
  } else {
    single->close();
  }
  err << manifest.dump() << '\n';
  return kSuccess;
}

// --------------------------------------------------------------------- nli

std::optional<nli::Split> split_hint(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return nli::split_from_string(s);
}

std::vector<fs::path> to_paths(const std::vector<std::string>& v) {
  return {v.begin(), v.end()};
}

void write_examples(const std::string& path, const std::vector<nli::Example>& examples) {
  io::Output out(path);
  for (const auto& e : examples) out.stream() << nli::to_json_line(e) << '\n';
  out.close();
}

struct NliLoadArgs {
  std::vector<std::string> inputs;
  std::string split;
  std::string out = "-";
  std::string stats;
};

int run_nli_load(const NliLoadArgs& a, const Globals& g, std::ostream& err) {
  if (g.dry_run) {
    print_plan({{"command", "nli-load"}, {"inputs", paths_json(a.inputs)},
                {"split", a.split}, {"out", a.out}});
    return kSuccess;
  }
  const auto loaded = nli::load_mednli(to_paths(a.inputs), split_hint(a.split));
  write_examples(a.out, loaded.examples);
  write_json(a.stats, loaded.stats.to_json(), err);
  return kSuccess;
}

struct NliTranslateArgs {
  std::vector<std::string> inputs;
  std::string split;
  std::string out = "-";
  BackendArgs backend;
};

int run_nli_translate(const NliTranslateArgs& a, const Globals& g, std::ostream& err) {
  const BackendConfig cfg = backend_config(a.backend, g);
  if (g.dry_run) {
    ordered_json plan{{"command", "nli-translate"}, {"inputs", paths_json(a.inputs)},
                      {"out", a.out}, {"jobs", g.jobs}};
    plan.update(backend_plan(a.backend));
    print_plan(plan);
    return kSuccess;
  }
  const auto loaded = nli::load_mednli(to_paths(a.inputs), split_hint(a.split));
  auto backend = make_backend(cfg);
  const auto result = nli::translate_nli(loaded.examples, *backend,
                                         {g.jobs, a.backend.checkpoint_interval},
                                         a.backend.checkpoint);
  write_examples(a.out, result.examples);
  ordered_json summary = batch_summary(result.batch, 2 * loaded.examples.size());
  summary["examples_in"] = loaded.examples.size();
  summary["examples_out"] = result.examples.size();
  summary["failed_uids"] = result.failed_uids;
  err << summary.dump() << '\n';
  return result.failed_uids.empty() ? kSuccess : kPartial;
}

std::atomic<bool> g_stop_requested{false};

extern "C" void on_stop_signal(int) { g_stop_requested = true; }

struct RefineArgs {
  std::vector<std::string> inputs;
  std::string store;
  std::string lexicon;
  std::string host = "127.0.0.1";
  int port = 8080;
  double lease_minutes = 15.0;
  std::string ui_dir;
  bool enqueue_only = false;
  bool auto_accept = false;
  std::string annotator = "lexicon";
  std::string out = "-";
};

int run_nli_refine(const RefineArgs& a, const Globals& g, std::ostream& err) {
  if (a.auto_accept && a.inputs.empty()) throw UsageError("--auto-accept needs --in");
  if (!a.auto_accept && a.store.empty()) throw UsageError("--store is required");
  if (a.lease_minutes <= 0) throw UsageError("--lease-minutes must be positive");
  if (g.dry_run) {
    print_plan({{"command", "nli-refine-serve"}, {"inputs", paths_json(a.inputs)},
                {"store", a.store}, {"lexicon", a.lexicon},
                {"mode", a.auto_accept ? "auto-accept" : (a.enqueue_only ? "enqueue" : "serve")},
                {"host", a.host}, {"port", a.port}, {"lease_minutes", a.lease_minutes}});
    return kSuccess;
  }
  const nli::AbbrevLexicon lexicon =
      a.lexicon.empty() ? nli::AbbrevLexicon() : nli::load_abbrev_lexicon(a.lexicon);
  for (const auto& w : lexicon.retrigger_warnings()) err << "warning: " << w << '\n';

  if (a.auto_accept) {
    const auto loaded = nli::load_mednli(to_paths(a.inputs));
    write_examples(a.out, nli::refine_with_lexicon(loaded.examples, lexicon, a.annotator));
    return kSuccess;
  }

  const auto lease = std::chrono::milliseconds(static_cast<std::int64_t>(a.lease_minutes * 60000));
  refine::RefineStore store(a.store, lease);
  if (!a.inputs.empty()) {
    const auto loaded = nli::load_mednli(to_paths(a.inputs));
    const auto r = store.enqueue(loaded.examples, lexicon);
    err << ordered_json{{"inserted", r.inserted}, {"total", r.total}}.dump() << '\n';
  }
  if (a.enqueue_only) return kSuccess;

  std::optional<fs::path> ui;
  if (!a.ui_dir.empty()) ui = a.ui_dir;
  refine::RefineServer server(store, lexicon, ui);
  g_stop_requested = false;
  const auto old_int = std::signal(SIGINT, on_stop_signal);
  const auto old_term = std::signal(SIGTERM, on_stop_signal);
  std::jthread watcher([&server](std::stop_token token) {
    while (!token.stop_requested() && !g_stop_requested) {
      std::this_thread::sleep_for(std::chrono::milliseconds(100));
    }
    server.stop();
  });
  err << "serving on http://" << a.host << ":" << a.port << '\n';
  const bool ok = server.listen(a.host, a.port);
  watcher.request_stop();
  watcher.join();
  std::signal(SIGINT, old_int);
  std::signal(SIGTERM, old_term);
  if (!ok && !g_stop_requested) {
    throw IoError("cannot listen on " + a.host + ":" + std::to_string(a.port));
  }
  return kSuccess;
}

struct ExportArgs {
  std::vector<std::string> inputs;
  std::string store;
  std::string out_dir;
  std::string format = "both";
  std::string policy = "uniform";
  bool allow_mixed = false;
};

int run_nli_export(const ExportArgs& a, const Globals& g, std::ostream& err) {
  if (a.inputs.empty() == a.store.empty()) throw UsageError("give exactly one of --in or --store");
  const auto format = nli::export_format_from_string(a.format);
  nli::StatePolicy policy = nli::StatePolicy::uniform;
  if (a.policy == "require-refined") policy = nli::StatePolicy::require_refined;
  if (a.policy == "allow-mixed" || a.allow_mixed) policy = nli::StatePolicy::allow_mixed;
  if (g.dry_run) {
    print_plan({{"command", "nli-export"}, {"inputs", paths_json(a.inputs)}, {"store", a.store},
                {"out_dir", a.out_dir}, {"format", a.format}, {"policy", a.policy}});
    return kSuccess;
  }
  std::vector<nli::Example> examples;
  if (!a.store.empty()) {
    if (!fs::exists(a.store)) throw IoError("no refine store at " + a.store);
    examples = refine::RefineStore(a.store).examples();
  } else {
    examples = nli::load_mednli(to_paths(a.inputs)).examples;
  }
  const auto manifest = nli::export_vimednli(examples, a.out_dir, format, policy);
  err << manifest.to_json() << '\n';
  return kSuccess;
}

// -------------------------------------------------------------------- eval

struct EvalArgs {
  std::string metric;
  std::string hyp;
  std::string ref;
  std::string tsv;
  std::vector<std::string> labels;
  bool exclude_absent = false;
  std::string dataset = "test";
  std::string domain = "all";
  std::string report;
  std::string table;
};

int run_eval(const EvalArgs& a, const Globals& g, std::ostream&) {
  const metrics::Metric metric = metrics::metric_from_string(a.metric);
  if (a.tsv.empty() && (a.hyp.empty() || a.ref.empty())) {
    throw UsageError("eval needs --hyp and --ref, or --tsv");
  }
  if (!a.tsv.empty() && metric != metrics::Metric::bleu) {
    throw UsageError("--tsv (per-domain input) is only supported for bleu");
  }
  if (g.dry_run) {
    print_plan({{"command", "eval"}, {"metric", a.metric}, {"hyp", a.hyp}, {"ref", a.ref},
                {"tsv", a.tsv}, {"report", a.report}});
    return kSuccess;
  }

  std::vector<metrics::MetricReport> reports;
  if (!a.tsv.empty()) {
    std::vector<metrics::DomainSegment> segments;
    io::for_each_line(a.tsv, [&](std::string_view line, std::size_t number) {
      if (line.empty()) return;
      const auto f = io::split_tsv(line);
      if (f.size() != 3) {
        throw DataError(a.tsv + ":" + std::to_string(number) +
                        ": expected hypothesis, reference, domain");
      }
      segments.push_back({io::unescape_tsv(f[0]), io::unescape_tsv(f[1]), std::string(f[2])});
    });
    reports = metrics::eval_multidomain(segments, a.dataset);
    std::cout << metrics::format_table(reports);
  } else {
    const auto hyp = read_lines(a.hyp);
    const auto ref = read_lines(a.ref);
    if (hyp.size() != ref.size()) {
      throw DataError(a.hyp + " has " + std::to_string(hyp.size()) + " lines but " + a.ref +
                      " has " + std::to_string(ref.size()));
    }
    double value = 0.0;
    switch (metric) {
      case metrics::Metric::bleu: value = metrics::corpus_bleu(hyp, ref); break;
      case metrics::Metric::rouge_l: value = metrics::mean_rouge_l_f1(hyp, ref); break;
      case metrics::Metric::accuracy: value = metrics::accuracy(hyp, ref); break;
      case metrics::Metric::macro_f1: {
        std::vector<std::string> labels = a.labels;
        if (labels.empty()) {
          std::set<std::string> seen(ref.begin(), ref.end());
          seen.insert(hyp.begin(), hyp.end());
          labels.assign(seen.begin(), seen.end());
        }
        value = metrics::macro_f1(hyp, ref, labels, a.exclude_absent);
        break;
      }
    }
    reports.push_back({a.dataset, a.domain, metric, value, hyp.size()});
    std::cout << metrics::format_number(value) << '\n';
  }
  if (!a.report.empty()) io::write_file_atomic(a.report, metrics::reports_to_json(reports) + "\n");
  return kSuccess;
}

struct ReportArgs {
  std::vector<std::string> inputs;
  std::string json;
};

int run_report(const ReportArgs& a, const Globals& g, std::ostream&) {
  if (g.dry_run) {
    print_plan({{"command", "report"}, {"inputs", paths_json(a.inputs)}, {"json", a.json}});
    return kSuccess;
  }
  std::vector<metrics::MetricReport> all;
  for (const auto& p : a.inputs) {
    try {
      auto reports = metrics::reports_from_json(io::read_file(p));
      all.insert(all.end(), reports.begin(), reports.end());
    } catch (const DataError& e) {
      throw DataError(p + ": " + e.what());
    }
  }
  std::cout << metrics::format_table(all);
  if (!a.json.empty()) io::write_file_atomic(a.json, metrics::reports_to_json(all) + "\n");
  return kSuccess;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& err) {
  CLI::App app{"Vietnamese biomedical corpus and benchmark pipeline", "vimed"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "TOML file with option values; command-line flags win");

  Globals g;
  app.add_option("--seed", g.seed, "Global seed; unset stage seeds derive from it")
      ->capture_default_str();
  app.add_option("--jobs", g.jobs, "Parallelism bound")->check(CLI::PositiveNumber);
  app.add_flag("--dry-run", g.dry_run, "Print the resolved plan and exit without writing");

  IngestArgs ingest;
  auto* c_ingest = app.add_subcommand("ingest", "MEDLINE XML (.xml, .xml.gz) to abstract JSON-lines");
  c_ingest->add_option("inputs", ingest.inputs, "Input files")->required()->check(CLI::ExistingFile);
  c_ingest->add_option("-o,--out", ingest.out, "Output JSON-lines ('-' for stdout)");
  c_ingest->add_option("--stats", ingest.stats, "Write stats JSON here instead of stderr");

  FilterArgs filter;
  auto* c_filter = app.add_subcommand("filter", "Length filter, dedup and seeded subset");
  c_filter->add_option("-i,--in", filter.in, "Abstract JSON-lines ('-' for stdin)");
  c_filter->add_option("-o,--out", filter.out, "Output JSON-lines");
  c_filter->add_option("--max-tokens", filter.max_tokens, "Drop bodies longer than this")
      ->capture_default_str();
  c_filter->add_flag("--no-dedup", filter.no_dedup, "Keep duplicate bodies");
  filter.subset_opt = c_filter->add_option("--subset", filter.subset, "Reservoir sample size");
  filter.seed_opt = c_filter->add_option("--subset-seed", filter.subset_seed, "Sampling seed");
  c_filter->add_option("--stats", filter.stats, "Write stats JSON here instead of stderr");

  TranslateArgs translate;
  auto* c_translate = app.add_subcommand("translate", "Translate abstract bodies");
  c_translate->add_option("-i,--in", translate.in, "Abstract JSON-lines");
  c_translate->add_option("-o,--out", translate.out, "Translated abstract JSON-lines");
  c_translate->add_option("--bitext-out", translate.bitext_out,
                          "Also write synthetic bitext TSV (source body, translation)");
  c_translate->add_option("--domain", translate.domain, "Domain tag for --bitext-out")
      ->capture_default_str();
  c_translate->add_flag("--translate-title", translate.translate_title,
                        "Translate titles too (default: kept as is)");
  add_backend_options(c_translate, translate.backend);

  MixArgs mix;
  auto* c_mix = app.add_subcommand("selftrain-mix", "Shuffle gold and synthetic bitext together");
  c_mix->add_option("--gold", mix.gold, "Gold bitext TSV files")->check(CLI::ExistingFile);
  c_mix->add_option("--gold-src", mix.gold_src, "Line-aligned gold source text")
      ->check(CLI::ExistingFile);
  c_mix->add_option("--gold-tgt", mix.gold_tgt, "Line-aligned gold target text")
      ->check(CLI::ExistingFile);
  c_mix->add_option("--gold-domain", mix.gold_domain, "Domain tag for --gold-src pairs")
      ->capture_default_str();
  c_mix->add_option("--synthetic", mix.synthetic, "Synthetic bitext TSV files")
      ->check(CLI::ExistingFile);
  c_mix->add_option("--out-dir", mix.out_dir, "Output directory")->required();
  c_mix->add_option("--prefix", mix.prefix, "Shard file prefix")->capture_default_str();
  c_mix->add_option("--shard-size", mix.shard_size, "Pairs per shard (0: one file)");
  mix.seed_opt = c_mix->add_option("--shuffle-seed", mix.shuffle_seed, "Shuffle seed");

  CorruptArgs corrupt_args;
  auto* c_corrupt = app.add_subcommand("corrupt", "Span-corruption examples from abstracts");
  c_corrupt->add_option("-i,--in", corrupt_args.in, "Abstract JSON-lines");
  c_corrupt->add_option("-o,--out", corrupt_args.out, "Output JSON-lines");
  c_corrupt->add_option("--out-dir", corrupt_args.out_dir, "Write shards and manifest here");
  c_corrupt->add_option("--prefix", corrupt_args.prefix, "Shard file prefix")
      ->capture_default_str();
  c_corrupt->add_option("--shard-size", corrupt_args.shard_size, "Records per shard (0: one)");
  c_corrupt->add_option("--rate", corrupt_args.rate, "Corruption rate")->capture_default_str();
  c_corrupt->add_option("--mean-span", corrupt_args.mean_span, "Mean span length")
      ->capture_default_str();
  c_corrupt->add_option("--sentinel", corrupt_args.sentinel, "Sentinel pattern with {i}")
      ->capture_default_str();
  corrupt_args.seed_opt = c_corrupt->add_option("--corrupt-seed", corrupt_args.corrupt_seed,
                                                "Stage seed; per-record seeds derive from it");

  NliLoadArgs nli_load;
  auto* c_nli_load = app.add_subcommand("nli-load", "Load MedNLI-format files and report splits");
  c_nli_load->add_option("inputs", nli_load.inputs, "Input files")
      ->required()
      ->check(CLI::ExistingFile);
  c_nli_load->add_option("--split", nli_load.split, "Split for records lacking one")
      ->check(CLI::IsMember({"train", "dev", "test"}));
  c_nli_load->add_option("-o,--out", nli_load.out, "Output JSON-lines");
  c_nli_load->add_option("--stats", nli_load.stats, "Write stats JSON here instead of stderr");

  NliTranslateArgs nli_translate;
  auto* c_nli_translate = app.add_subcommand("nli-translate", "Machine-translate NLI examples");
  c_nli_translate->add_option("-i,--in", nli_translate.inputs, "Input files")
      ->required()
      ->check(CLI::ExistingFile);
  c_nli_translate->add_option("--split", nli_translate.split, "Split for records lacking one")
      ->check(CLI::IsMember({"train", "dev", "test"}));
  c_nli_translate->add_option("-o,--out", nli_translate.out, "Output JSON-lines");
  add_backend_options(c_nli_translate, nli_translate.backend);

  RefineArgs refine_args;
  auto* c_refine = app.add_subcommand("nli-refine-serve", "Refinement task store and HTTP API");
  c_refine->add_option("-i,--in", refine_args.inputs, "Machine-state examples to enqueue")
      ->check(CLI::ExistingFile);
  c_refine->add_option("--store", refine_args.store, "SQLite task store");
  c_refine->add_option("--lexicon", refine_args.lexicon, "Abbreviation lexicon TSV")
      ->check(CLI::ExistingFile);
  c_refine->add_option("--host", refine_args.host, "Bind address")->capture_default_str();
  c_refine->add_option("--port", refine_args.port, "Bind port")->capture_default_str();
  c_refine->add_option("--lease-minutes", refine_args.lease_minutes, "Claim lease")
      ->capture_default_str();
  c_refine->add_option("--ui-dir", refine_args.ui_dir, "Static UI files to serve at /")
      ->check(CLI::ExistingDirectory);
  c_refine->add_flag("--enqueue-only", refine_args.enqueue_only, "Enqueue and exit");
  c_refine->add_flag("--auto-accept", refine_args.auto_accept,
                     "Accept every lexicon suggestion and write refined examples; no server");
  c_refine->add_option("--annotator", refine_args.annotator, "Annotator id for --auto-accept")
      ->capture_default_str();
  c_refine->add_option("-o,--out", refine_args.out, "Output for --auto-accept");

  ExportArgs export_args;
  auto* c_export = app.add_subcommand("nli-export", "Write per-split files and manifest");
  c_export->add_option("-i,--in", export_args.inputs, "Example files")
      ->check(CLI::ExistingFile);
  c_export->add_option("--store", export_args.store, "Export from a refine store");
  c_export->add_option("--out-dir", export_args.out_dir, "Output directory")->required();
  c_export->add_option("--format", export_args.format, "jsonl, tsv or both")
      ->check(CLI::IsMember({"jsonl", "tsv", "both"}))
      ->capture_default_str();
  c_export->add_option("--policy", export_args.policy, "State policy")
      ->check(CLI::IsMember({"uniform", "require-refined", "allow-mixed"}))
      ->capture_default_str();
  c_export->add_flag("--allow-mixed", export_args.allow_mixed, "Same as --policy allow-mixed");

  EvalArgs eval;
  auto* c_eval = app.add_subcommand("eval", "Score hypotheses against references");
  c_eval->add_option("--metric", eval.metric, "bleu, rouge_l, macro_f1 or accuracy")
      ->required()
      ->check(CLI::IsMember({"bleu", "rouge_l", "macro_f1", "accuracy"}));
  c_eval->add_option("--hyp,--pred", eval.hyp, "Hypotheses or predicted labels, one per line")
      ->check(CLI::ExistingFile);
  c_eval->add_option("--ref,--gold", eval.ref, "References or gold labels, one per line")
      ->check(CLI::ExistingFile);
  c_eval->add_option("--tsv", eval.tsv, "hypothesis<TAB>reference<TAB>domain (BLEU per domain)")
      ->check(CLI::ExistingFile);
  c_eval->add_option("--labels", eval.labels, "Label set for macro_f1")->delimiter(',');
  c_eval->add_flag("--exclude-absent", eval.exclude_absent,
                   "Skip classes absent from both predictions and golds");
  c_eval->add_option("--dataset", eval.dataset, "Dataset name in the report")
      ->capture_default_str();
  c_eval->add_option("--domain", eval.domain, "Domain name in the report")
      ->capture_default_str();
  c_eval->add_option("--report", eval.report, "Write the report JSON here");

  ReportArgs report;
  auto* c_report = app.add_subcommand("report", "Merge report JSON files into one table");
  c_report->add_option("inputs", report.inputs, "Report JSON files")
      ->required()
      ->check(CLI::ExistingFile);
  c_report->add_option("--json", report.json, "Write the merged reports here");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, std::cout, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, std::cout, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, std::cout, err);
    return kUsage;
  }

  try {
    if (*c_ingest) return run_ingest(ingest, g, err);
    if (*c_filter) return run_filter(filter, g, err);
    if (*c_translate) return run_translate(translate, g, err);
    if (*c_mix) return run_mix(mix, g, err);
    if (*c_corrupt) return run_corrupt(corrupt_args, g, err);
    if (*c_nli_load) return run_nli_load(nli_load, g, err);
    if (*c_nli_translate) return run_nli_translate(nli_translate, g, err);
    if (*c_refine) return run_nli_refine(refine_args, g, err);
    if (*c_export) return run_nli_export(export_args, g, err);
    if (*c_eval) return run_eval(eval, g, err);
    if (*c_report) return run_report(report, g, err);
  } catch (const UsageError& e) {
    err << "vimed: usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const Error& e) {
    err << "vimed: error: " << e.what() << '\n';
    return kDataError;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "vimed: error: " << e.what() << '\n';
    return kDataError;
  }
  return kUsage;
}

}  // namespace vimed::cli
