#include "vimed/self_training.hpp"

#include <fstream>
#include <iomanip>
#include <nlohmann/json.hpp>
#include <sstream>
#include <unordered_set>

#include "vimed/error.hpp"
#include "vimed/io.hpp"
#include "vimed/random.hpp"

namespace vimed {

std::string_view to_string(Origin origin) {
  return origin == Origin::gold ? "gold" : "synthetic";
}

Origin origin_from_string(std::string_view s) {
  if (s == "gold") return Origin::gold;
  if (s == "synthetic") return Origin::synthetic;
  throw DataError("unknown origin '" + std::string(s) + "'");
}

BitextPair::BitextPair(std::string source, std::string target, Origin origin,
                       std::string domain)
    : source_(std::move(source)),
      target_(std::move(target)),
      origin_(origin),
      domain_(std::move(domain)) {
  if (source_.empty() || target_.empty()) {
    throw DataError("bitext pair with empty source or target");
  }
}

std::string to_tsv_line(const BitextPair& pair) {
  std::string line = io::escape_tsv(pair.source());
  line += '\t';
  line += io::escape_tsv(pair.target());
  line += '\t';
  line += to_string(pair.origin());
  line += '\t';
  line += io::escape_tsv(pair.domain());
  return line;
}

BitextPair bitext_from_tsv(std::string_view line) {
  const auto fields = io::split_tsv(line);
  if (fields.size() != 4) {
    throw DataError("bitext line has " + std::to_string(fields.size()) +
                    " fields, expected 4");
  }
  return BitextPair(io::unescape_tsv(fields[0]), io::unescape_tsv(fields[1]),
                    origin_from_string(fields[2]), io::unescape_tsv(fields[3]));
}

std::vector<BitextPair> load_bitext(const std::filesystem::path& path) {
  std::vector<BitextPair> pairs;
  io::for_each_line(path, [&](std::string_view line, std::size_t number) {
    if (line.empty()) return;
    try {
      pairs.push_back(bitext_from_tsv(line));
    } catch (const DataError& e) {
      throw DataError(path.string() + ":" + std::to_string(number) + ": " + e.what());
    }
  });
  return pairs;
}

std::vector<BitextPair> load_parallel(const std::filesystem::path& source,
                                      const std::filesystem::path& target, Origin origin,
                                      const std::string& domain) {
  std::vector<std::string> sources;
  io::for_each_line(source, [&](std::string_view line, std::size_t) {
    sources.emplace_back(line);
  });
  std::vector<BitextPair> pairs;
  std::size_t count = 0;
  io::for_each_line(target, [&](std::string_view line, std::size_t number) {
    if (count >= sources.size()) {
      throw DataError(target.string() + " has more lines than " + source.string());
    }
    try {
      pairs.emplace_back(std::move(sources[count]), std::string(line), origin, domain);
    } catch (const DataError& e) {
      throw DataError(target.string() + ":" + std::to_string(number) + ": " + e.what());
    }
    ++count;
  });
  if (count != sources.size()) {
    throw DataError(source.string() + " has more lines than " + target.string());
  }
  return pairs;
}

SynthesisResult synthesize_bitext(const std::vector<Abstract>& mono, TranslatorBackend& backend,
                                  const BatchOptions& options,
                                  const std::filesystem::path& checkpoint) {
  SynthesisResult result;
  if (mono.empty()) return result;
  TranslationJob job;
  job.checkpoint_path = checkpoint;
  job.items.reserve(mono.size());
  for (const Abstract& a : mono) job.items.push_back({a.pmid, a.body});
  result.batch = translate_batch(backend, job, options);
  result.failed_pmids = result.batch.failed_ids;
  for (const Abstract& a : mono) {
    const auto it = job.completed.find(a.pmid);
    if (it == job.completed.end() || it->second.empty()) continue;
    result.pairs.emplace_back(a.body, it->second, Origin::synthetic, "medical");
  }
  return result;
}

std::string MixManifest::to_json() const {
  nlohmann::ordered_json j;
  j["gold_count"] = gold_count;
  j["synthetic_count"] = synthetic_count;
  j["total_count"] = total_count;
  j["shuffle_seed"] = shuffle_seed;
  j["output_shards"] = output_shards;
  j["cross_set_source_collisions"] = cross_set_source_collisions;
  return j.dump(2);
}

MixResult mix_corpora(const std::vector<BitextPair>& gold,
                      const std::vector<BitextPair>& synthetic, std::uint64_t seed) {
  MixResult result;
  auto& m = result.manifest;
  for (const auto& p : gold) {
    if (p.origin() != Origin::gold) throw DataError("gold input contains a synthetic pair");
  }
  for (const auto& p : synthetic) {
    if (p.origin() != Origin::synthetic) {
      throw DataError("synthetic input contains a gold pair");
    }
  }
  m.gold_count = gold.size();
  m.synthetic_count = synthetic.size();
  m.total_count = gold.size() + synthetic.size();
  m.shuffle_seed = seed;

  std::unordered_set<std::string_view> gold_sources;
  for (const auto& p : gold) gold_sources.insert(p.source());
  for (const auto& p : synthetic) {
    if (gold_sources.contains(p.source())) ++m.cross_set_source_collisions;
  }

  auto& out = result.pairs;
  out.reserve(m.total_count);
  out.insert(out.end(), gold.begin(), gold.end());
  out.insert(out.end(), synthetic.begin(), synthetic.end());
  Rng rng(seed);
  for (std::size_t i = out.size(); i > 1; --i) {
    const std::size_t j = rng.below(i);
    std::swap(out[i - 1], out[j]);
  }
  return result;
}

void write_shards(const std::vector<BitextPair>& pairs, const std::filesystem::path& dir,
                  std::string_view prefix, std::size_t shard_size, MixManifest& manifest) {
  std::filesystem::create_directories(dir);
  const std::size_t per_shard = shard_size == 0 ? std::max<std::size_t>(pairs.size(), 1) : shard_size;
  std::size_t shard = 0;
  for (std::size_t first = 0; first < pairs.size() || shard == 0; first += per_shard, ++shard) {
    std::ostringstream name;
    name << prefix << '-' << std::setw(5) << std::setfill('0') << shard << ".tsv";
    const auto path = dir / name.str();
    std::string content;
    const std::size_t last = std::min(first + per_shard, pairs.size());
    for (std::size_t i = first; i < last; ++i) {
      content += to_tsv_line(pairs[i]);
      content += '\n';
    }
    io::write_file_atomic(path, content);
    manifest.output_shards.push_back(path.filename().string());
    if (last >= pairs.size()) break;
  }
}

}  // namespace vimed
