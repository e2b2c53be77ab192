#include "vimed/mednli.hpp"

#include <unicode/uchar.h>
#include <unicode/utf8.h>

#include <algorithm>
#include <cstdint>
#include <nlohmann/json.hpp>
#include <set>
#include <unordered_set>

#include "vimed/error.hpp"
#include "vimed/io.hpp"
#include "vimed/text.hpp"

namespace vimed::nli {

using ordered_json = nlohmann::ordered_json;

std::string_view to_string(Label v) {
  switch (v) {
    case Label::entailment: return "entailment";
    case Label::contradiction: return "contradiction";
    case Label::neutral: return "neutral";
  }
  return "?";
}

std::string_view to_string(Split v) {
  switch (v) {
    case Split::train: return "train";
    case Split::dev: return "dev";
    case Split::test: return "test";
  }
  return "?";
}

std::string_view to_string(State v) {
  switch (v) {
    case State::source: return "source";
    case State::machine: return "machine";
    case State::refined: return "refined";
  }
  return "?";
}

Label label_from_string(std::string_view s) {
  for (const Label l : kLabels) {
    if (to_string(l) == s) return l;
  }
  throw DataError("unknown label '" + std::string(s) + "'");
}

Split split_from_string(std::string_view s) {
  for (const Split v : kSplits) {
    if (to_string(v) == s) return v;
  }
  throw DataError("unknown split '" + std::string(s) + "'");
}

State state_from_string(std::string_view s) {
  for (const State v : {State::source, State::machine, State::refined}) {
    if (to_string(v) == s) return v;
  }
  throw DataError("unknown state '" + std::string(s) + "'");
}

std::string to_json_line(const Example& e) {
  ordered_json j;
  j["uid"] = e.uid;
  j["split"] = to_string(e.split);
  j["label"] = to_string(e.label);
  j["premise"] = e.premise;
  j["hypothesis"] = e.hypothesis;
  j["state"] = to_string(e.state);
  j["applied_rules"] = e.applied_rules;
  if (e.annotator) {
    j["annotator"] = *e.annotator;
  } else {
    j["annotator"] = nullptr;
  }
  j["source_premise"] = e.source_premise;
  j["source_hypothesis"] = e.source_hypothesis;
  return j.dump();
}

namespace {

nlohmann::json parse_object(std::string_view line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(std::string("invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw DataError("record is not a JSON object");
  return j;
}

std::string required_string(const nlohmann::json& j, const char* field, const std::string& uid) {
  const auto it = j.find(field);
  if (it == j.end() || !it->is_string()) {
    throw DataError("record " + uid + ": missing string field '" + field + "'");
  }
  return it->get<std::string>();
}

void check_invariants(const Example& e) {
  if (e.uid.empty()) throw DataError("record with empty uid");
  if (e.state != State::refined && !e.applied_rules.empty()) {
    throw DataError("record " + e.uid + ": applied_rules set on a non-refined example");
  }
}

Example example_from_object(const nlohmann::json& j, std::optional<Split> split_default) {
  Example e;
  e.uid = j.contains("uid") && j["uid"].is_string() ? j["uid"].get<std::string>() : "";
  if (e.uid.empty()) throw DataError("record without uid");
  try {
    e.premise = required_string(j, "premise", e.uid);
    e.hypothesis = required_string(j, "hypothesis", e.uid);
    e.label = label_from_string(required_string(j, "label", e.uid));
    if (j.contains("split")) {
      e.split = split_from_string(required_string(j, "split", e.uid));
    } else if (split_default) {
      e.split = *split_default;
    } else {
      throw DataError("no split given");
    }
    e.state = j.contains("state") ? state_from_string(required_string(j, "state", e.uid))
                                  : State::source;
    if (j.contains("applied_rules")) {
      e.applied_rules = j.at("applied_rules").get<std::vector<std::string>>();
    }
    if (j.contains("annotator") && j["annotator"].is_string()) {
      e.annotator = j["annotator"].get<std::string>();
    }
    e.source_premise = j.value("source_premise", std::string());
    e.source_hypothesis = j.value("source_hypothesis", std::string());
  } catch (const nlohmann::json::exception& ex) {
    throw DataError("record " + e.uid + ": " + ex.what());
  } catch (const DataError& ex) {
    const std::string what = ex.what();
    if (what.rfind("record ", 0) == 0) throw;
    throw DataError("record " + e.uid + ": " + what);
  }
  check_invariants(e);
  return e;
}

std::optional<Split> split_from_filename(const std::filesystem::path& path) {
  const std::string name = path.filename().string();
  std::optional<Split> found;
  for (const Split s : kSplits) {
    if (name.find(to_string(s)) != std::string::npos) {
      if (found) return std::nullopt;
      found = s;
    }
  }
  return found;
}

}  // namespace

Example example_from_json(std::string_view line) {
  return example_from_object(parse_object(line), std::nullopt);
}

SplitStats SplitStats::of(const std::vector<Example>& examples) {
  SplitStats s;
  for (const Split split : kSplits) {
    s.per_split[split] = 0;
    for (const Label l : kLabels) s.labels_per_split[split][l] = 0;
  }
  for (const Label l : kLabels) s.labels[l] = 0;
  for (const Example& e : examples) {
    ++s.per_split[e.split];
    ++s.labels[e.label];
    ++s.labels_per_split[e.split][e.label];
    ++s.per_state[e.state];
  }
  return s;
}

std::size_t SplitStats::count(Split s) const {
  const auto it = per_split.find(s);
  return it == per_split.end() ? 0 : it->second;
}

namespace {

ordered_json stats_json(const SplitStats& s) {
  ordered_json j;
  ordered_json splits;
  for (const auto& [split, n] : s.per_split) splits[std::string(to_string(split))] = n;
  j["splits"] = splits;
  ordered_json labels;
  for (const auto& [label, n] : s.labels) labels[std::string(to_string(label))] = n;
  j["labels"] = labels;
  ordered_json per_split;
  for (const auto& [split, hist] : s.labels_per_split) {
    ordered_json h;
    for (const auto& [label, n] : hist) h[std::string(to_string(label))] = n;
    per_split[std::string(to_string(split))] = h;
  }
  j["labels_per_split"] = per_split;
  ordered_json states = ordered_json::object();
  for (const auto& [state, n] : s.per_state) states[std::string(to_string(state))] = n;
  j["states"] = states;
  return j;
}

}  // namespace

std::string SplitStats::to_json() const { return stats_json(*this).dump(2); }

LoadResult load_mednli(const std::filesystem::path& path, std::optional<Split> split_hint) {
  return load_mednli(std::vector<std::filesystem::path>{path}, split_hint);
}

LoadResult load_mednli(const std::vector<std::filesystem::path>& paths,
                       std::optional<Split> split_hint) {
  LoadResult result;
  std::unordered_set<std::string> uids;
  for (const auto& path : paths) {
    const std::optional<Split> file_split = split_hint ? split_hint : split_from_filename(path);
    const bool tsv = path.extension() == ".tsv";
    io::for_each_line(path, [&](std::string_view line, std::size_t number) {
      if (text::trim(line).empty()) return;
      const std::string where = path.string() + ":" + std::to_string(number) + ": ";
      Example e;
      try {
        if (tsv) {
          const auto fields = io::split_tsv(line);
          if (fields.size() != 5) {
            throw DataError("expected 5 TSV fields, got " + std::to_string(fields.size()));
          }
          e.uid = io::unescape_tsv(fields[0]);
          e.premise = io::unescape_tsv(fields[1]);
          e.hypothesis = io::unescape_tsv(fields[2]);
          try {
            e.label = label_from_string(fields[3]);
          } catch (const DataError& ex) {
            throw DataError("record " + e.uid + ": " + ex.what());
          }
          e.state = state_from_string(fields[4]);
          if (!file_split) throw DataError("record " + e.uid + ": cannot infer split");
          e.split = *file_split;
          check_invariants(e);
        } else {
          const auto j = parse_object(line);
          if (j.contains("sentence1")) {
            // MedNLI interchange shape.
            e.uid = j.contains("pairID") && j["pairID"].is_string()
                        ? j["pairID"].get<std::string>()
                        : path.stem().string() + "-" + std::to_string(number);
            e.premise = required_string(j, "sentence1", e.uid);
            e.hypothesis = required_string(j, "sentence2", e.uid);
            try {
              e.label = label_from_string(required_string(j, "gold_label", e.uid));
            } catch (const DataError& ex) {
              const std::string what = ex.what();
              throw DataError(what.rfind("record ", 0) == 0 ? what
                                                            : "record " + e.uid + ": " + what);
            }
            if (j.contains("split")) {
              e.split = split_from_string(required_string(j, "split", e.uid));
            } else if (file_split) {
              e.split = *file_split;
            } else {
              throw DataError("record " + e.uid + ": cannot infer split");
            }
            e.state = State::source;
          } else {
            e = example_from_object(j, file_split);
          }
        }
      } catch (const DataError& ex) {
        throw DataError(where + ex.what());
      }
      if (!uids.insert(e.uid).second) throw DataError(where + "duplicate uid " + e.uid);
      result.examples.push_back(std::move(e));
    });
  }
  result.stats = SplitStats::of(result.examples);
  return result;
}

TranslateResult translate_nli(const std::vector<Example>& examples, TranslatorBackend& backend,
                              const BatchOptions& options,
                              const std::filesystem::path& checkpoint) {
  TranslateResult result;
  if (examples.empty()) return result;
  TranslationJob job;
  job.checkpoint_path = checkpoint;
  for (const Example& e : examples) {
    if (e.state != State::source) {
      throw DataError("example " + e.uid + " is not in source state");
    }
    job.items.push_back({e.uid + "#premise", e.premise});
    job.items.push_back({e.uid + "#hypothesis", e.hypothesis});
  }
  result.batch = translate_batch(backend, job, options);
  for (const Example& e : examples) {
    const auto premise = job.completed.find(e.uid + "#premise");
    const auto hypothesis = job.completed.find(e.uid + "#hypothesis");
    if (premise == job.completed.end() || hypothesis == job.completed.end()) {
      result.failed_uids.push_back(e.uid);
      continue;
    }
    Example out = e;
    out.source_premise = e.premise;
    out.source_hypothesis = e.hypothesis;
    out.premise = premise->second;
    out.hypothesis = hypothesis->second;
    out.state = State::machine;
    result.examples.push_back(std::move(out));
  }
  return result;
}

std::string_view to_string(AbbrevAction a) {
  switch (a) {
    case AbbrevAction::keep_english: return "keep_english";
    case AbbrevAction::expand_vietnamese: return "expand_vietnamese";
    case AbbrevAction::replace_vietnamese_abbrev: return "replace_vietnamese_abbrev";
  }
  return "?";
}

AbbrevAction abbrev_action_from_string(std::string_view s) {
  for (const auto a : {AbbrevAction::keep_english, AbbrevAction::expand_vietnamese,
                       AbbrevAction::replace_vietnamese_abbrev}) {
    if (to_string(a) == s) return a;
  }
  throw DataError("unknown abbreviation action '" + std::string(s) + "'");
}

AbbrevLexicon::AbbrevLexicon(std::vector<AbbrevRule> rules) : rules_(std::move(rules)) {
  std::set<std::string> ids;
  std::set<std::string> patterns;
  for (const AbbrevRule& r : rules_) {
    if (r.rule_id.empty()) throw DataError("abbreviation rule with empty id");
    if (!ids.insert(r.rule_id).second) throw DataError("duplicate rule id " + r.rule_id);
    text::require_utf8(r.pattern, "rule " + r.rule_id);
    text::require_utf8(r.replacement, "rule " + r.rule_id);
    if (text::trim(r.pattern).empty() || text::trim(r.pattern) != r.pattern) {
      throw DataError("rule " + r.rule_id + ": pattern must be non-empty and trimmed");
    }
    if (!patterns.insert(r.pattern).second) {
      throw DataError("rule " + r.rule_id + ": duplicate pattern '" + r.pattern + "'");
    }
    const bool keep = r.action == AbbrevAction::keep_english;
    if (keep != r.replacement.empty()) {
      throw DataError("rule " + r.rule_id + (keep ? ": keep_english takes no replacement"
                                                  : ": replacement required"));
    }
  }
}

namespace {

struct CodePoints {
  std::vector<UChar32> cps;
  std::vector<std::size_t> offsets;  // byte offset of each code point, plus end
};

CodePoints decode(std::string_view s) {
  CodePoints out;
  const auto* bytes = reinterpret_cast<const std::uint8_t*>(s.data());
  const auto length = static_cast<std::int32_t>(s.size());
  std::int32_t i = 0;
  while (i < length) {
    out.offsets.push_back(static_cast<std::size_t>(i));
    UChar32 c = 0;
    U8_NEXT(bytes, i, length, c);
    if (c < 0) throw DataError("ill-formed UTF-8 in sentence");
    out.cps.push_back(c);
  }
  out.offsets.push_back(s.size());
  return out;
}

bool is_word_char(UChar32 c) {
  return u_isalnum(c) || u_charType(c) == U_NON_SPACING_MARK ||
         u_charType(c) == U_COMBINING_SPACING_MARK || c == '_';
}

struct CompiledRule {
  const AbbrevRule* rule;
  std::vector<UChar32> pattern;  // case-folded when case-insensitive
};

std::vector<CompiledRule> compile(const AbbrevLexicon& lexicon) {
  std::vector<CompiledRule> compiled;
  for (const AbbrevRule& r : lexicon.rules()) {
    CompiledRule c{&r, decode(r.pattern).cps};
    if (!r.case_sensitive) {
      for (UChar32& cp : c.pattern) cp = u_foldCase(cp, U_FOLD_CASE_DEFAULT);
    }
    compiled.push_back(std::move(c));
  }
  // Longest pattern first; ties broken by rule id for determinism.
  std::stable_sort(compiled.begin(), compiled.end(), [](const auto& a, const auto& b) {
    if (a.pattern.size() != b.pattern.size()) return a.pattern.size() > b.pattern.size();
    return a.rule->rule_id < b.rule->rule_id;
  });
  return compiled;
}

bool matches_at(const CodePoints& text, std::size_t pos, const CompiledRule& rule) {
  const std::size_t n = rule.pattern.size();
  if (pos + n > text.cps.size()) return false;
  for (std::size_t k = 0; k < n; ++k) {
    UChar32 c = text.cps[pos + k];
    if (!rule.rule->case_sensitive) c = u_foldCase(c, U_FOLD_CASE_DEFAULT);
    if (c != rule.pattern[k]) return false;
  }
  const bool starts_word = is_word_char(rule.pattern.front());
  const bool ends_word = is_word_char(rule.pattern.back());
  if (starts_word && pos > 0 && is_word_char(text.cps[pos - 1])) return false;
  if (ends_word && pos + n < text.cps.size() && is_word_char(text.cps[pos + n])) return false;
  return true;
}

AbbrevResult apply_compiled(std::string_view sentence, const std::vector<CompiledRule>& rules) {
  AbbrevResult result;
  if (rules.empty()) {
    result.sentence = std::string(sentence);
    return result;
  }
  const CodePoints text = decode(sentence);
  std::size_t out_cps = 0;
  std::size_t pos = 0;
  std::size_t copied_byte = 0;
  while (pos < text.cps.size()) {
    const CompiledRule* hit = nullptr;
    for (const CompiledRule& rule : rules) {
      if (matches_at(text, pos, rule)) {
        hit = &rule;
        break;
      }
    }
    if (hit == nullptr) {
      ++pos;
      ++out_cps;
      continue;
    }
    const AbbrevRule& r = *hit->rule;
    const std::size_t match_end = pos + hit->pattern.size();
    result.sentence.append(sentence.substr(copied_byte, text.offsets[pos] - copied_byte));
    std::string_view emitted;
    if (r.action == AbbrevAction::keep_english) {
      emitted = sentence.substr(text.offsets[pos], text.offsets[match_end] - text.offsets[pos]);
    } else {
      emitted = r.replacement;
    }
    result.sentence.append(emitted);
    const std::size_t emitted_cps = text::code_point_count(emitted);
    result.hits.push_back({r.rule_id, out_cps, out_cps + emitted_cps, pos, match_end});
    out_cps += emitted_cps;
    if (std::find(result.applied_rules.begin(), result.applied_rules.end(), r.rule_id) ==
        result.applied_rules.end()) {
      result.applied_rules.push_back(r.rule_id);
    }
    copied_byte = text.offsets[match_end];
    pos = match_end;
  }
  result.sentence.append(sentence.substr(copied_byte));
  return result;
}

}  // namespace

std::vector<std::string> AbbrevLexicon::retrigger_warnings() const {
  std::vector<std::string> warnings;
  const auto compiled = compile(*this);
  for (const AbbrevRule& r : rules_) {
    if (r.replacement.empty()) continue;
    const AbbrevResult again = apply_compiled(r.replacement, compiled);
    for (const std::string& id : again.applied_rules) {
      warnings.push_back("rule " + r.rule_id + ": replacement '" + r.replacement +
                         "' contains the pattern of rule " + id);
    }
  }
  return warnings;
}

std::string AbbrevLexicon::to_json() const {
  ordered_json arr = ordered_json::array();
  for (const AbbrevRule& r : rules_) {
    ordered_json j;
    j["rule_id"] = r.rule_id;
    j["pattern"] = r.pattern;
    j["action"] = to_string(r.action);
    j["replacement"] = r.replacement;
    j["notes"] = r.notes;
    j["case_sensitive"] = r.case_sensitive;
    arr.push_back(std::move(j));
  }
  return arr.dump();
}

AbbrevLexicon parse_abbrev_lexicon(std::string_view tsv) {
  std::vector<AbbrevRule> rules;
  std::size_t pos = 0;
  std::size_t number = 0;
  while (pos < tsv.size()) {
    std::size_t eol = tsv.find('\n', pos);
    if (eol == std::string_view::npos) eol = tsv.size();
    const std::string_view line = tsv.substr(pos, eol - pos);
    pos = eol + 1;
    ++number;
    if (text::trim(line).empty() || line.front() == '#') continue;
    const auto fields = io::split_tsv(line);
    const std::string where = "abbreviation lexicon line " + std::to_string(number) + ": ";
    if (fields[0] == "rule_id") continue;
    if (fields.size() != 5 && fields.size() != 6) {
      throw DataError(where + "expected 5 or 6 fields, got " + std::to_string(fields.size()));
    }
    AbbrevRule r;
    try {
      r.rule_id = io::unescape_tsv(fields[0]);
      r.pattern = io::unescape_tsv(fields[1]);
      r.action = abbrev_action_from_string(fields[2]);
      r.replacement = io::unescape_tsv(fields[3]);
      r.notes = io::unescape_tsv(fields[4]);
      if (fields.size() == 6) {
        if (fields[5] == "ci") {
          r.case_sensitive = false;
        } else if (fields[5] != "cs" && !fields[5].empty()) {
          throw DataError("case flag must be cs or ci");
        }
      }
    } catch (const DataError& e) {
      throw DataError(where + e.what());
    }
    rules.push_back(std::move(r));
  }
  return AbbrevLexicon(std::move(rules));
}

AbbrevLexicon load_abbrev_lexicon(const std::filesystem::path& path) {
  return parse_abbrev_lexicon(io::read_file(path));
}

AbbrevResult apply_abbrev_rules(std::string_view sentence, const AbbrevLexicon& lexicon) {
  return apply_compiled(sentence, compile(lexicon));
}

std::vector<Example> refine_with_lexicon(const std::vector<Example>& examples,
                                         const AbbrevLexicon& lexicon,
                                         const std::string& annotator) {
  const auto compiled = compile(lexicon);
  std::vector<Example> out;
  out.reserve(examples.size());
  for (const Example& e : examples) {
    if (e.state != State::machine) {
      throw DataError("example " + e.uid + " is not in machine state");
    }
    Example r = e;
    const AbbrevResult premise = apply_compiled(e.premise, compiled);
    const AbbrevResult hypothesis = apply_compiled(e.hypothesis, compiled);
    r.premise = premise.sentence;
    r.hypothesis = hypothesis.sentence;
    r.applied_rules = premise.applied_rules;
    for (const auto& id : hypothesis.applied_rules) {
      if (std::find(r.applied_rules.begin(), r.applied_rules.end(), id) == r.applied_rules.end()) {
        r.applied_rules.push_back(id);
      }
    }
    r.state = State::refined;
    r.annotator = annotator;
    out.push_back(std::move(r));
  }
  return out;
}

ExportFormat export_format_from_string(std::string_view s) {
  if (s == "jsonl") return ExportFormat::jsonl;
  if (s == "tsv") return ExportFormat::tsv;
  if (s == "both") return ExportFormat::both;
  throw UsageError("unknown export format '" + std::string(s) + "'");
}

std::string ExportManifest::to_json() const {
  ordered_json j = stats_json(stats);
  j["files"] = files;
  return j.dump(2);
}

ExportManifest export_vimednli(const std::vector<Example>& examples,
                               const std::filesystem::path& dir, ExportFormat format,
                               StatePolicy policy) {
  std::size_t machine = 0;
  std::size_t refined = 0;
  for (const Example& e : examples) {
    check_invariants(e);
    if (e.state == State::source) {
      throw DataError("example " + e.uid + " is still in source state");
    }
    (e.state == State::machine ? machine : refined) += 1;
  }
  if (policy == StatePolicy::require_refined && machine > 0) {
    throw DataError(std::to_string(machine) + " of " + std::to_string(examples.size()) +
                    " examples are not refined yet");
  }
  if (policy == StatePolicy::uniform && machine > 0 && refined > 0) {
    throw DataError("refusing to export a mix of " + std::to_string(machine) + " machine and " +
                    std::to_string(refined) + " refined examples without allow-mixed");
  }

  ExportManifest manifest;
  manifest.stats = SplitStats::of(examples);
  std::filesystem::create_directories(dir);
  for (const Split split : kSplits) {
    std::string jsonl;
    std::string tsv;
    for (const Example& e : examples) {
      if (e.split != split) continue;
      jsonl += to_json_line(e);
      jsonl += '\n';
      tsv += io::escape_tsv(e.uid) + '\t' + io::escape_tsv(e.premise) + '\t' +
             io::escape_tsv(e.hypothesis) + '\t' + std::string(to_string(e.label)) + '\t' +
             std::string(to_string(e.state)) + '\n';
    }
    const std::string base(to_string(split));
    if (format != ExportFormat::tsv) {
      io::write_file_atomic(dir / (base + ".jsonl"), jsonl);
      manifest.files.push_back(base + ".jsonl");
    }
    if (format != ExportFormat::jsonl) {
      io::write_file_atomic(dir / (base + ".tsv"), tsv);
      manifest.files.push_back(base + ".tsv");
    }
  }
  io::write_file_atomic(dir / "manifest.json", manifest.to_json() + "\n");
  return manifest;
}

}  // namespace vimed::nli
