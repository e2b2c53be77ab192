#pragma once

// NLI benchmark translation workflow: load MedNLI-format data, machine
// translate it, apply abbreviation rules, export the translated benchmark.

#include <array>
#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "vimed/translation.hpp"

namespace vimed::nli {

enum class Label { entailment, contradiction, neutral };
enum class Split { train, dev, test };
enum class State { source, machine, refined };

inline constexpr std::array<Split, 3> kSplits = {Split::train, Split::dev, Split::test};
inline constexpr std::array<Label, 3> kLabels = {Label::entailment, Label::contradiction,
                                                 Label::neutral};

std::string_view to_string(Label v);
std::string_view to_string(Split v);
std::string_view to_string(State v);
// Throw DataError on unknown values.
Label label_from_string(std::string_view s);
Split split_from_string(std::string_view s);
State state_from_string(std::string_view s);

struct Example {
  std::string uid;
  std::string premise;
  std::string hypothesis;
  Label label = Label::neutral;
  Split split = Split::train;
  State state = State::source;
  std::vector<std::string> applied_rules;  // empty unless refined
  std::optional<std::string> annotator;
  // English originals, filled in by translate_nli.
  std::string source_premise;
  std::string source_hypothesis;

  friend bool operator==(const Example&, const Example&) = default;
};

std::string to_json_line(const Example& e);
Example example_from_json(std::string_view line);  // artifact shape only

struct SplitStats {
  std::map<Split, std::size_t> per_split;
  std::map<Label, std::size_t> labels;
  std::map<Split, std::map<Label, std::size_t>> labels_per_split;
  std::map<State, std::size_t> per_state;

  static SplitStats of(const std::vector<Example>& examples);
  std::size_t count(Split s) const;
  std::string to_json() const;
  friend bool operator==(const SplitStats&, const SplitStats&) = default;
};

struct LoadResult {
  std::vector<Example> examples;
  SplitStats stats;
};

// Accepts MedNLI JSON-lines (sentence1, sentence2, gold_label, optional
// pairID), this toolkit's JSON-lines export, or its TSV export (uid,
// premise, hypothesis, label, state). MedNLI records load with
// state=source. The split comes from a "split" field, else split_hint, else
// the file name (train/dev/test). Throws DataError naming the offending uid.
LoadResult load_mednli(const std::filesystem::path& path,
                       std::optional<Split> split_hint = std::nullopt);
// Several files at once; uids must be unique across all of them.
LoadResult load_mednli(const std::vector<std::filesystem::path>& paths,
                       std::optional<Split> split_hint = std::nullopt);

struct TranslateResult {
  std::vector<Example> examples;  // state=machine
  std::vector<std::string> failed_uids;
  BatchResult batch;
};

// Premise and hypothesis go through the backend; uid, label and split are
// untouched. Examples with a failed field are left out and listed.
TranslateResult translate_nli(const std::vector<Example>& examples, TranslatorBackend& backend,
                              const BatchOptions& options = {},
                              const std::filesystem::path& checkpoint = {});

enum class AbbrevAction { keep_english, expand_vietnamese, replace_vietnamese_abbrev };
std::string_view to_string(AbbrevAction a);
AbbrevAction abbrev_action_from_string(std::string_view s);

struct AbbrevRule {
  std::string rule_id;
  std::string pattern;  // one token or a phrase
  AbbrevAction action = AbbrevAction::keep_english;
  std::string replacement;  // empty iff keep_english
  std::string notes;
  bool case_sensitive = true;
};

// Validated rule list. Patterns are unique; replacement presence matches
// the action.
class AbbrevLexicon {
 public:
  AbbrevLexicon() = default;
  explicit AbbrevLexicon(std::vector<AbbrevRule> rules);  // throws DataError

  const std::vector<AbbrevRule>& rules() const { return rules_; }
  bool empty() const { return rules_.empty(); }

  // Replacements in which some rule would fire again; applying such a
  // lexicon twice may not be idempotent.
  std::vector<std::string> retrigger_warnings() const;

  std::string to_json() const;

 private:
  std::vector<AbbrevRule> rules_;
};

// TSV rule_id, pattern, action, replacement, notes[, case] where case is
// "cs" (default) or "ci". Lines starting with '#' and a header line whose
// first field is "rule_id" are skipped.
AbbrevLexicon parse_abbrev_lexicon(std::string_view tsv);
AbbrevLexicon load_abbrev_lexicon(const std::filesystem::path& path);

// Offsets are in code points.
struct RuleHit {
  std::string rule_id;
  std::size_t begin = 0;  // in the output sentence
  std::size_t end = 0;
  std::size_t source_begin = 0;  // in the input sentence
  std::size_t source_end = 0;
};

struct AbbrevResult {
  std::string sentence;
  std::vector<std::string> applied_rules;  // distinct, first-hit order
  std::vector<RuleHit> hits;
};

// Left-to-right scan; at each token boundary the longest matching pattern
// wins and matching resumes after it. keep_english hits leave the text as is.
AbbrevResult apply_abbrev_rules(std::string_view sentence, const AbbrevLexicon& lexicon);

// Applies the lexicon to both fields of machine examples and marks them
// refined, i.e. accepts every suggestion without human edits.
std::vector<Example> refine_with_lexicon(const std::vector<Example>& examples,
                                         const AbbrevLexicon& lexicon,
                                         const std::string& annotator = "lexicon");

enum class ExportFormat { jsonl, tsv, both };
ExportFormat export_format_from_string(std::string_view s);

enum class StatePolicy {
  uniform,          // all machine or all refined
  require_refined,  // all refined
  allow_mixed,      // machine and refined together
};

struct ExportManifest {
  SplitStats stats;
  std::vector<std::string> files;
  std::string to_json() const;
};

// Writes <split>.jsonl and/or <split>.tsv plus manifest.json under dir.
// Throws DataError for source-state examples or a policy violation.
ExportManifest export_vimednli(const std::vector<Example>& examples,
                               const std::filesystem::path& dir, ExportFormat format,
                               StatePolicy policy = StatePolicy::uniform);

}  // namespace vimed::nli
