#include <gtest/gtest.h>

#include <algorithm>

#include "test_util.hpp"
#include "vimed/error.hpp"
#include "vimed/mednli.hpp"

using namespace vimed;
using namespace vimed::nli;
using namespace vimed::testing;

namespace {

AbbrevLexicon shipped_lexicon() { return load_abbrev_lexicon(data_dir() / "abbrev_lexicon.tsv"); }

std::vector<Example> machine_examples(std::size_t n) {
  std::vector<Example> out;
  for (std::size_t i = 0; i < n; ++i) {
    Example e;
    e.uid = "u" + std::to_string(i);
    e.premise = "B\xE1\xBB\x87nh nh\xC3\xA2n kh\xC3\xB4ng c\xC3\xB3 PMH";
    e.hypothesis = "thay \xC4\x91\xE1\xBB\x95i v\xE1\xBB\x81 QRS";
    e.label = kLabels[i % 3];
    e.split = kSplits[i % 3];
    e.state = State::machine;
    e.source_premise = "Patient has no PMH";
    e.source_hypothesis = "no QRS changes";
    out.push_back(e);
  }
  return out;
}

}  // namespace

TEST(Load, MedNliJsonLines) {
  TempDir dir;
  write_text(dir / "mli_train_v1.jsonl",
             R"({"sentence1": "p1", "sentence2": "h1", "gold_label": "entailment", "pairID": "a"})" "\n"
             R"({"sentence1": "p2", "sentence2": "h2", "gold_label": "contradiction", "pairID": "b"})" "\n"
             R"({"sentence1": "p3", "sentence2": "h3", "gold_label": "neutral"})" "\n");
  const auto r = load_mednli(dir / "mli_train_v1.jsonl");
  ASSERT_EQ(r.examples.size(), 3u);
  EXPECT_EQ(r.examples[0].uid, "a");
  EXPECT_EQ(r.examples[2].uid, "mli_train_v1-3");
  EXPECT_EQ(r.examples[1].label, Label::contradiction);
  for (const auto& e : r.examples) {
    EXPECT_EQ(e.state, State::source);
    EXPECT_EQ(e.split, Split::train);
  }
  EXPECT_EQ(r.stats.count(Split::train), 3u);
  EXPECT_EQ(r.stats.labels.at(Label::entailment), 1u);
  EXPECT_EQ(r.stats.labels.at(Label::contradiction), 1u);
  EXPECT_EQ(r.stats.labels.at(Label::neutral), 1u);
}

TEST(Load, ErrorsNameTheRecord) {
  TempDir dir;
  write_text(dir / "dev.jsonl",
             R"({"sentence1": "p", "sentence2": "h", "gold_label": "maybe", "pairID": "x42"})" "\n");
  try {
    load_mednli(dir / "dev.jsonl");
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("x42"), std::string::npos) << e.what();
  }
  write_text(dir / "dev2.jsonl", R"({"sentence1": "p", "gold_label": "neutral", "pairID": "y7"})" "\n");
  try {
    load_mednli(dir / "dev2.jsonl");
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("y7"), std::string::npos) << e.what();
  }
  write_text(dir / "nosplit.jsonl", R"({"sentence1": "p", "sentence2": "h", "gold_label": "neutral"})" "\n");
  EXPECT_THROW(load_mednli(dir / "nosplit.jsonl"), DataError);
  EXPECT_NO_THROW(load_mednli(dir / "nosplit.jsonl", Split::test));
}

TEST(Load, DuplicateUidsAcrossFilesAreRejected) {
  TempDir dir;
  write_text(dir / "train.jsonl", mednli_fixture("s", 2));
  write_text(dir / "test.jsonl", mednli_fixture("s", 2));
  EXPECT_THROW(load_mednli(std::vector<fs::path>{dir / "train.jsonl", dir / "test.jsonl"}),
               DataError);
}

TEST(Load, ArtifactJsonAndTsvRoundTrip) {
  TempDir dir;
  auto refined = refine_with_lexicon(machine_examples(6), shipped_lexicon(), "ann");
  const auto manifest = export_vimednli(refined, dir / "out", ExportFormat::both);
  EXPECT_EQ(manifest.files.size(), 6u);
  const auto from_jsonl = load_mednli(std::vector<fs::path>{
      dir / "out/train.jsonl", dir / "out/dev.jsonl", dir / "out/test.jsonl"});
  std::vector<Example> expected;
  for (const Split s : kSplits) {
    for (const auto& e : refined) {
      if (e.split == s) expected.push_back(e);
    }
  }
  EXPECT_EQ(from_jsonl.examples, expected);
  const auto from_tsv = load_mednli(std::vector<fs::path>{
      dir / "out/train.tsv", dir / "out/dev.tsv", dir / "out/test.tsv"});
  ASSERT_EQ(from_tsv.examples.size(), expected.size());
  for (std::size_t i = 0; i < expected.size(); ++i) {
    EXPECT_EQ(from_tsv.examples[i].uid, expected[i].uid);
    EXPECT_EQ(from_tsv.examples[i].premise, expected[i].premise);
    EXPECT_EQ(from_tsv.examples[i].label, expected[i].label);
    EXPECT_EQ(from_tsv.examples[i].split, expected[i].split);
  }
  EXPECT_EQ(from_tsv.stats, from_jsonl.stats);
}

TEST(TranslateNli, PreservesUidLabelSplit) {
  TempDir dir;
  write_text(dir / "train.jsonl", mednli_fixture("tr", 2));
  const auto loaded = load_mednli(dir / "train.jsonl");
  MockLexiconBackend backend(parse_lexicon(mock_lexicon_tsv()));
  const auto r = translate_nli(loaded.examples, backend);
  ASSERT_EQ(r.examples.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(r.examples[i].uid, loaded.examples[i].uid);
    EXPECT_EQ(r.examples[i].label, loaded.examples[i].label);
    EXPECT_EQ(r.examples[i].split, loaded.examples[i].split);
    EXPECT_EQ(r.examples[i].state, State::machine);
    EXPECT_EQ(r.examples[i].source_premise, loaded.examples[i].premise);
  }
  EXPECT_EQ(r.examples[0].premise.rfind("B\xE1\xBB\x87nh_nh\xC3\xA2n", 0), 0u);
  EXPECT_TRUE(translate_nli({}, backend).examples.empty());
  EXPECT_THROW(translate_nli(r.examples, backend), DataError);  // already machine
}

TEST(Abbrev, ShippedRulesReproduceReferenceRows) {
  const auto lex = shipped_lexicon();
  const auto pmh = apply_abbrev_rules("kh\xC3\xB4ng c\xC3\xB3 PMH", lex);
  EXPECT_EQ(pmh.sentence, "kh\xC3\xB4ng c\xC3\xB3 ti\xE1\xBB\x81n s\xE1\xBB\xAD b\xE1\xBB\x87nh");
  EXPECT_EQ(pmh.applied_rules, (std::vector<std::string>{"pmh"}));
  const auto qrs = apply_abbrev_rules("thay \xC4\x91\xE1\xBB\x95i v\xE1\xBB\x81 QRS", lex);
  EXPECT_EQ(qrs.sentence, "thay \xC4\x91\xE1\xBB\x95i v\xE1\xBB\x81 QRS");
  EXPECT_EQ(qrs.applied_rules, (std::vector<std::string>{"qrs"}));
  ASSERT_EQ(qrs.hits.size(), 1u);
  EXPECT_EQ(qrs.hits[0].begin, 12u);
  EXPECT_EQ(qrs.hits[0].end, 15u);
  const auto op = apply_abbrev_rules("B\xE1\xBB\x87nh nh\xC3\xA2n Post Op.", lex);
  EXPECT_EQ(op.sentence, "B\xE1\xBB\x87nh nh\xC3\xA2n h\xE1\xBA\xADu ph\xE1\xBA\xABu thu\xE1\xBA\xADt.");
}

TEST(Abbrev, EmptyLexiconIsIdentity) {
  const auto r = apply_abbrev_rules("kh\xC3\xB4ng c\xC3\xB3 PMH", AbbrevLexicon());
  EXPECT_EQ(r.sentence, "kh\xC3\xB4ng c\xC3\xB3 PMH");
  EXPECT_TRUE(r.applied_rules.empty());
}

TEST(Abbrev, LongestMatchAndTokenBoundaries) {
  const AbbrevLexicon lex({{"h", "H", AbbrevAction::expand_vietnamese, "HHH", "", true},
                           {"pmh", "PMH", AbbrevAction::expand_vietnamese, "X", "", true}});
  EXPECT_EQ(apply_abbrev_rules("PMH H", lex).sentence, "X HHH");
  EXPECT_EQ(apply_abbrev_rules("PMHx HPMH (H)", lex).sentence, "PMHx HPMH (HHH)");
  EXPECT_EQ(apply_abbrev_rules("pmh", lex).sentence, "pmh");  // case-sensitive
}

TEST(Abbrev, ReplacementsDoNotRetrigger) {
  const auto lex = shipped_lexicon();
  EXPECT_TRUE(lex.retrigger_warnings().empty());
  const std::string once = apply_abbrev_rules("PMH v\xC3\xA0 QRS post op", lex).sentence;
  EXPECT_EQ(apply_abbrev_rules(once, lex).sentence, once);
  const AbbrevLexicon loop({{"a", "AB", AbbrevAction::expand_vietnamese, "x AB", "", true}});
  EXPECT_EQ(loop.retrigger_warnings().size(), 1u);
}

TEST(Abbrev, LexiconValidation) {
  EXPECT_THROW(parse_abbrev_lexicon("r\tP\tkeep_english\tX\tn\n"), DataError);
  EXPECT_THROW(parse_abbrev_lexicon("r\tP\texpand_vietnamese\t\tn\n"), DataError);
  EXPECT_THROW(parse_abbrev_lexicon("r\tP\tbogus\tX\tn\n"), DataError);
  EXPECT_THROW(parse_abbrev_lexicon("r\tP\tkeep_english\t\tn\ns\tP\tkeep_english\t\tn\n"), DataError);
  EXPECT_THROW(parse_abbrev_lexicon("r\tP\tkeep_english\t\n"), DataError);
  EXPECT_EQ(shipped_lexicon().rules().size(), 3u);
}

TEST(Refine, LexiconRefinementMarksRefined) {
  const auto refined = refine_with_lexicon(machine_examples(3), shipped_lexicon(), "auto");
  for (const auto& e : refined) {
    EXPECT_EQ(e.state, State::refined);
    EXPECT_EQ(e.applied_rules, (std::vector<std::string>{"pmh", "qrs"}));
    EXPECT_EQ(e.annotator, "auto");
  }
}

TEST(Export, CountsLabelsAndPolicy) {
  TempDir dir;
  std::vector<Example> examples;
  for (std::size_t i = 0; i < 30; ++i) {
    Example e = machine_examples(1)[0];
    e.uid = "x" + std::to_string(i);
    e.split = i < 20 ? Split::train : (i < 25 ? Split::dev : Split::test);
    e.label = kLabels[i % 3];
    examples.push_back(e);
  }
  const auto refined = refine_with_lexicon(examples, shipped_lexicon());
  const auto m = export_vimednli(refined, dir.path(), ExportFormat::jsonl);
  EXPECT_EQ(m.stats.count(Split::train), 20u);
  EXPECT_EQ(m.stats.count(Split::dev), 5u);
  EXPECT_EQ(m.stats.count(Split::test), 5u);
  EXPECT_EQ(m.stats.labels, SplitStats::of(examples).labels);
  auto lines = [](const std::string& s) { return std::count(s.begin(), s.end(), '\n'); };
  EXPECT_EQ(lines(read_text(dir / "train.jsonl")), 20);
  EXPECT_EQ(lines(read_text(dir / "dev.jsonl")), 5);
  EXPECT_EQ(lines(read_text(dir / "test.jsonl")), 5);
  EXPECT_TRUE(fs::exists(dir / "manifest.json"));

  auto mixed = refined;
  mixed[0] = examples[0];
  EXPECT_THROW(export_vimednli(mixed, dir / "m", ExportFormat::jsonl), DataError);
  EXPECT_NO_THROW(export_vimednli(mixed, dir / "m", ExportFormat::jsonl, StatePolicy::allow_mixed));
  EXPECT_THROW(export_vimednli(examples, dir / "r", ExportFormat::jsonl, StatePolicy::require_refined),
               DataError);
  auto source = examples;
  source[0].state = State::source;
  EXPECT_THROW(export_vimednli(source, dir / "s", ExportFormat::jsonl, StatePolicy::allow_mixed),
               DataError);
}
