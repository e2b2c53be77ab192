#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>

#include "vimed/error.hpp"
#include "vimed/metrics.hpp"
#include "vimed/random.hpp"
#include "vimed/text.hpp"

using namespace vimed;
using namespace vimed::metrics;

namespace {

// Exponential oracle: longest common subsequence by trying every subsequence
// of the shorter side.
std::size_t brute_force_lcs(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  const auto& s = a.size() <= b.size() ? a : b;
  const auto& t = a.size() <= b.size() ? b : a;
  std::size_t best = 0;
  for (std::uint32_t mask = 0; mask < (1u << s.size()); ++mask) {
    std::size_t j = 0;
    std::size_t len = 0;
    bool ok = true;
    for (std::size_t i = 0; i < s.size() && ok; ++i) {
      if (!(mask & (1u << i))) continue;
      while (j < t.size() && t[j] != s[i]) ++j;
      if (j == t.size()) ok = false;
      else { ++j; ++len; }
    }
    if (ok) best = std::max(best, len);
  }
  return best;
}

// Per-class F1 straight from a confusion matrix.
double confusion_macro_f1(const std::vector<std::string>& pred, const std::vector<std::string>& gold,
                          const std::vector<std::string>& labels) {
  std::map<std::pair<std::string, std::string>, int> m;
  for (std::size_t i = 0; i < pred.size(); ++i) ++m[{gold[i], pred[i]}];
  double sum = 0;
  for (const auto& c : labels) {
    int tp = m[{c, c}];
    int fp = 0;
    int fn = 0;
    for (const auto& o : labels) {
      if (o == c) continue;
      fp += m[{o, c}];
      fn += m[{c, o}];
    }
    sum += tp == 0 ? 0.0 : 2.0 * tp / (2.0 * tp + fp + fn);
  }
  return sum / static_cast<double>(labels.size());
}

}  // namespace

TEST(Bleu, HandWorkedBrevityCase) {
  // Precisions 4/4, 3/3, 2/2, 1/1; BP = exp(1 - 5/4).
  const double expected = 100.0 * std::exp(-0.25);
  EXPECT_NEAR(corpus_bleu({"a b c d"}, {"a b c d e"}), expected, 1e-9);
  EXPECT_NEAR(corpus_bleu({"a b c d"}, {"a b c d e"}), 77.88, 0.01);
}

TEST(Bleu, ClippedUnigramsWithoutHigherOrderMatchesScoreZero) {
  EXPECT_EQ(corpus_bleu({"the the the the"}, {"the cat"}), 0.0);
}

TEST(Bleu, IdenticalCorporaScoreExactlyHundred) {
  const std::vector<std::string> c = {"a b c d e", "x y z w v u", "m n o p"};
  EXPECT_EQ(corpus_bleu(c, c), 100.0);
}

TEST(Bleu, HandComputedMultiSegment) {
  // hyp1 "a b c d" vs "a b c d": 4/4,3/3,2/2,1/1.
  // hyp2 "a x c d" vs "a b c d": 3/4,1/3,0/2,0/1.
  const double p1 = 7.0 / 8, p2 = 4.0 / 6, p3 = 2.0 / 4, p4 = 1.0 / 2;
  const double expected = 100.0 * std::exp((std::log(p1) + std::log(p2) + std::log(p3) + std::log(p4)) / 4);
  EXPECT_NEAR(corpus_bleu({"a b c d", "a x c d"}, {"a b c d", "a b c d"}), expected, 1e-9);
}

TEST(Bleu, PermutationInvariant) {
  std::vector<std::string> hyp = {"a b c d e f", "x y z q", "the cat sat on the mat", "p q r s t"};
  std::vector<std::string> ref = {"a b c d f e", "x y z w", "the cat sat on a mat", "p q r s t u"};
  const double base = corpus_bleu(hyp, ref);
  std::reverse(hyp.begin(), hyp.end());
  std::reverse(ref.begin(), ref.end());
  EXPECT_DOUBLE_EQ(corpus_bleu(hyp, ref), base);
}

TEST(Bleu, Errors) {
  EXPECT_THROW(corpus_bleu({}, {}), DataError);
  EXPECT_THROW(corpus_bleu({"a"}, {"a", "b"}), DataError);
}

TEST(RougeL, WorkedExamples) {
  const auto r = rouge_l("a b c", "a x c");
  EXPECT_NEAR(r.precision, 2.0 / 3, 1e-12);
  EXPECT_NEAR(r.recall, 2.0 / 3, 1e-12);
  EXPECT_NEAR(r.f1, 2.0 / 3, 1e-12);
  const auto same = rouge_l("x y", "x y");
  EXPECT_EQ(same.f1, 1.0);
  const auto disjoint = rouge_l("a b", "c d");
  EXPECT_EQ(disjoint.f1, 0.0);
  const auto empty = rouge_l("", "a");
  EXPECT_TRUE(empty.empty_input);
  EXPECT_EQ(empty.f1, 0.0);
}

TEST(RougeL, LcsMatchesBruteForce) {
  Rng rng(3);
  const char* alphabet[] = {"a", "b", "c", "d"};
  for (int k = 0; k < 300; ++k) {
    std::vector<std::string> a(rng.below(11));
    std::vector<std::string> b(rng.below(11));
    for (auto& t : a) t = alphabet[rng.below(4)];
    for (auto& t : b) t = alphabet[rng.below(4)];
    ASSERT_EQ(lcs_length(a, b), brute_force_lcs(a, b));
  }
}

TEST(RougeL, SwappingSidesSwapsPrecisionAndRecall) {
  const auto ab = rouge_l("a b c d e", "a c e");
  const auto ba = rouge_l("a c e", "a b c d e");
  EXPECT_DOUBLE_EQ(ab.precision, ba.recall);
  EXPECT_DOUBLE_EQ(ab.recall, ba.precision);
  EXPECT_DOUBLE_EQ(ab.f1, ba.f1);
}

TEST(MacroF1, ConfusionMatrixOracle) {
  EXPECT_DOUBLE_EQ(macro_f1({"A", "B", "A", "B"}, {"A", "A", "B", "B"}, {"A", "B"}), 0.5);
  EXPECT_DOUBLE_EQ(macro_f1({"A", "A", "A", "A"}, {"A", "A", "B", "B"}, {"A", "B"}), 1.0 / 3);
  EXPECT_DOUBLE_EQ(macro_f1({"x", "y", "z"}, {"x", "y", "z"}, {"x", "y", "z"}), 1.0);
  Rng rng(8);
  const std::vector<std::string> labels = {"e", "c", "n"};
  for (int k = 0; k < 100; ++k) {
    std::vector<std::string> p(1 + rng.below(30));
    std::vector<std::string> g(p.size());
    for (auto& x : p) x = labels[rng.below(3)];
    for (auto& x : g) x = labels[rng.below(3)];
    EXPECT_NEAR(macro_f1(p, g, labels), confusion_macro_f1(p, g, labels), 1e-12);
  }
}

TEST(MacroF1, AbsentClassesAndRenaming) {
  EXPECT_DOUBLE_EQ(macro_f1({"A", "B"}, {"A", "B"}, {"A", "B", "C"}), 2.0 / 3);
  EXPECT_DOUBLE_EQ(macro_f1({"A", "B"}, {"A", "B"}, {"A", "B", "C"}, true), 1.0);
  EXPECT_THROW(macro_f1({"A", "Q"}, {"A", "B"}, {"A", "B"}), DataError);
  EXPECT_DOUBLE_EQ(macro_f1({"A", "B", "B", "A"}, {"A", "A", "B", "B"}, {"A", "B"}),
                   macro_f1({"y", "x", "x", "y"}, {"y", "y", "x", "x"}, {"y", "x"}));
}

TEST(Accuracy, WorkedExamples) {
  EXPECT_EQ(accuracy({"a", "b"}, {"a", "b"}), 1.0);
  EXPECT_EQ(accuracy({"a", "b"}, {"b", "a"}), 0.0);
  EXPECT_EQ(accuracy({"a", "b", "c", "d"}, {"a", "b", "c", "x"}), 0.75);
  EXPECT_THROW(accuracy({"a"}, {}), DataError);
  EXPECT_THROW(accuracy({}, {}), DataError);
}

TEST(Multidomain, PerDomainAndAggregate) {
  const std::vector<DomainSegment> perfect = {
      {"a b c d", "a b c d", "news"}, {"e f g h", "e f g h", "law"}};
  const auto r = eval_multidomain(perfect);
  ASSERT_EQ(r.size(), 3u);
  EXPECT_EQ(r[0].domain, "law");
  EXPECT_EQ(r[1].domain, "news");
  EXPECT_EQ(r[2].domain, "all");
  for (const auto& x : r) EXPECT_EQ(x.value, 100.0);

  const std::vector<DomainSegment> mixed = {
      {"a b c d", "a b c d", "medical"}, {"p q r s", "w x y z", "religion"}};
  const auto m = eval_multidomain(mixed);
  EXPECT_EQ(m[0].value, 100.0);
  EXPECT_EQ(m[1].value, 0.0);
  EXPECT_GT(m[2].value, 0.0);
  EXPECT_LT(m[2].value, 100.0);
  EXPECT_DOUBLE_EQ(m[2].value, corpus_bleu({"a b c d", "p q r s"}, {"a b c d", "w x y z"}));
  EXPECT_EQ(m[2].support, 2u);

  const auto single = eval_multidomain({{"a b c d e", "a b c d", "news"}});
  EXPECT_DOUBLE_EQ(single[0].value, single[1].value);
}

TEST(Reports, JsonRoundTripAndTable) {
  const std::vector<MetricReport> reports = {{"mtet", "medical", Metric::bleu, 45.61, 100},
                                             {"vimednli", "all", Metric::accuracy, 0.8165, 1422},
                                             {"vimednli", "all", Metric::macro_f1, 0.5, 1422}};
  const auto back = reports_from_json(reports_to_json(reports));
  ASSERT_EQ(back.size(), 3u);
  EXPECT_EQ(back[0].dataset, "mtet");
  EXPECT_EQ(back[1].metric, Metric::accuracy);
  EXPECT_EQ(back[2].support, 1422u);
  const std::string table = format_table(reports);
  EXPECT_NE(table.find("45.61"), std::string::npos);
  EXPECT_NE(table.find("0.8165"), std::string::npos);
  EXPECT_EQ(format_number(1.0), "1.0");
  EXPECT_EQ(format_number(0.75), "0.75");
  EXPECT_EQ(format_number(100.0), "100.0");
}
