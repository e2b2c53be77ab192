#pragma once

// Evaluation metrics. All of them tokenize with text::tokenize (NFC, then
// Unicode whitespace).

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace vimed::metrics {

enum class Metric { bleu, rouge_l, macro_f1, accuracy };

std::string_view to_string(Metric m);
Metric metric_from_string(std::string_view s);  // throws UsageError

struct MetricReport {
  std::string dataset;
  std::string domain;
  Metric metric = Metric::bleu;
  double value = 0.0;
  std::size_t support = 0;
};

// Corpus BLEU in [0, 100]: clipped n-gram counts aggregated over the corpus,
// geometric mean of the n = 1..max_n precisions, times the brevity penalty.
// No smoothing: any zero precision gives 0. Throws DataError on length
// mismatch or an empty corpus.
double corpus_bleu(const std::vector<std::string>& hypotheses,
                   const std::vector<std::string>& references, int max_n = 4);

struct RougeL {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  bool empty_input = false;  // one side had no tokens; scores are zero
};

std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b);

RougeL rouge_l(std::string_view hypothesis, std::string_view reference);

// Mean of rouge_l F1 over aligned pairs.
double mean_rouge_l_f1(const std::vector<std::string>& hypotheses,
                       const std::vector<std::string>& references);

// Unweighted mean of per-class F1 over label_set. A class with no gold and
// no predicted instance scores 0 unless exclude_absent is set.
double macro_f1(const std::vector<std::string>& predictions,
                const std::vector<std::string>& golds, const std::vector<std::string>& label_set,
                bool exclude_absent = false);

double accuracy(const std::vector<std::string>& predictions,
                const std::vector<std::string>& golds);

struct DomainSegment {
  std::string hypothesis;
  std::string reference;
  std::string domain;
};

// One BLEU report per distinct domain (sorted by name) followed by "all".
std::vector<MetricReport> eval_multidomain(const std::vector<DomainSegment>& segments,
                                           const std::string& dataset = "test");

std::string reports_to_json(const std::vector<MetricReport>& reports);
std::vector<MetricReport> reports_from_json(std::string_view json);

// Rows are (dataset, domain), columns are metrics, BLEU on a 0-100 scale
// with two decimals, the others with four.
std::string format_table(const std::vector<MetricReport>& reports);

// Shortest round-trip decimal, always with a fractional part ("1.0").
std::string format_number(double v);

}  // namespace vimed::metrics
