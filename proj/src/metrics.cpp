#include "vimed/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>
#include <unordered_map>

#include "vimed/error.hpp"
#include "vimed/text.hpp"

namespace vimed::metrics {

std::string_view to_string(Metric m) {
  switch (m) {
    case Metric::bleu: return "bleu";
    case Metric::rouge_l: return "rouge_l";
    case Metric::macro_f1: return "macro_f1";
    case Metric::accuracy: return "accuracy";
  }
  return "unknown";
}

Metric metric_from_string(std::string_view s) {
  if (s == "bleu") return Metric::bleu;
  if (s == "rouge_l") return Metric::rouge_l;
  if (s == "macro_f1") return Metric::macro_f1;
  if (s == "accuracy") return Metric::accuracy;
  throw UsageError("unknown metric '" + std::string(s) + "'");
}

namespace {

using NgramCounts = std::map<std::vector<std::string_view>, std::size_t>;

NgramCounts count_ngrams(const std::vector<std::string>& tokens, std::size_t n) {
  NgramCounts counts;
  if (tokens.size() < n) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    std::vector<std::string_view> gram(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                                       tokens.begin() + static_cast<std::ptrdiff_t>(i + n));
    ++counts[gram];
  }
  return counts;
}

void require_same_length(std::size_t a, std::size_t b, std::string_view what) {
  if (a != b) {
    throw DataError(std::string(what) + ": " + std::to_string(a) + " predictions vs " +
                    std::to_string(b) + " references");
  }
  if (a == 0) throw DataError(std::string(what) + ": empty input");
}

}  // namespace

double corpus_bleu(const std::vector<std::string>& hypotheses,
                   const std::vector<std::string>& references, int max_n) {
  require_same_length(hypotheses.size(), references.size(), "corpus_bleu");
  if (max_n < 1) throw UsageError("max_n must be >= 1");
  const auto orders = static_cast<std::size_t>(max_n);
  std::vector<std::size_t> matches(orders, 0);
  std::vector<std::size_t> totals(orders, 0);
  std::size_t hyp_length = 0;
  std::size_t ref_length = 0;

  for (std::size_t s = 0; s < hypotheses.size(); ++s) {
    const auto hyp = text::tokenize(hypotheses[s]);
    const auto ref = text::tokenize(references[s]);
    hyp_length += hyp.size();
    ref_length += ref.size();
    for (std::size_t n = 1; n <= orders; ++n) {
      const NgramCounts hyp_counts = count_ngrams(hyp, n);
      const NgramCounts ref_counts = count_ngrams(ref, n);
      for (const auto& [gram, count] : hyp_counts) {
        const auto it = ref_counts.find(gram);
        if (it != ref_counts.end()) matches[n - 1] += std::min(count, it->second);
        totals[n - 1] += count;
      }
    }
  }

  double log_precision = 0.0;
  for (std::size_t n = 0; n < orders; ++n) {
    if (matches[n] == 0 || totals[n] == 0) return 0.0;
    log_precision += std::log(static_cast<double>(matches[n]) / static_cast<double>(totals[n]));
  }
  log_precision /= static_cast<double>(orders);
  const double brevity =
      hyp_length >= ref_length
          ? 1.0
          : std::exp(1.0 - static_cast<double>(ref_length) / static_cast<double>(hyp_length));
  return 100.0 * brevity * std::exp(log_precision);
}

std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::size_t> row(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    std::size_t diagonal = 0;  // row[j-1] from the previous i
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t above = row[j];
      row[j] = a[i - 1] == b[j - 1] ? diagonal + 1 : std::max(row[j], row[j - 1]);
      diagonal = above;
    }
  }
  return row[b.size()];
}

RougeL rouge_l(std::string_view hypothesis, std::string_view reference) {
  const auto hyp = text::tokenize(hypothesis);
  const auto ref = text::tokenize(reference);
  RougeL r;
  if (hyp.empty() || ref.empty()) {
    r.empty_input = true;
    return r;
  }
  const auto lcs = static_cast<double>(lcs_length(hyp, ref));
  r.precision = lcs / static_cast<double>(hyp.size());
  r.recall = lcs / static_cast<double>(ref.size());
  if (r.precision + r.recall > 0.0) {
    r.f1 = 2.0 * r.precision * r.recall / (r.precision + r.recall);
  }
  return r;
}

double mean_rouge_l_f1(const std::vector<std::string>& hypotheses,
                       const std::vector<std::string>& references) {
  require_same_length(hypotheses.size(), references.size(), "rouge_l");
  double sum = 0.0;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    sum += rouge_l(hypotheses[i], references[i]).f1;
  }
  return sum / static_cast<double>(hypotheses.size());
}

double macro_f1(const std::vector<std::string>& predictions,
                const std::vector<std::string>& golds, const std::vector<std::string>& label_set,
                bool exclude_absent) {
  require_same_length(predictions.size(), golds.size(), "macro_f1");
  if (label_set.empty()) throw UsageError("macro_f1 needs a non-empty label set");
  std::unordered_map<std::string, std::size_t> index;
  for (const auto& label : label_set) {
    if (!index.emplace(label, index.size()).second) {
      throw UsageError("duplicate label '" + label + "' in label set");
    }
  }
  auto lookup = [&](const std::string& label) {
    const auto it = index.find(label);
    if (it == index.end()) throw DataError("unknown label '" + label + "'");
    return it->second;
  };
  std::vector<std::size_t> tp(label_set.size(), 0);
  std::vector<std::size_t> fp(label_set.size(), 0);
  std::vector<std::size_t> fn(label_set.size(), 0);
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const std::size_t p = lookup(predictions[i]);
    const std::size_t g = lookup(golds[i]);
    if (p == g) {
      ++tp[p];
    } else {
      ++fp[p];
      ++fn[g];
    }
  }
  double sum = 0.0;
  std::size_t classes = 0;
  for (std::size_t c = 0; c < label_set.size(); ++c) {
    const std::size_t denominator = 2 * tp[c] + fp[c] + fn[c];
    if (denominator == 0) {
      if (exclude_absent) continue;
      ++classes;
      continue;
    }
    sum += 2.0 * static_cast<double>(tp[c]) / static_cast<double>(denominator);
    ++classes;
  }
  return classes == 0 ? 0.0 : sum / static_cast<double>(classes);
}

double accuracy(const std::vector<std::string>& predictions,
                const std::vector<std::string>& golds) {
  require_same_length(predictions.size(), golds.size(), "accuracy");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (predictions[i] == golds[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

std::vector<MetricReport> eval_multidomain(const std::vector<DomainSegment>& segments,
                                           const std::string& dataset) {
  if (segments.empty()) throw DataError("eval_multidomain: empty input");
  std::map<std::string, std::pair<std::vector<std::string>, std::vector<std::string>>> by_domain;
  std::vector<std::string> all_hyp;
  std::vector<std::string> all_ref;
  for (const auto& s : segments) {
    auto& [hyp, ref] = by_domain[s.domain];
    hyp.push_back(s.hypothesis);
    ref.push_back(s.reference);
    all_hyp.push_back(s.hypothesis);
    all_ref.push_back(s.reference);
  }
  std::vector<MetricReport> reports;
  for (const auto& [domain, texts] : by_domain) {
    reports.push_back({dataset, domain, Metric::bleu, corpus_bleu(texts.first, texts.second),
                       texts.first.size()});
  }
  reports.push_back({dataset, "all", Metric::bleu, corpus_bleu(all_hyp, all_ref), all_hyp.size()});
  return reports;
}

std::string reports_to_json(const std::vector<MetricReport>& reports) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& r : reports) {
    nlohmann::ordered_json j;
    j["dataset"] = r.dataset;
    j["domain"] = r.domain;
    j["metric"] = to_string(r.metric);
    j["value"] = r.value;
    j["support"] = r.support;
    arr.push_back(std::move(j));
  }
  return arr.dump(2);
}

std::vector<MetricReport> reports_from_json(std::string_view json) {
  std::vector<MetricReport> out;
  try {
    const auto arr = nlohmann::json::parse(json);
    if (!arr.is_array()) throw DataError("metric report file must hold a JSON array");
    for (const auto& j : arr) {
      MetricReport r;
      r.dataset = j.at("dataset").get<std::string>();
      r.domain = j.at("domain").get<std::string>();
      r.metric = metric_from_string(j.at("metric").get<std::string>());
      r.value = j.at("value").get<double>();
      r.support = j.at("support").get<std::size_t>();
      out.push_back(std::move(r));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("metric report: ") + e.what());
  }
  return out;
}

std::string format_number(double v) {
  char buf[64];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  std::string s(buf, end);
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

std::string format_table(const std::vector<MetricReport>& reports) {
  std::vector<std::pair<std::string, std::string>> rows;
  std::vector<Metric> columns;
  std::map<std::pair<std::pair<std::string, std::string>, Metric>, std::string> cells;
  for (const auto& r : reports) {
    const auto row = std::make_pair(r.dataset, r.domain);
    if (std::find(rows.begin(), rows.end(), row) == rows.end()) rows.push_back(row);
    if (std::find(columns.begin(), columns.end(), r.metric) == columns.end()) {
      columns.push_back(r.metric);
    }
    std::ostringstream cell;
    cell.setf(std::ios::fixed);
    cell.precision(r.metric == Metric::bleu ? 2 : 4);
    cell << r.value;
    cells[{row, r.metric}] = cell.str();
  }

  std::vector<std::string> header = {"Dataset", "Domain"};
  for (const Metric m : columns) header.emplace_back(to_string(m));
  std::vector<std::vector<std::string>> grid = {header};
  for (const auto& row : rows) {
    std::vector<std::string> line = {row.first, row.second};
    for (const Metric m : columns) {
      const auto it = cells.find({row, m});
      line.push_back(it == cells.end() ? "-" : it->second);
    }
    grid.push_back(std::move(line));
  }
  std::vector<std::size_t> widths(header.size(), 0);
  for (const auto& line : grid) {
    for (std::size_t c = 0; c < line.size(); ++c) {
      widths[c] = std::max(widths[c], text::code_point_count(line[c]));
    }
  }
  std::string out;
  for (std::size_t r = 0; r < grid.size(); ++r) {
    for (std::size_t c = 0; c < grid[r].size(); ++c) {
      const std::string& cell = grid[r][c];
      const std::size_t pad = widths[c] - text::code_point_count(cell);
      if (c >= 2) out.append(pad, ' ');  // numbers right-aligned
      out += cell;
      if (c < 2) out.append(pad, ' ');
      out += c + 1 < grid[r].size() ? " | " : "\n";
    }
    if (r == 0) {
      for (std::size_t c = 0; c < widths.size(); ++c) {
        out.append(widths[c], '-');
        out += c + 1 < widths.size() ? "-+-" : "\n";
      }
    }
  }
  return out;
}

}  // namespace vimed::metrics
