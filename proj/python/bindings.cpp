#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <iostream>
#include <sstream>

#include "vimed/cli.hpp"
#include "vimed/corpus_filter.hpp"
#include "vimed/error.hpp"
#include "vimed/mednli.hpp"
#include "vimed/metrics.hpp"
#include "vimed/pubmed_ingest.hpp"
#include "vimed/random.hpp"
#include "vimed/span_corruption.hpp"
#include "vimed/text.hpp"

namespace py = pybind11;
using namespace vimed;

namespace {

py::dict abstract_dict(const Abstract& a) {
  py::dict d;
  d["pmid"] = a.pmid;
  d["title"] = a.title;
  d["body"] = a.body;
  d["token_count"] = a.token_count;
  d["source_file"] = a.source_file;
  return d;
}

py::dict stats_dict(const IngestStats& s) {
  py::dict d;
  d["records_seen"] = s.records_seen;
  d["records_emitted"] = s.records_emitted;
  d["records_skipped_no_abstract"] = s.records_skipped_no_abstract;
  d["records_malformed"] = s.records_malformed;
  d["records_duplicate_pmid"] = s.records_duplicate_pmid;
  return d;
}

py::tuple ingest(ByteStream& stream, const std::string& source) {
  ParseOptions options;
  options.source_file = source;
  auto [records, stats] = parse_medline(stream, options);
  py::list out;
  for (const auto& a : records) out.append(abstract_dict(a));
  return py::make_tuple(out, stats_dict(stats));
}

}  // namespace

PYBIND11_MODULE(_vimed, m) {
  m.doc() = "Vietnamese biomedical corpus and benchmark pipeline";

  auto base = py::register_exception<Error>(m, "VimedError", PyExc_RuntimeError);
  py::register_exception<UsageError>(m, "UsageError", base.ptr());
  auto data = py::register_exception<DataError>(m, "DataError", base.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());
  py::register_exception<ParseError>(m, "ParseError", data.ptr());

  m.def("tokenize", [](const std::string& s) { return text::tokenize(s); });
  m.def("count_tokens", [](const std::string& s) { return text::count_tokens(s); });
  m.def("derive_seed", [](std::uint64_t parent, const std::string& name) {
    return derive_seed(parent, name);
  });

  m.def("parse_medline_string", [](std::string xml, const std::string& source) {
    MemoryStream stream(std::move(xml));
    return ingest(stream, source);
  }, py::arg("xml"), py::arg("source_file") = "<string>",
     "Parse MEDLINE XML text; returns (abstracts, stats).");
  m.def("parse_medline_file", [](const std::filesystem::path& path) {
    auto stream = open_source(path);
    return ingest(*stream, path.filename().string());
  }, "Parse a .xml or .xml.gz file; returns (abstracts, stats).");

  m.def("filter_by_length", [](const std::vector<std::size_t>& token_counts, std::size_t max_tokens) {
    std::vector<Abstract> in;
    for (std::size_t i = 0; i < token_counts.size(); ++i) {
      Abstract a;
      a.pmid = std::to_string(i);
      a.token_count = token_counts[i];
      in.push_back(std::move(a));
    }
    FilterConfig cfg;
    cfg.max_tokens = max_tokens;
    std::vector<std::size_t> kept;
    for (const auto& a : filter_by_length(in, cfg).first) kept.push_back(std::stoul(a.pmid));
    return kept;
  }, py::arg("token_counts"), py::arg("max_tokens") = 512,
     "Indices of the token counts that survive the length filter.");

  m.def("corrupt", [](const std::vector<std::string>& tokens, double rate, double mean_span,
                      std::uint64_t seed) {
    CorruptionConfig cfg;
    cfg.corruption_rate = rate;
    cfg.mean_span_length = mean_span;
    cfg.seed = seed;
    const auto ex = corrupt(tokens, cfg);
    return py::make_tuple(ex.input_tokens, ex.target_tokens);
  }, py::arg("tokens"), py::arg("rate") = 0.15, py::arg("mean_span") = 3.0, py::arg("seed") = 0,
     "Returns (input_tokens, target_tokens).");
  m.def("reconstruct", [](const std::vector<std::string>& input, const std::vector<std::string>& target) {
    return reconstruct(input, target);
  });
  m.def("masked_token_count", &masked_token_count);

  m.def("corpus_bleu", [](const std::vector<std::string>& hyp, const std::vector<std::string>& ref) {
    return metrics::corpus_bleu(hyp, ref);
  });
  m.def("rouge_l", [](const std::string& hyp, const std::string& ref) {
    const auto r = metrics::rouge_l(hyp, ref);
    return py::make_tuple(r.precision, r.recall, r.f1);
  }, "Returns (precision, recall, f1).");
  m.def("macro_f1", &metrics::macro_f1, py::arg("predictions"), py::arg("gold"),
        py::arg("labels"), py::arg("exclude_absent") = false);
  m.def("accuracy", &metrics::accuracy);

  m.def("apply_abbrev_rules", [](const std::string& sentence, const std::filesystem::path& lexicon) {
    const auto r = nli::apply_abbrev_rules(sentence, nli::load_abbrev_lexicon(lexicon));
    return py::make_tuple(r.sentence, r.applied_rules);
  }, "Returns (sentence, applied_rule_ids).");

  m.def("run_cli", [](const std::vector<std::string>& args) {
    std::ostringstream out;
    std::ostringstream err;
    int code = 0;
    {
      py::gil_scoped_release release;
      std::streambuf* saved = std::cout.rdbuf(out.rdbuf());
      try {
        code = cli::run(args, err);
      } catch (...) {
        std::cout.rdbuf(saved);
        throw;
      }
      std::cout.rdbuf(saved);
    }
    return py::make_tuple(code, out.str(), err.str());
  }, "Run a CLI command in-process; returns (exit_code, stdout, stderr).");
}
