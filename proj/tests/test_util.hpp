#pragma once

#include <cstdint>
#include <filesystem>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "vimed/pubmed_ingest.hpp"

namespace vimed::testing {

namespace fs = std::filesystem;

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(std::string_view name) const { return path_ / name; }

 private:
  fs::path path_;
};

void write_text(const fs::path& path, std::string_view content);
std::string read_text(const fs::path& path);
void write_gzip(const fs::path& path, std::string_view content);

// Abstract with token_count filled in.
Abstract make_abstract(std::string pmid, std::string body, std::string title = "T");

// n distinct-ish whitespace tokens "w<seed>_<i>".
std::string words(std::size_t n, std::uint64_t seed = 0);

std::string xml_escape(std::string_view s);

// One <PubmedArticle>. An empty segment list omits the Abstract element;
// an empty pmid omits the PMID element.
std::string medline_citation(const std::string& pmid, const std::string& title,
                             const std::vector<std::string>& segments);
std::string medline_document(const std::vector<std::string>& citations);

// Deterministic synthetic baseline file: n citations, roughly 2% without an
// abstract, 1% repeated bodies, 1% longer than 512 tokens.
std::string synthetic_medline(std::size_t n, std::uint64_t seed);

// English->Vietnamese single-token lexicon used by the mock backend in tests.
std::string mock_lexicon_tsv();

// MedNLI-shaped JSON-lines: counts per split, labels cycling through the
// three classes, sentences mentioning PMH / QRS / post op.
std::string mednli_fixture(const std::string& split, std::size_t count,
                           std::size_t uid_offset = 0);

struct CliResult {
  int code = 0;
  std::string out;
  std::string err;
};

// Runs the CLI in-process, capturing std::cout and the error stream.
CliResult run_cli(const std::vector<std::string>& args);

// Directory with the shipped data files.
fs::path data_dir();

// Peak resident set size of this process in KiB.
long peak_rss_kib();

}  // namespace vimed::testing
