#pragma once

// Streaming extraction of abstracts from PubMed/MEDLINE baseline XML.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

namespace vimed {

struct Abstract {
  std::string pmid;
  std::string title;
  std::string body;
  std::size_t token_count = 0;  // text::count_tokens(body)
  std::string source_file;

  friend bool operator==(const Abstract&, const Abstract&) = default;
};

// One JSON object, no trailing newline. Field order: pmid, title, body,
// token_count, source_file.
std::string to_json_line(const Abstract& a);

// Parses and validates one JSON-lines record. Throws DataError when a field is
// missing, the body is empty, or token_count disagrees with the body.
Abstract abstract_from_json(std::string_view line);

struct IngestStats {
  std::uint64_t records_seen = 0;
  std::uint64_t records_emitted = 0;
  std::uint64_t records_skipped_no_abstract = 0;
  std::uint64_t records_malformed = 0;
  // Subset of records_malformed: PMID already emitted earlier in the run.
  std::uint64_t records_duplicate_pmid = 0;

  IngestStats& operator+=(const IngestStats& other);
  bool reconciles() const {
    return records_seen ==
           records_emitted + records_skipped_no_abstract + records_malformed;
  }
  std::string to_json() const;
};

// Pull-style byte source. read() returns 0 at end of stream.
class ByteStream {
 public:
  virtual ~ByteStream() = default;
  virtual std::size_t read(std::span<char> buffer) = 0;
};

class MemoryStream final : public ByteStream {
 public:
  explicit MemoryStream(std::string bytes) : bytes_(std::move(bytes)) {}
  std::size_t read(std::span<char> buffer) override;

 private:
  std::string bytes_;
  std::size_t pos_ = 0;
};

// Opens a plain or gzip-compressed file; gzip is detected from the magic
// bytes, not the extension. Throws IoError for a missing file. Corrupt
// compressed data raises IoError from read().
std::unique_ptr<ByteStream> open_source(const std::filesystem::path& path);

// PMIDs emitted so far in one pipeline run, shared by all files of the run.
class PmidRegistry {
 public:
  // False if the PMID was already present.
  bool insert(const std::string& pmid) { return seen_.insert(pmid).second; }
  std::size_t size() const { return seen_.size(); }

 private:
  std::unordered_set<std::string> seen_;
};

struct ParseOptions {
  std::string source_file;
  PmidRegistry* registry = nullptr;  // optional cross-file uniqueness check
  std::size_t chunk_size = 1 << 16;
};

using AbstractSink = std::function<void(Abstract&&)>;

// Event-driven parse; sink receives records in document order. Throws
// ParseError (with line/column) on malformed XML or ill-formed UTF-8.
IngestStats parse_medline_stream(ByteStream& stream, const AbstractSink& sink,
                                 const ParseOptions& options = {});

// Convenience wrapper collecting all records.
std::pair<std::vector<Abstract>, IngestStats> parse_medline(
    ByteStream& stream, const ParseOptions& options = {});

}  // namespace vimed
