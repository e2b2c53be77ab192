#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace vimed::io {

// Calls fn(line, line_number) for each '\n'-terminated line; a final line
// without terminator is delivered too. "-" reads stdin. Line numbers are
// 1-based. A trailing '\r' is kept.
void for_each_line(const std::filesystem::path& path,
                   const std::function<void(std::string_view, std::size_t)>& fn);

// Output sink that is either stdout ("-") or a file truncated on open.
// Throws IoError if the file cannot be created.
class Output {
 public:
  explicit Output(const std::filesystem::path& path);
  Output(const Output&) = delete;
  Output& operator=(const Output&) = delete;

  std::ostream& stream() { return *out_; }

  // Flushes and reports write failures.
  void close();

 private:
  std::filesystem::path path_;
  std::unique_ptr<std::ofstream> file_;
  std::ostream* out_;
};

// Whole-file read; throws IoError.
std::string read_file(const std::filesystem::path& path);

// Writes content to path atomically (temp file + rename).
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

// TSV fields escape backslash, tab, CR and LF as \\, \t, \r, \n.
std::string escape_tsv(std::string_view field);
std::string unescape_tsv(std::string_view field);  // throws DataError
// Splits on tabs (no unescaping); a trailing '\r' is dropped first.
std::vector<std::string_view> split_tsv(std::string_view line);

// 128-bit BLAKE2b digest.
using Digest = std::array<std::uint8_t, 16>;
Digest digest(std::string_view bytes);
std::string to_hex(const Digest& d);

// Hex BLAKE2b-256 of a file's bytes, for artifact checksums.
std::string file_checksum(const std::filesystem::path& path);

struct DigestHash {
  std::size_t operator()(const Digest& d) const noexcept;
};

}  // namespace vimed::io
