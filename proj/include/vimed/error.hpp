#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace vimed {

// Base for every error the toolkit raises on purpose. The CLI maps the
// subclasses onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad flags, bad configuration values.
class UsageError : public Error {
 public:
  using Error::Error;
};

// Input that violates a documented schema or a domain invariant.
class DataError : public Error {
 public:
  using Error::Error;
};

// Filesystem, compression, storage or network failures.
class IoError : public Error {
 public:
  using Error::Error;
};

// Malformed XML. Carries the position reported by the parser.
class ParseError : public DataError {
 public:
  ParseError(const std::string& what, std::uint64_t line, std::uint64_t column,
             std::uint64_t byte_offset)
      : DataError(what + " at line " + std::to_string(line) + ", column " +
                  std::to_string(column) + " (byte " +
                  std::to_string(byte_offset) + ")"),
        line_(line),
        column_(column),
        byte_offset_(byte_offset) {}

  std::uint64_t line() const { return line_; }
  std::uint64_t column() const { return column_; }
  std::uint64_t byte_offset() const { return byte_offset_; }

 private:
  std::uint64_t line_;
  std::uint64_t column_;
  std::uint64_t byte_offset_;
};

}  // namespace vimed
