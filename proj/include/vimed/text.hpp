#pragma once

// Pipeline-wide text rules. Every module that counts, splits or compares
// tokens goes through these functions so the rule can be swapped in one place.

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace vimed::text {

struct Span {
  std::size_t begin = 0;  // byte offsets into the source string
  std::size_t end = 0;
};

bool is_valid_utf8(std::string_view s);

// Throws DataError on ill-formed UTF-8.
void require_utf8(std::string_view s, std::string_view what);

// Unicode NFC. Throws DataError on ill-formed UTF-8.
std::string nfc(std::string_view s);

// Byte spans of maximal runs of non-White_Space code points. No normalization
// is applied, so the spans index the input as given.
std::vector<Span> whitespace_spans(std::string_view s);

// NFC, then split on Unicode White_Space.
std::vector<std::string> tokenize(std::string_view s);

// Number of tokens produced by tokenize().
std::size_t count_tokens(std::string_view s);

// NFC, runs of whitespace collapsed to one ASCII space, ends trimmed.
std::string canonical(std::string_view s);

// Strips leading and trailing Unicode White_Space.
std::string_view trim(std::string_view s);

std::string join(const std::vector<std::string>& parts, std::string_view sep);

// Number of code points; input must be valid UTF-8.
std::size_t code_point_count(std::string_view s);

}  // namespace vimed::text
