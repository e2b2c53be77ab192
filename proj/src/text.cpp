#include "vimed/text.hpp"

#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>
#include <unicode/utf8.h>

#include <cstdint>

#include "vimed/error.hpp"

namespace vimed::text {
namespace {

const icu::Normalizer2& nfc_normalizer() {
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* n = icu::Normalizer2::getNFCInstance(status);
  if (U_FAILURE(status) || n == nullptr) {
    throw Error(std::string("ICU NFC normalizer unavailable: ") +
                u_errorName(status));
  }
  return *n;
}

// Walks code points, calling fn(begin, end, code_point) for each one.
template <typename Fn>
void for_each_code_point(std::string_view s, Fn&& fn) {
  const auto* bytes = reinterpret_cast<const std::uint8_t*>(s.data());
  const auto length = static_cast<std::int32_t>(s.size());
  std::int32_t i = 0;
  while (i < length) {
    const std::int32_t start = i;
    UChar32 c = 0;
    U8_NEXT(bytes, i, length, c);
    if (c < 0) {
      throw DataError("ill-formed UTF-8 at byte " + std::to_string(start));
    }
    fn(static_cast<std::size_t>(start), static_cast<std::size_t>(i), c);
  }
}

bool is_space(UChar32 c) { return u_hasBinaryProperty(c, UCHAR_WHITE_SPACE); }

}  // namespace

bool is_valid_utf8(std::string_view s) {
  const auto* bytes = reinterpret_cast<const std::uint8_t*>(s.data());
  const auto length = static_cast<std::int32_t>(s.size());
  std::int32_t i = 0;
  while (i < length) {
    UChar32 c = 0;
    U8_NEXT(bytes, i, length, c);
    if (c < 0) return false;
  }
  return true;
}

void require_utf8(std::string_view s, std::string_view what) {
  if (!is_valid_utf8(s)) {
    throw DataError("ill-formed UTF-8 in " + std::string(what));
  }
}

std::string nfc(std::string_view s) {
  require_utf8(s, "text");
  const auto& normalizer = nfc_normalizer();
  UErrorCode status = U_ZERO_ERROR;
  const icu::UnicodeString in = icu::UnicodeString::fromUTF8(
      icu::StringPiece(s.data(), static_cast<std::int32_t>(s.size())));
  if (normalizer.isNormalized(in, status) && U_SUCCESS(status)) {
    return std::string(s);
  }
  status = U_ZERO_ERROR;
  const icu::UnicodeString out = normalizer.normalize(in, status);
  if (U_FAILURE(status)) {
    throw DataError(std::string("NFC normalization failed: ") +
                    u_errorName(status));
  }
  std::string result;
  out.toUTF8String(result);
  return result;
}

std::vector<Span> whitespace_spans(std::string_view s) {
  std::vector<Span> spans;
  bool in_token = false;
  std::size_t token_begin = 0;
  for_each_code_point(s, [&](std::size_t begin, std::size_t, UChar32 c) {
    if (is_space(c)) {
      if (in_token) spans.push_back({token_begin, begin});
      in_token = false;
    } else if (!in_token) {
      in_token = true;
      token_begin = begin;
    }
  });
  if (in_token) spans.push_back({token_begin, s.size()});
  return spans;
}

std::vector<std::string> tokenize(std::string_view s) {
  const std::string normalized = nfc(s);
  std::vector<std::string> tokens;
  for (const Span& span : whitespace_spans(normalized)) {
    tokens.emplace_back(normalized.substr(span.begin, span.end - span.begin));
  }
  return tokens;
}

std::size_t count_tokens(std::string_view s) {
  return whitespace_spans(nfc(s)).size();
}

std::string canonical(std::string_view s) { return join(tokenize(s), " "); }

std::string_view trim(std::string_view s) {
  std::size_t first = s.size();
  std::size_t last = 0;
  for_each_code_point(s, [&](std::size_t begin, std::size_t end, UChar32 c) {
    if (is_space(c)) return;
    if (first == s.size()) first = begin;
    last = end;
  });
  if (first == s.size()) return {};
  return s.substr(first, last - first);
}

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i > 0) out.append(sep);
    out.append(parts[i]);
  }
  return out;
}

std::size_t code_point_count(std::string_view s) {
  std::size_t n = 0;
  for_each_code_point(s, [&](std::size_t, std::size_t, UChar32) { ++n; });
  return n;
}

}  // namespace vimed::text
