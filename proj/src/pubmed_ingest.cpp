#include "vimed/pubmed_ingest.hpp"

#include <expat.h>
#include <zlib.h>

#include <algorithm>
#include <array>
#include <climits>
#include <cstring>
#include <exception>
#include <fstream>
#include <nlohmann/json.hpp>

#include "vimed/error.hpp"
#include "vimed/text.hpp"

namespace vimed {

using ordered_json = nlohmann::ordered_json;

std::string to_json_line(const Abstract& a) {
  ordered_json j;
  j["pmid"] = a.pmid;
  j["title"] = a.title;
  j["body"] = a.body;
  j["token_count"] = a.token_count;
  j["source_file"] = a.source_file;
  return j.dump();
}

Abstract abstract_from_json(std::string_view line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(std::string("invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw DataError("abstract record is not a JSON object");
  Abstract a;
  try {
    a.pmid = j.at("pmid").get<std::string>();
    a.title = j.value("title", std::string());
    a.body = j.at("body").get<std::string>();
    a.token_count = j.at("token_count").get<std::size_t>();
    a.source_file = j.value("source_file", std::string());
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("abstract record schema: ") + e.what());
  }
  if (a.pmid.empty()) throw DataError("abstract record has empty pmid");
  if (a.body.empty()) throw DataError("abstract " + a.pmid + " has empty body");
  const std::size_t expected = text::count_tokens(a.body);
  if (expected != a.token_count) {
    throw DataError("abstract " + a.pmid + ": token_count " +
                    std::to_string(a.token_count) + " but body has " +
                    std::to_string(expected) + " tokens");
  }
  return a;
}

IngestStats& IngestStats::operator+=(const IngestStats& other) {
  records_seen += other.records_seen;
  records_emitted += other.records_emitted;
  records_skipped_no_abstract += other.records_skipped_no_abstract;
  records_malformed += other.records_malformed;
  records_duplicate_pmid += other.records_duplicate_pmid;
  return *this;
}

std::string IngestStats::to_json() const {
  ordered_json j;
  j["records_seen"] = records_seen;
  j["records_emitted"] = records_emitted;
  j["records_skipped_no_abstract"] = records_skipped_no_abstract;
  j["records_malformed"] = records_malformed;
  j["records_duplicate_pmid"] = records_duplicate_pmid;
  return j.dump(2);
}

std::size_t MemoryStream::read(std::span<char> buffer) {
  const std::size_t n = std::min(buffer.size(), bytes_.size() - pos_);
  std::memcpy(buffer.data(), bytes_.data() + pos_, n);
  pos_ += n;
  return n;
}

namespace {

class FileStream final : public ByteStream {
 public:
  explicit FileStream(const std::filesystem::path& path)
      : in_(path, std::ios::binary), path_(path) {
    if (!in_) throw IoError("cannot open " + path.string());
  }

  std::size_t read(std::span<char> buffer) override {
    in_.read(buffer.data(), static_cast<std::streamsize>(buffer.size()));
    if (in_.bad()) throw IoError("read error on " + path_.string());
    return static_cast<std::size_t>(in_.gcount());
  }

 private:
  std::ifstream in_;
  std::filesystem::path path_;
};

class GzipStream final : public ByteStream {
 public:
  explicit GzipStream(const std::filesystem::path& path) : path_(path) {
    file_ = gzopen(path.c_str(), "rb");
    if (file_ == nullptr) throw IoError("cannot open " + path.string());
  }
  ~GzipStream() override {
    if (file_ != nullptr) gzclose(file_);
  }
  GzipStream(const GzipStream&) = delete;
  GzipStream& operator=(const GzipStream&) = delete;

  std::size_t read(std::span<char> buffer) override {
    const auto want = static_cast<unsigned>(std::min<std::size_t>(buffer.size(), INT_MAX));
    const int n = gzread(file_, buffer.data(), want);
    int errnum = Z_OK;
    const char* message = gzerror(file_, &errnum);
    if (n < 0 || (errnum != Z_OK && errnum != Z_STREAM_END)) {
      throw IoError("gzip decompression failed for " + path_.string() + ": " +
                    (message != nullptr ? message : "unknown error"));
    }
    return static_cast<std::size_t>(n);
  }

 private:
  gzFile file_ = nullptr;
  std::filesystem::path path_;
};

bool has_gzip_magic(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::array<unsigned char, 2> magic{};
  in.read(reinterpret_cast<char*>(magic.data()), 2);
  return in.gcount() == 2 && magic[0] == 0x1f && magic[1] == 0x8b;
}

// Element paths, relative to <MedlineCitation>, whose text is captured.
enum class Capture { none, pmid, title, abstract_text };

class MedlineHandler {
 public:
  MedlineHandler(const AbstractSink& sink, const ParseOptions& options)
      : sink_(sink), options_(options) {}

  void start(std::string_view name) {
    path_.emplace_back(name);
    if (name == "MedlineCitation" && citation_depth_ == 0) {
      citation_depth_ = path_.size();
      reset_record();
      return;
    }
    if (citation_depth_ == 0 || capture_ != Capture::none) return;
    const std::size_t rel = path_.size() - citation_depth_;
    if (rel == 1 && name == "PMID") {
      begin_capture(Capture::pmid);
    } else if (rel == 2 && name == "ArticleTitle" && parent_is("Article", 1)) {
      begin_capture(Capture::title);
    } else if (rel == 3 && name == "AbstractText" && parent_is("Abstract", 1) &&
               parent_is("Article", 2)) {
      begin_capture(Capture::abstract_text);
    }
  }

  void end() {
    if (capture_ != Capture::none && path_.size() == capture_depth_) {
      finish_capture();
    }
    if (citation_depth_ != 0 && path_.size() == citation_depth_) {
      finish_record();
      citation_depth_ = 0;
    }
    path_.pop_back();
  }

  void characters(std::string_view data) {
    if (capture_ != Capture::none) buffer_.append(data);
  }

  const IngestStats& stats() const { return stats_; }

 private:
  bool parent_is(std::string_view name, std::size_t up) const {
    return path_.size() > up && path_[path_.size() - 1 - up] == name;
  }

  void begin_capture(Capture what) {
    capture_ = what;
    capture_depth_ = path_.size();
    buffer_.clear();
  }

  void finish_capture() {
    const std::string_view value = text::trim(buffer_);
    switch (capture_) {
      case Capture::pmid:
        pmid_ = value;
        break;
      case Capture::title:
        title_ = value;
        break;
      case Capture::abstract_text:
        if (!value.empty()) {
          if (!body_.empty()) body_.push_back(' ');
          body_.append(value);
        }
        break;
      case Capture::none:
        break;
    }
    capture_ = Capture::none;
    buffer_.clear();
  }

  void reset_record() {
    pmid_.clear();
    title_.clear();
    body_.clear();
  }

  void finish_record() {
    ++stats_.records_seen;
    if (pmid_.empty()) {
      ++stats_.records_malformed;
      return;
    }
    if (body_.empty()) {
      ++stats_.records_skipped_no_abstract;
      return;
    }
    if (options_.registry != nullptr && !options_.registry->insert(pmid_)) {
      ++stats_.records_malformed;
      ++stats_.records_duplicate_pmid;
      return;
    }
    Abstract a;
    a.pmid = std::move(pmid_);
    a.title = std::move(title_);
    a.body = std::move(body_);
    a.token_count = text::count_tokens(a.body);
    a.source_file = options_.source_file;
    ++stats_.records_emitted;
    sink_(std::move(a));
  }

  const AbstractSink& sink_;
  const ParseOptions& options_;
  std::vector<std::string> path_;
  std::size_t citation_depth_ = 0;
  Capture capture_ = Capture::none;
  std::size_t capture_depth_ = 0;
  std::string buffer_;
  std::string pmid_;
  std::string title_;
  std::string body_;
  IngestStats stats_;
};

struct ParserContext {
  MedlineHandler handler;
  XML_Parser parser;
  std::exception_ptr error;
};

void abort_with(ParserContext* ctx) {
  ctx->error = std::current_exception();
  XML_StopParser(ctx->parser, XML_FALSE);
}

void XMLCALL on_start(void* user, const XML_Char* name, const XML_Char**) {
  auto* ctx = static_cast<ParserContext*>(user);
  try {
    ctx->handler.start(name);
  } catch (...) {
    abort_with(ctx);
  }
}

void XMLCALL on_end(void* user, const XML_Char*) {
  auto* ctx = static_cast<ParserContext*>(user);
  try {
    ctx->handler.end();
  } catch (...) {
    abort_with(ctx);
  }
}

void XMLCALL on_chars(void* user, const XML_Char* s, int len) {
  auto* ctx = static_cast<ParserContext*>(user);
  try {
    ctx->handler.characters(std::string_view(s, static_cast<std::size_t>(len)));
  } catch (...) {
    abort_with(ctx);
  }
}

struct ParserDeleter {
  void operator()(XML_ParserStruct* p) const { XML_ParserFree(p); }
};

}  // namespace

std::unique_ptr<ByteStream> open_source(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw IoError("no such file: " + path.string());
  }
  if (has_gzip_magic(path)) return std::make_unique<GzipStream>(path);
  return std::make_unique<FileStream>(path);
}

IngestStats parse_medline_stream(ByteStream& stream, const AbstractSink& sink,
                                 const ParseOptions& options) {
  std::unique_ptr<XML_ParserStruct, ParserDeleter> parser(XML_ParserCreate("UTF-8"));
  if (!parser) throw Error("cannot allocate XML parser");
  ParserContext ctx{MedlineHandler(sink, options), parser.get(), nullptr};
  XML_SetUserData(parser.get(), &ctx);
  XML_SetElementHandler(parser.get(), on_start, on_end);
  XML_SetCharacterDataHandler(parser.get(), on_chars);

  std::vector<char> buffer(std::max<std::size_t>(options.chunk_size, 1));
  bool done = false;
  while (!done) {
    const std::size_t n = stream.read(buffer);
    done = n == 0;
    const auto status = XML_Parse(parser.get(), buffer.data(), static_cast<int>(n),
                                  done ? XML_TRUE : XML_FALSE);
    if (ctx.error) std::rethrow_exception(ctx.error);
    if (status == XML_STATUS_ERROR) {
      std::string what = XML_ErrorString(XML_GetErrorCode(parser.get()));
      if (!options.source_file.empty()) what = options.source_file + ": " + what;
      throw ParseError("malformed XML: " + what,
                       XML_GetCurrentLineNumber(parser.get()),
                       XML_GetCurrentColumnNumber(parser.get()),
                       static_cast<std::uint64_t>(XML_GetCurrentByteIndex(parser.get())));
    }
  }
  return ctx.handler.stats();
}

std::pair<std::vector<Abstract>, IngestStats> parse_medline(
    ByteStream& stream, const ParseOptions& options) {
  std::vector<Abstract> out;
  IngestStats stats = parse_medline_stream(
      stream, [&](Abstract&& a) { out.push_back(std::move(a)); }, options);
  return {std::move(out), stats};
}

}  // namespace vimed
