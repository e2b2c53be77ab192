#pragma once

// Persistent refinement task queue for human post-editing of machine
// translated NLI sentences, plus its HTTP JSON API.
//
// Storage is one SQLite file in WAL mode. Every state transition runs in an
// immediate transaction, so a task changes hands atomically even when
// several server processes share the file.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "vimed/error.hpp"
#include "vimed/mednli.hpp"

struct sqlite3;

namespace httplib {
class Server;
}

namespace vimed::refine {

enum class TaskStatus { open, claimed, submitted };
enum class TaskField { premise, hypothesis };

std::string_view to_string(TaskStatus s);
std::string_view to_string(TaskField f);

struct RefinementTask {
  std::int64_t task_id = 0;
  std::string uid;
  TaskField field = TaskField::premise;
  std::string source_text;
  std::string machine_text;
  std::string suggested_text;
  std::vector<std::string> suggested_rules;
  std::vector<nli::RuleHit> highlights;
  TaskStatus status = TaskStatus::open;
  std::optional<std::string> claimant;
  std::optional<std::int64_t> claim_expiry_ms;  // Unix epoch milliseconds
  std::optional<std::string> final_text;
};

std::string to_json(const RefinementTask& task);

struct Progress {
  std::size_t open = 0;
  std::size_t claimed = 0;  // unexpired claims only; expired ones count as open
  std::size_t submitted = 0;
  std::size_t total = 0;
  std::map<std::string, std::size_t> submitted_by;

  std::string to_json() const;
};

struct EnqueueResult {
  std::size_t inserted = 0;
  std::size_t total = 0;
};

class RefineError : public Error {
 public:
  enum class Code { not_found, invalid, wrong_claimant, not_claimed, already_submitted, lease_expired };

  RefineError(Code code, const std::string& what) : Error(what), code_(code) {}
  Code code() const { return code_; }

 private:
  Code code_;
};

class RefineStore {
 public:
  using Clock = std::function<std::int64_t()>;  // Unix epoch milliseconds

  static constexpr std::chrono::minutes kDefaultLease{15};

  // Opens or creates the store. Throws IoError.
  explicit RefineStore(const std::filesystem::path& path,
                       std::chrono::milliseconds lease = kDefaultLease, Clock clock = {});
  ~RefineStore();
  RefineStore(const RefineStore&) = delete;
  RefineStore& operator=(const RefineStore&) = delete;

  // Two tasks per machine-state example. Existing (uid, field) tasks and
  // existing examples are left untouched.
  EnqueueResult enqueue(const std::vector<nli::Example>& examples,
                        const nli::AbbrevLexicon& lexicon);

  // Hands out the caller's own live claim if it has one, else the oldest
  // open or lease-expired task. nullopt once nothing is claimable.
  std::optional<RefinementTask> claim_next(const std::string& annotator);

  RefinementTask submit(std::int64_t task_id, const std::string& annotator,
                        const std::string& final_text);

  Progress progress() const;
  std::optional<RefinementTask> task(std::int64_t task_id) const;

  // Current example states in enqueue order: refined once both tasks are
  // submitted, machine otherwise.
  std::vector<nli::Example> examples() const;

  std::chrono::milliseconds lease() const { return lease_; }

 private:
  std::int64_t now() const;

  sqlite3* db_ = nullptr;
  std::chrono::milliseconds lease_;
  Clock clock_;
  mutable std::mutex mutex_;
};

// HTTP front end:
//   GET  /tasks/next?annotator=ID  200 task | 204 queue drained
//   GET  /tasks/{id}               200 task
//   POST /tasks/{id}/submit        {"annotator", "final_text"} -> 200 task
//   GET  /progress                 200 progress
//   GET  /lexicon                  200 rule list
// Errors carry {"error": code, "message": text} with 400/404/409/410.
class RefineServer {
 public:
  RefineServer(RefineStore& store, nli::AbbrevLexicon lexicon,
               std::optional<std::filesystem::path> static_dir = std::nullopt);
  ~RefineServer();
  RefineServer(const RefineServer&) = delete;
  RefineServer& operator=(const RefineServer&) = delete;

  // Blocking. False if the address cannot be bound.
  bool listen(const std::string& host, int port);
  // Binds an ephemeral port and returns it (-1 on failure); then call
  // listen_after_bind() to serve.
  int bind_any_port(const std::string& host);
  bool listen_after_bind();
  void wait_until_ready() const;
  void stop();

 private:
  void install_routes();

  RefineStore& store_;
  nli::AbbrevLexicon lexicon_;
  std::unique_ptr<httplib::Server> server_;
};

}  // namespace vimed::refine
