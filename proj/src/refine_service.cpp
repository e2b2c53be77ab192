#include "vimed/refine_service.hpp"

#include <sqlite3.h>

#include <algorithm>

#include <nlohmann/json.hpp>

#include "httplib.h"
#include "vimed/text.hpp"

namespace vimed::refine {

using ordered_json = nlohmann::ordered_json;

std::string_view to_string(TaskStatus s) {
  switch (s) {
    case TaskStatus::open: return "open";
    case TaskStatus::claimed: return "claimed";
    case TaskStatus::submitted: return "submitted";
  }
  return "?";
}

std::string_view to_string(TaskField f) {
  return f == TaskField::premise ? "premise" : "hypothesis";
}

namespace {

TaskStatus status_from_string(std::string_view s) {
  if (s == "open") return TaskStatus::open;
  if (s == "claimed") return TaskStatus::claimed;
  if (s == "submitted") return TaskStatus::submitted;
  throw DataError("store holds unknown task status '" + std::string(s) + "'");
}

TaskField field_from_string(std::string_view s) {
  if (s == "premise") return TaskField::premise;
  if (s == "hypothesis") return TaskField::hypothesis;
  throw DataError("store holds unknown task field '" + std::string(s) + "'");
}

ordered_json hits_json(const std::vector<nli::RuleHit>& hits, bool source_side) {
  ordered_json arr = ordered_json::array();
  for (const auto& h : hits) {
    ordered_json j;
    j["rule_id"] = h.rule_id;
    j["begin"] = source_side ? h.source_begin : h.begin;
    j["end"] = source_side ? h.source_end : h.end;
    arr.push_back(std::move(j));
  }
  return arr;
}

std::string hits_to_storage(const std::vector<nli::RuleHit>& hits) {
  ordered_json arr = ordered_json::array();
  for (const auto& h : hits) {
    arr.push_back({h.rule_id, h.begin, h.end, h.source_begin, h.source_end});
  }
  return arr.dump();
}

std::vector<nli::RuleHit> hits_from_storage(std::string_view s) {
  std::vector<nli::RuleHit> hits;
  for (const auto& j : nlohmann::json::parse(s)) {
    hits.push_back({j.at(0).get<std::string>(), j.at(1).get<std::size_t>(),
                    j.at(2).get<std::size_t>(), j.at(3).get<std::size_t>(),
                    j.at(4).get<std::size_t>()});
  }
  return hits;
}

class Statement {
 public:
  Statement(sqlite3* db, const char* sql) : db_(db) {
    if (sqlite3_prepare_v2(db, sql, -1, &stmt_, nullptr) != SQLITE_OK) {
      throw IoError(std::string("sqlite prepare failed: ") + sqlite3_errmsg(db));
    }
  }
  ~Statement() { sqlite3_finalize(stmt_); }
  Statement(const Statement&) = delete;
  Statement& operator=(const Statement&) = delete;

  Statement& bind(int index, std::string_view value) {
    check(sqlite3_bind_text(stmt_, index, value.data(), static_cast<int>(value.size()),
                            SQLITE_TRANSIENT));
    return *this;
  }
  Statement& bind(int index, std::int64_t value) {
    check(sqlite3_bind_int64(stmt_, index, value));
    return *this;
  }
  void reset() {
    sqlite3_reset(stmt_);
    sqlite3_clear_bindings(stmt_);
  }

  // True while a row is available.
  bool step() {
    const int rc = sqlite3_step(stmt_);
    if (rc == SQLITE_ROW) return true;
    if (rc == SQLITE_DONE) return false;
    throw IoError(std::string("sqlite step failed: ") + sqlite3_errmsg(db_));
  }

  std::string text(int col) const {
    const auto* p = sqlite3_column_text(stmt_, col);
    return p == nullptr ? std::string()
                        : std::string(reinterpret_cast<const char*>(p),
                                      static_cast<std::size_t>(sqlite3_column_bytes(stmt_, col)));
  }
  std::optional<std::string> optional_text(int col) const {
    if (sqlite3_column_type(stmt_, col) == SQLITE_NULL) return std::nullopt;
    return text(col);
  }
  std::int64_t integer(int col) const { return sqlite3_column_int64(stmt_, col); }
  std::optional<std::int64_t> optional_integer(int col) const {
    if (sqlite3_column_type(stmt_, col) == SQLITE_NULL) return std::nullopt;
    return integer(col);
  }

 private:
  void check(int rc) {
    if (rc != SQLITE_OK) throw IoError(std::string("sqlite bind failed: ") + sqlite3_errmsg(db_));
  }

  sqlite3* db_;
  sqlite3_stmt* stmt_ = nullptr;
};

void exec(sqlite3* db, const char* sql) {
  char* message = nullptr;
  if (sqlite3_exec(db, sql, nullptr, nullptr, &message) != SQLITE_OK) {
    std::string what = message != nullptr ? message : "unknown error";
    sqlite3_free(message);
    throw IoError("sqlite: " + what);
  }
}

// BEGIN IMMEDIATE ... COMMIT, rolled back unless commit() ran.
class Transaction {
 public:
  explicit Transaction(sqlite3* db) : db_(db) { exec(db_, "BEGIN IMMEDIATE"); }
  ~Transaction() {
    if (!done_) sqlite3_exec(db_, "ROLLBACK", nullptr, nullptr, nullptr);
  }
  Transaction(const Transaction&) = delete;
  Transaction& operator=(const Transaction&) = delete;

  void commit() {
    exec(db_, "COMMIT");
    done_ = true;
  }

 private:
  sqlite3* db_;
  bool done_ = false;
};

constexpr const char* kSchema = R"sql(
CREATE TABLE IF NOT EXISTS meta (
  key TEXT PRIMARY KEY,
  value TEXT NOT NULL
);
INSERT OR IGNORE INTO meta (key, value) VALUES ('schema_version', '1');
CREATE TABLE IF NOT EXISTS examples (
  seq INTEGER PRIMARY KEY AUTOINCREMENT,
  uid TEXT NOT NULL UNIQUE,
  split TEXT NOT NULL,
  label TEXT NOT NULL,
  premise TEXT NOT NULL,
  hypothesis TEXT NOT NULL,
  source_premise TEXT NOT NULL,
  source_hypothesis TEXT NOT NULL,
  state TEXT NOT NULL,
  applied_rules TEXT NOT NULL,
  annotator TEXT
);
CREATE TABLE IF NOT EXISTS tasks (
  task_id INTEGER PRIMARY KEY AUTOINCREMENT,
  uid TEXT NOT NULL REFERENCES examples (uid),
  field TEXT NOT NULL,
  source_text TEXT NOT NULL,
  machine_text TEXT NOT NULL,
  suggested_text TEXT NOT NULL,
  suggested_rules TEXT NOT NULL,
  highlights TEXT NOT NULL,
  status TEXT NOT NULL,
  claimant TEXT,
  claim_expiry INTEGER,
  final_text TEXT,
  submitted_at INTEGER,
  UNIQUE (uid, field)
);
CREATE INDEX IF NOT EXISTS tasks_by_status ON tasks (status, task_id);
)sql";

constexpr const char* kTaskColumns =
    "task_id, uid, field, source_text, machine_text, suggested_text, suggested_rules, "
    "highlights, status, claimant, claim_expiry, final_text";

RefinementTask read_task(const Statement& s) {
  RefinementTask t;
  t.task_id = s.integer(0);
  t.uid = s.text(1);
  t.field = field_from_string(s.text(2));
  t.source_text = s.text(3);
  t.machine_text = s.text(4);
  t.suggested_text = s.text(5);
  t.suggested_rules = nlohmann::json::parse(s.text(6)).get<std::vector<std::string>>();
  t.highlights = hits_from_storage(s.text(7));
  t.status = status_from_string(s.text(8));
  t.claimant = s.optional_text(9);
  t.claim_expiry_ms = s.optional_integer(10);
  t.final_text = s.optional_text(11);
  return t;
}

std::optional<RefinementTask> load_task(sqlite3* db, std::int64_t task_id) {
  const std::string sql = std::string("SELECT ") + kTaskColumns + " FROM tasks WHERE task_id = ?";
  Statement s(db, sql.c_str());
  s.bind(1, task_id);
  if (!s.step()) return std::nullopt;
  return read_task(s);
}

}  // namespace

std::string to_json(const RefinementTask& task) {
  ordered_json j;
  j["task_id"] = task.task_id;
  j["uid"] = task.uid;
  j["field"] = to_string(task.field);
  j["source_text"] = task.source_text;
  j["machine_text"] = task.machine_text;
  j["suggested_text"] = task.suggested_text;
  j["suggested_rules"] = task.suggested_rules;
  j["machine_highlights"] = hits_json(task.highlights, true);
  j["suggested_highlights"] = hits_json(task.highlights, false);
  j["status"] = to_string(task.status);
  j["claimant"] = task.claimant ? ordered_json(*task.claimant) : ordered_json(nullptr);
  j["claim_expiry"] =
      task.claim_expiry_ms ? ordered_json(*task.claim_expiry_ms) : ordered_json(nullptr);
  j["final_text"] = task.final_text ? ordered_json(*task.final_text) : ordered_json(nullptr);
  return j.dump();
}

std::string Progress::to_json() const {
  ordered_json j;
  j["total"] = total;
  j["open"] = open;
  j["claimed"] = claimed;
  j["submitted"] = submitted;
  j["submitted_by"] = submitted_by;
  return j.dump();
}

RefineStore::RefineStore(const std::filesystem::path& path, std::chrono::milliseconds lease,
                         Clock clock)
    : lease_(lease), clock_(std::move(clock)) {
  if (lease_.count() <= 0) throw UsageError("lease duration must be positive");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (sqlite3_open_v2(path.c_str(), &db_,
                      SQLITE_OPEN_READWRITE | SQLITE_OPEN_CREATE | SQLITE_OPEN_FULLMUTEX,
                      nullptr) != SQLITE_OK) {
    const std::string what = db_ != nullptr ? sqlite3_errmsg(db_) : "out of memory";
    sqlite3_close(db_);
    throw IoError("cannot open refine store " + path.string() + ": " + what);
  }
  try {
    sqlite3_busy_timeout(db_, 10000);
    exec(db_, "PRAGMA journal_mode = WAL");
    exec(db_, "PRAGMA synchronous = FULL");
    exec(db_, "PRAGMA foreign_keys = ON");
    exec(db_, kSchema);
  } catch (...) {
    sqlite3_close(db_);
    throw;
  }
}

RefineStore::~RefineStore() { sqlite3_close(db_); }

std::int64_t RefineStore::now() const {
  if (clock_) return clock_();
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

EnqueueResult RefineStore::enqueue(const std::vector<nli::Example>& examples,
                                   const nli::AbbrevLexicon& lexicon) {
  for (const auto& e : examples) {
    if (e.state != nli::State::machine) {
      throw DataError("example " + e.uid + " is not in machine state");
    }
  }
  std::lock_guard lock(mutex_);
  Transaction tx(db_);
  EnqueueResult result;
  Statement insert_example(db_,
                           "INSERT OR IGNORE INTO examples (uid, split, label, premise, "
                           "hypothesis, source_premise, source_hypothesis, state, "
                           "applied_rules, annotator) VALUES (?, ?, ?, ?, ?, ?, ?, 'machine', "
                           "'[]', NULL)");
  Statement insert_task(db_,
                        "INSERT OR IGNORE INTO tasks (uid, field, source_text, machine_text, "
                        "suggested_text, suggested_rules, highlights, status) VALUES (?, ?, ?, "
                        "?, ?, ?, ?, 'open')");
  for (const auto& e : examples) {
    insert_example.reset();
    insert_example.bind(1, e.uid)
        .bind(2, nli::to_string(e.split))
        .bind(3, nli::to_string(e.label))
        .bind(4, e.premise)
        .bind(5, e.hypothesis)
        .bind(6, e.source_premise)
        .bind(7, e.source_hypothesis);
    insert_example.step();
    for (const TaskField field : {TaskField::premise, TaskField::hypothesis}) {
      const std::string& machine = field == TaskField::premise ? e.premise : e.hypothesis;
      const std::string& source =
          field == TaskField::premise ? e.source_premise : e.source_hypothesis;
      const nli::AbbrevResult suggestion = nli::apply_abbrev_rules(machine, lexicon);
      insert_task.reset();
      insert_task.bind(1, e.uid)
          .bind(2, to_string(field))
          .bind(3, source)
          .bind(4, machine)
          .bind(5, suggestion.sentence)
          .bind(6, nlohmann::json(suggestion.applied_rules).dump())
          .bind(7, hits_to_storage(suggestion.hits));
      insert_task.step();
      result.inserted += static_cast<std::size_t>(sqlite3_changes(db_));
    }
  }
  Statement count(db_, "SELECT COUNT(*) FROM tasks");
  count.step();
  result.total = static_cast<std::size_t>(count.integer(0));
  tx.commit();
  return result;
}

std::optional<RefinementTask> RefineStore::claim_next(const std::string& annotator) {
  if (!text::is_valid_utf8(annotator) || text::trim(annotator).empty()) {
    throw RefineError(RefineError::Code::invalid, "annotator id must be non-empty UTF-8");
  }
  std::lock_guard lock(mutex_);
  const std::int64_t t = now();
  Transaction tx(db_);
  {
    const std::string sql = std::string("SELECT ") + kTaskColumns +
                            " FROM tasks WHERE status = 'claimed' AND claimant = ? AND "
                            "claim_expiry > ? ORDER BY task_id LIMIT 1";
    Statement own(db_, sql.c_str());
    own.bind(1, annotator).bind(2, t);
    if (own.step()) {
      RefinementTask task = read_task(own);
      tx.commit();
      return task;
    }
  }
  std::int64_t task_id = 0;
  {
    Statement next(db_,
                   "SELECT task_id FROM tasks WHERE status = 'open' OR (status = 'claimed' AND "
                   "claim_expiry <= ?) ORDER BY task_id LIMIT 1");
    next.bind(1, t);
    if (!next.step()) {
      tx.commit();
      return std::nullopt;
    }
    task_id = next.integer(0);
  }
  Statement claim(db_,
                  "UPDATE tasks SET status = 'claimed', claimant = ?, claim_expiry = ? WHERE "
                  "task_id = ?");
  claim.bind(1, annotator).bind(2, t + lease_.count()).bind(3, task_id);
  claim.step();
  auto task = load_task(db_, task_id);
  tx.commit();
  return task;
}

RefinementTask RefineStore::submit(std::int64_t task_id, const std::string& annotator,
                                   const std::string& final_text) {
  std::lock_guard lock(mutex_);
  const std::int64_t t = now();
  Transaction tx(db_);
  std::optional<RefinementTask> task = load_task(db_, task_id);
  if (!task) {
    throw RefineError(RefineError::Code::not_found, "unknown task " + std::to_string(task_id));
  }
  if (!text::is_valid_utf8(final_text) || text::trim(final_text).empty()) {
    throw RefineError(RefineError::Code::invalid, "final_text must be non-empty UTF-8");
  }
  if (task->status == TaskStatus::submitted) {
    throw RefineError(RefineError::Code::already_submitted,
                      "task " + std::to_string(task_id) + " was already submitted");
  }
  if (task->status == TaskStatus::open) {
    throw RefineError(RefineError::Code::not_claimed,
                      "task " + std::to_string(task_id) + " is not claimed");
  }
  if (task->claimant != annotator) {
    throw RefineError(RefineError::Code::wrong_claimant,
                      "task " + std::to_string(task_id) + " is claimed by another annotator");
  }
  if (task->claim_expiry_ms.value_or(0) <= t) {
    Statement release(db_,
                      "UPDATE tasks SET status = 'open', claimant = NULL, claim_expiry = NULL "
                      "WHERE task_id = ?");
    release.bind(1, task_id);
    release.step();
    tx.commit();
    throw RefineError(RefineError::Code::lease_expired,
                      "lease on task " + std::to_string(task_id) + " expired");
  }

  {
    Statement done(db_,
                   "UPDATE tasks SET status = 'submitted', final_text = ?, submitted_at = ? "
                   "WHERE task_id = ?");
    done.bind(1, final_text).bind(2, t).bind(3, task_id);
    done.step();
  }
  {
    const char* sql = task->field == TaskField::premise
                          ? "UPDATE examples SET premise = ? WHERE uid = ?"
                          : "UPDATE examples SET hypothesis = ? WHERE uid = ?";
    Statement update(db_, sql);
    update.bind(1, final_text).bind(2, task->uid);
    update.step();
  }
  {
    Statement siblings(db_,
                       "SELECT status, suggested_rules, claimant FROM tasks WHERE uid = ? "
                       "ORDER BY CASE field WHEN 'premise' THEN 0 ELSE 1 END");
    siblings.bind(1, task->uid);
    std::size_t submitted = 0;
    std::vector<std::string> rules;
    std::vector<std::string> annotators;
    while (siblings.step()) {
      if (siblings.text(0) != "submitted") continue;
      ++submitted;
      for (const auto& r : nlohmann::json::parse(siblings.text(1))) {
        const auto id = r.get<std::string>();
        if (std::find(rules.begin(), rules.end(), id) == rules.end()) rules.push_back(id);
      }
      const std::string who = siblings.text(2);
      if (std::find(annotators.begin(), annotators.end(), who) == annotators.end()) {
        annotators.push_back(who);
      }
    }
    if (submitted == 2) {
      Statement refined(db_,
                        "UPDATE examples SET state = 'refined', applied_rules = ?, annotator = "
                        "? WHERE uid = ?");
      refined.bind(1, nlohmann::json(rules).dump())
          .bind(2, text::join(annotators, ","))
          .bind(3, task->uid);
      refined.step();
    }
  }
  RefinementTask updated = *load_task(db_, task_id);
  tx.commit();
  return updated;
}

Progress RefineStore::progress() const {
  std::lock_guard lock(mutex_);
  const std::int64_t t = now();
  Progress p;
  {
    Statement s(db_, "SELECT status, claim_expiry FROM tasks");
    while (s.step()) {
      ++p.total;
      const TaskStatus status = status_from_string(s.text(0));
      if (status == TaskStatus::submitted) {
        ++p.submitted;
      } else if (status == TaskStatus::claimed && s.integer(1) > t) {
        ++p.claimed;
      } else {
        ++p.open;
      }
    }
  }
  Statement by(db_,
               "SELECT claimant, COUNT(*) FROM tasks WHERE status = 'submitted' GROUP BY "
               "claimant ORDER BY claimant");
  while (by.step()) p.submitted_by[by.text(0)] = static_cast<std::size_t>(by.integer(1));
  return p;
}

std::optional<RefinementTask> RefineStore::task(std::int64_t task_id) const {
  std::lock_guard lock(mutex_);
  return load_task(db_, task_id);
}

std::vector<nli::Example> RefineStore::examples() const {
  std::lock_guard lock(mutex_);
  std::vector<nli::Example> out;
  Statement s(db_,
              "SELECT uid, split, label, premise, hypothesis, source_premise, "
              "source_hypothesis, state, applied_rules, annotator FROM examples ORDER BY seq");
  while (s.step()) {
    nli::Example e;
    e.uid = s.text(0);
    e.split = nli::split_from_string(s.text(1));
    e.label = nli::label_from_string(s.text(2));
    e.premise = s.text(3);
    e.hypothesis = s.text(4);
    e.source_premise = s.text(5);
    e.source_hypothesis = s.text(6);
    e.state = nli::state_from_string(s.text(7));
    e.applied_rules = nlohmann::json::parse(s.text(8)).get<std::vector<std::string>>();
    e.annotator = s.optional_text(9);
    out.push_back(std::move(e));
  }
  return out;
}

namespace {

int http_status(RefineError::Code code) {
  switch (code) {
    case RefineError::Code::not_found: return 404;
    case RefineError::Code::invalid: return 400;
    case RefineError::Code::wrong_claimant:
    case RefineError::Code::not_claimed:
    case RefineError::Code::already_submitted: return 409;
    case RefineError::Code::lease_expired: return 410;
  }
  return 500;
}

std::string_view code_name(RefineError::Code code) {
  switch (code) {
    case RefineError::Code::not_found: return "not_found";
    case RefineError::Code::invalid: return "invalid";
    case RefineError::Code::wrong_claimant: return "wrong_claimant";
    case RefineError::Code::not_claimed: return "not_claimed";
    case RefineError::Code::already_submitted: return "already_submitted";
    case RefineError::Code::lease_expired: return "lease_expired";
  }
  return "error";
}

void send_error(httplib::Response& res, int status, std::string_view code,
                const std::string& message) {
  ordered_json j;
  j["error"] = code;
  j["message"] = message;
  res.status = status;
  res.set_content(j.dump(), "application/json");
}

// Runs a handler, translating exceptions into JSON error responses.
template <typename Fn>
void guarded(httplib::Response& res, Fn&& fn) {
  try {
    fn();
  } catch (const RefineError& e) {
    send_error(res, http_status(e.code()), code_name(e.code()), e.what());
  } catch (const nlohmann::json::exception& e) {
    send_error(res, 400, "invalid", std::string("bad request body: ") + e.what());
  } catch (const std::exception& e) {
    send_error(res, 500, "internal", e.what());
  }
}

std::int64_t parse_task_id(const std::string& s) {
  try {
    return std::stoll(s);
  } catch (const std::exception&) {
    throw RefineError(RefineError::Code::not_found, "unknown task " + s);
  }
}

}  // namespace

RefineServer::RefineServer(RefineStore& store, nli::AbbrevLexicon lexicon,
                           std::optional<std::filesystem::path> static_dir)
    : store_(store), lexicon_(std::move(lexicon)), server_(std::make_unique<httplib::Server>()) {
  server_->set_default_headers({{"Access-Control-Allow-Origin", "*"}});
  if (static_dir && !server_->set_mount_point("/", static_dir->string())) {
    throw UsageError("UI directory does not exist: " + static_dir->string());
  }
  install_routes();
}

RefineServer::~RefineServer() { stop(); }

void RefineServer::install_routes() {
  server_->Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.status = 204;
  });

  server_->Get("/tasks/next", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const std::string annotator = req.get_param_value("annotator");
      if (annotator.empty()) {
        throw RefineError(RefineError::Code::invalid, "annotator query parameter is required");
      }
      const auto task = store_.claim_next(annotator);
      if (!task) {
        res.status = 204;
        return;
      }
      res.set_content(to_json(*task), "application/json");
    });
  });

  server_->Get(R"(/tasks/(\d+))", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const std::int64_t id = parse_task_id(req.matches[1]);
      const auto task = store_.task(id);
      if (!task) throw RefineError(RefineError::Code::not_found, "unknown task " + std::to_string(id));
      res.set_content(to_json(*task), "application/json");
    });
  });

  server_->Post(R"(/tasks/(\d+)/submit)",
                [this](const httplib::Request& req, httplib::Response& res) {
                  guarded(res, [&] {
                    const std::int64_t id = parse_task_id(req.matches[1]);
                    const auto body = nlohmann::json::parse(req.body);
                    const auto annotator = body.at("annotator").get<std::string>();
                    const auto final_text = body.at("final_text").get<std::string>();
                    const RefinementTask task = store_.submit(id, annotator, final_text);
                    res.set_content(to_json(task), "application/json");
                  });
                });

  server_->Get("/progress", [this](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] { res.set_content(store_.progress().to_json(), "application/json"); });
  });

  server_->Get("/lexicon", [this](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] { res.set_content(lexicon_.to_json(), "application/json"); });
  });
}

bool RefineServer::listen(const std::string& host, int port) {
  return server_->listen(host, port);
}

int RefineServer::bind_any_port(const std::string& host) {
  return server_->bind_to_any_port(host);
}

bool RefineServer::listen_after_bind() { return server_->listen_after_bind(); }

void RefineServer::wait_until_ready() const { server_->wait_until_ready(); }

void RefineServer::stop() {
  if (server_ && server_->is_running()) server_->stop();
}

}  // namespace vimed::refine
