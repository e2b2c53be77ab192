#include <gtest/gtest.h>

#include <atomic>
#include <set>
#include <thread>

#include <nlohmann/json.hpp>

#include "httplib.h"
#include "test_util.hpp"
#include "vimed/refine_service.hpp"

using namespace vimed;
using namespace vimed::refine;
using namespace vimed::testing;
using nlohmann::json;

namespace {

nli::AbbrevLexicon shipped_lexicon() {
  return nli::load_abbrev_lexicon(data_dir() / "abbrev_lexicon.tsv");
}

std::vector<nli::Example> machine_examples(std::size_t n, std::size_t offset = 0) {
  std::vector<nli::Example> out;
  for (std::size_t i = 0; i < n; ++i) {
    nli::Example e;
    e.uid = "ex" + std::to_string(offset + i);
    e.premise = "B\xE1\xBB\x87nh nh\xC3\xA2n kh\xC3\xB4ng c\xC3\xB3 PMH " + std::to_string(i);
    e.hypothesis = "thay \xC4\x91\xE1\xBB\x95i v\xE1\xBB\x81 QRS";
    e.source_premise = "Patient has no PMH " + std::to_string(i);
    e.source_hypothesis = "no QRS changes";
    e.label = nli::kLabels[i % 3];
    e.split = nli::kSplits[i % 3];
    e.state = nli::State::machine;
    out.push_back(e);
  }
  return out;
}

struct FakeClock {
  std::shared_ptr<std::atomic<std::int64_t>> now = std::make_shared<std::atomic<std::int64_t>>(1'000'000);
  RefineStore::Clock fn() const {
    auto p = now;
    return [p] { return p->load(); };
  }
  void advance(std::chrono::milliseconds d) { *now += d.count(); }
};

RefineError::Code code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const RefineError& e) {
    return e.code();
  }
  ADD_FAILURE() << "no RefineError thrown";
  return RefineError::Code::invalid;
}

}  // namespace

TEST(RefineStore, EnqueueCreatesTwoTasksPerExampleOnce) {
  TempDir dir;
  RefineStore store(dir / "s.db");
  const auto r = store.enqueue(machine_examples(10), shipped_lexicon());
  EXPECT_EQ(r.inserted, 20u);
  EXPECT_EQ(r.total, 20u);
  const auto again = store.enqueue(machine_examples(10), shipped_lexicon());
  EXPECT_EQ(again.inserted, 0u);
  EXPECT_EQ(again.total, 20u);
  const auto p = store.progress();
  EXPECT_EQ(p.total, 20u);
  EXPECT_EQ(p.open, 20u);

  auto source = machine_examples(1, 50);
  source[0].state = nli::State::source;
  EXPECT_THROW(store.enqueue(source, shipped_lexicon()), DataError);
  EXPECT_EQ(store.progress().total, 20u);
}

TEST(RefineStore, TasksCarrySuggestionsAndHighlights) {
  TempDir dir;
  RefineStore store(dir / "s.db");
  store.enqueue(machine_examples(1), shipped_lexicon());
  const auto t = store.claim_next("alice");
  ASSERT_TRUE(t);
  EXPECT_EQ(t->field, TaskField::premise);
  EXPECT_EQ(t->source_text, "Patient has no PMH 0");
  EXPECT_EQ(t->suggested_text,
            "B\xE1\xBB\x87nh nh\xC3\xA2n kh\xC3\xB4ng c\xC3\xB3 ti\xE1\xBB\x81n s\xE1\xBB\xAD b\xE1\xBB\x87nh 0");
  EXPECT_EQ(t->suggested_rules, (std::vector<std::string>{"pmh"}));
  ASSERT_EQ(t->highlights.size(), 1u);
  EXPECT_EQ(t->highlights[0].source_begin, 19u);
  EXPECT_EQ(t->highlights[0].source_end, 22u);
  EXPECT_EQ(t->status, TaskStatus::claimed);
  EXPECT_EQ(t->claimant, "alice");
  const auto j = json::parse(to_json(*t));
  EXPECT_EQ(j["machine_highlights"][0]["begin"], 19);
  EXPECT_EQ(j["status"], "claimed");
}

TEST(RefineStore, ClaimsAreExclusiveAndSticky) {
  TempDir dir;
  RefineStore store(dir / "s.db");
  store.enqueue(machine_examples(1), shipped_lexicon());
  const auto a = store.claim_next("alice");
  const auto b = store.claim_next("bob");
  ASSERT_TRUE(a && b);
  EXPECT_NE(a->task_id, b->task_id);
  EXPECT_EQ(store.claim_next("alice")->task_id, a->task_id);  // own live claim comes back
  EXPECT_FALSE(store.claim_next("carol"));
  EXPECT_EQ(code_of([&] { store.claim_next("  "); }), RefineError::Code::invalid);
}

TEST(RefineStore, ExpiredLeaseIsReclaimable) {
  TempDir dir;
  FakeClock clock;
  RefineStore store(dir / "s.db", std::chrono::minutes(15), clock.fn());
  store.enqueue(machine_examples(1), shipped_lexicon());
  const auto a = store.claim_next("alice");
  store.claim_next("alice2");
  EXPECT_FALSE(store.claim_next("bob"));
  clock.advance(std::chrono::minutes(15) - std::chrono::milliseconds(1));
  EXPECT_FALSE(store.claim_next("bob"));
  EXPECT_EQ(store.progress().claimed, 2u);
  clock.advance(std::chrono::milliseconds(1));
  EXPECT_EQ(store.progress().claimed, 0u);
  EXPECT_EQ(store.progress().open, 2u);
  const auto b = store.claim_next("bob");
  ASSERT_TRUE(b);
  EXPECT_EQ(b->task_id, a->task_id);
  EXPECT_EQ(code_of([&] { store.submit(a->task_id, "alice", "x"); }),
            RefineError::Code::wrong_claimant);
  EXPECT_NO_THROW(store.submit(b->task_id, "bob", "x"));
}

TEST(RefineStore, LateSubmitAfterExpiryIsRejected) {
  TempDir dir;
  FakeClock clock;
  RefineStore store(dir / "s.db", std::chrono::minutes(1), clock.fn());
  store.enqueue(machine_examples(1), shipped_lexicon());
  const auto a = store.claim_next("alice");
  clock.advance(std::chrono::minutes(2));
  EXPECT_EQ(code_of([&] { store.submit(a->task_id, "alice", "late"); }),
            RefineError::Code::lease_expired);
  EXPECT_EQ(store.task(a->task_id)->status, TaskStatus::open);
  EXPECT_FALSE(store.task(a->task_id)->final_text);
}

TEST(RefineStore, SubmitErrorCodes) {
  TempDir dir;
  RefineStore store(dir / "s.db");
  store.enqueue(machine_examples(2), shipped_lexicon());
  EXPECT_EQ(code_of([&] { store.submit(999, "a", "x"); }), RefineError::Code::not_found);
  const auto t = store.claim_next("a");
  EXPECT_EQ(code_of([&] { store.submit(t->task_id, "a", ""); }), RefineError::Code::invalid);
  EXPECT_EQ(code_of([&] { store.submit(t->task_id, "a", "bad \xC3"); }), RefineError::Code::invalid);
  EXPECT_EQ(code_of([&] { store.submit(t->task_id + 1, "a", "x"); }), RefineError::Code::not_claimed);
  EXPECT_EQ(code_of([&] { store.submit(t->task_id, "b", "x"); }), RefineError::Code::wrong_claimant);
  const auto done = store.submit(t->task_id, "a", "final");
  EXPECT_EQ(done.status, TaskStatus::submitted);
  EXPECT_EQ(done.final_text, "final");
  EXPECT_EQ(code_of([&] { store.submit(t->task_id, "a", "again"); }),
            RefineError::Code::already_submitted);
}

TEST(RefineStore, ExampleBecomesRefinedWhenBothFieldsAreDone) {
  TempDir dir;
  RefineStore store(dir / "s.db");
  store.enqueue(machine_examples(1), shipped_lexicon());
  const auto p = store.claim_next("alice");
  const auto h = store.claim_next("bob");
  store.submit(p->task_id, "alice", p->suggested_text);
  EXPECT_EQ(store.examples()[0].state, nli::State::machine);
  store.submit(h->task_id, "bob", "thay \xC4\x91\xE1\xBB\x95i QRS");
  const auto ex = store.examples();
  ASSERT_EQ(ex.size(), 1u);
  EXPECT_EQ(ex[0].state, nli::State::refined);
  EXPECT_EQ(ex[0].premise, p->suggested_text);
  EXPECT_EQ(ex[0].hypothesis, "thay \xC4\x91\xE1\xBB\x95i QRS");
  EXPECT_EQ(ex[0].applied_rules, (std::vector<std::string>{"pmh", "qrs"}));
  EXPECT_EQ(ex[0].annotator, "alice,bob");
  EXPECT_EQ(ex[0].uid, "ex0");
  EXPECT_EQ(ex[0].source_premise, "Patient has no PMH 0");
}

TEST(RefineStore, ProgressPerAnnotator) {
  TempDir dir;
  RefineStore store(dir / "s.db");
  store.enqueue(machine_examples(5), shipped_lexicon());
  for (int i = 0; i < 3; ++i) {
    const auto t = store.claim_next("A");
    store.submit(t->task_id, "A", "a");
  }
  for (int i = 0; i < 2; ++i) {
    const auto t = store.claim_next("B");
    store.submit(t->task_id, "B", "b");
  }
  store.claim_next("C");
  const auto p = store.progress();
  EXPECT_EQ(p.submitted, 5u);
  EXPECT_EQ(p.claimed, 1u);
  EXPECT_EQ(p.open, 4u);
  EXPECT_EQ(p.total, 10u);
  EXPECT_EQ(p.submitted_by, (std::map<std::string, std::size_t>{{"A", 3}, {"B", 2}}));
  const auto j = json::parse(p.to_json());
  EXPECT_EQ(j["submitted_by"]["A"], 3);
}

TEST(RefineStore, StatePersistsAcrossReopen) {
  TempDir dir;
  std::int64_t id = 0;
  {
    RefineStore store(dir / "s.db");
    store.enqueue(machine_examples(2), shipped_lexicon());
    id = store.claim_next("a")->task_id;
    store.submit(id, "a", "kept");
  }
  RefineStore reopened(dir / "s.db");
  EXPECT_EQ(reopened.task(id)->final_text, "kept");
  EXPECT_EQ(reopened.progress().submitted, 1u);
}

TEST(RefineStore, ConcurrentClaimantsNeverShareATask) {
  TempDir dir;
  RefineStore store(dir / "s.db");
  store.enqueue(machine_examples(50), shipped_lexicon());
  std::mutex mutex;
  std::vector<std::int64_t> submitted;
  std::atomic<int> errors{0};
  std::vector<std::jthread> threads;
  for (int a = 0; a < 8; ++a) {
    threads.emplace_back([&, a] {
      // Each thread uses its own connection, as separate server processes would.
      RefineStore own(dir / "s.db");
      const std::string me = "ann" + std::to_string(a);
      while (auto t = own.claim_next(me)) {
        try {
          own.submit(t->task_id, me, "done by " + me);
          std::lock_guard lock(mutex);
          submitted.push_back(t->task_id);
        } catch (const std::exception&) {
          ++errors;
        }
      }
    });
  }
  threads.clear();
  EXPECT_EQ(errors.load(), 0);
  EXPECT_EQ(submitted.size(), 100u);
  EXPECT_EQ(std::set<std::int64_t>(submitted.begin(), submitted.end()).size(), 100u);
  const auto p = store.progress();
  EXPECT_EQ(p.submitted, 100u);
  EXPECT_EQ(p.open + p.claimed, 0u);
  for (const auto& e : store.examples()) EXPECT_EQ(e.state, nli::State::refined);
}

TEST(RefineStore, OneTaskTwoSimultaneousClaimants) {
  const auto one = machine_examples(1);
  for (int round = 0; round < 20; ++round) {
    TempDir d;
    {
      RefineStore s(d / "s.db");
      s.enqueue(one, shipped_lexicon());
      s.submit(s.claim_next("x")->task_id, "x", "done");  // one open task left
    }
    std::atomic<int> won{0};
    std::vector<std::jthread> ts;
    for (int k = 0; k < 2; ++k) {
      ts.emplace_back([&, k] {
        RefineStore own(d / "s.db");
        if (own.claim_next("c" + std::to_string(k))) ++won;
      });
    }
    ts.clear();
    EXPECT_EQ(won.load(), 1) << "round " << round;
  }
}

class RefineHttp : public ::testing::Test {
 protected:
  void SetUp() override {
    store_ = std::make_unique<RefineStore>(dir_ / "s.db", std::chrono::minutes(15), clock_.fn());
    store_->enqueue(machine_examples(1), shipped_lexicon());
    server_ = std::make_unique<RefineServer>(*store_, shipped_lexicon());
    port_ = server_->bind_any_port("127.0.0.1");
    ASSERT_GT(port_, 0);
    thread_ = std::thread([this] { server_->listen_after_bind(); });
    server_->wait_until_ready();
    client_ = std::make_unique<httplib::Client>("127.0.0.1", port_);
  }
  void TearDown() override {
    server_->stop();
    thread_.join();
  }
  httplib::Result submit(std::int64_t id, const json& body) {
    return client_->Post("/tasks/" + std::to_string(id) + "/submit", body.dump(), "application/json");
  }

  TempDir dir_;
  FakeClock clock_;
  std::unique_ptr<RefineStore> store_;
  std::unique_ptr<RefineServer> server_;
  int port_ = 0;
  std::thread thread_;
  std::unique_ptr<httplib::Client> client_;
};

TEST_F(RefineHttp, FullTaskCycle) {
  auto r = client_->Get("/tasks/next?annotator=alice");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 200);
  EXPECT_EQ(r->get_header_value("Access-Control-Allow-Origin"), "*");
  const auto task = json::parse(r->body);
  const std::int64_t id = task["task_id"];
  EXPECT_EQ(task["claimant"], "alice");
  EXPECT_EQ(task["suggested_rules"], json::array({"pmh"}));

  r = client_->Get("/tasks/" + std::to_string(id));
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 200);
  EXPECT_EQ(json::parse(r->body)["task_id"], id);

  r = submit(id, {{"annotator", "bob"}, {"final_text", "x"}});
  EXPECT_EQ(r->status, 409);
  EXPECT_EQ(json::parse(r->body)["error"], "wrong_claimant");

  r = submit(id, {{"annotator", "alice"}, {"final_text", ""}});
  EXPECT_EQ(r->status, 400);

  r = submit(id, {{"annotator", "alice"}, {"final_text", "done"}});
  EXPECT_EQ(r->status, 200);
  EXPECT_EQ(json::parse(r->body)["status"], "submitted");

  r = submit(id, {{"annotator", "alice"}, {"final_text", "done"}});
  EXPECT_EQ(r->status, 409);
  EXPECT_EQ(json::parse(r->body)["error"], "already_submitted");

  r = client_->Get("/progress");
  ASSERT_TRUE(r);
  const auto p = json::parse(r->body);
  EXPECT_EQ(p["submitted"], 1);
  EXPECT_EQ(p["open"], 1);
}

TEST_F(RefineHttp, ErrorStatuses) {
  auto r = client_->Get("/tasks/77");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 404);
  EXPECT_EQ(json::parse(r->body)["error"], "not_found");

  r = client_->Post("/tasks/1/submit", "{not json", "application/json");
  EXPECT_EQ(r->status, 400);

  r = client_->Get("/tasks/next");
  EXPECT_EQ(r->status, 400);

  const auto a = json::parse(client_->Get("/tasks/next?annotator=a")->body);
  client_->Get("/tasks/next?annotator=b");
  r = client_->Get("/tasks/next?annotator=c");
  EXPECT_EQ(r->status, 204);

  clock_.advance(std::chrono::minutes(16));
  r = submit(a["task_id"], {{"annotator", "a"}, {"final_text", "late"}});
  EXPECT_EQ(r->status, 410);
  EXPECT_EQ(json::parse(r->body)["error"], "lease_expired");
}

TEST_F(RefineHttp, LexiconAndPreflight) {
  auto r = client_->Get("/lexicon");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 200);
  EXPECT_EQ(json::parse(r->body).size(), 3u);
  r = client_->Options("/tasks/1/submit");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 204);
  EXPECT_FALSE(r->get_header_value("Access-Control-Allow-Methods").empty());
}

TEST(RefineExport, OnlyRefinedStoreExportsUnderRequireRefined) {
  TempDir dir;
  RefineStore store(dir / "s.db");
  store.enqueue(machine_examples(3), shipped_lexicon());
  EXPECT_THROW(nli::export_vimednli(store.examples(), dir / "out", nli::ExportFormat::jsonl,
                                    nli::StatePolicy::require_refined),
               DataError);
  while (auto t = store.claim_next("a")) store.submit(t->task_id, "a", t->suggested_text);
  const auto m = nli::export_vimednli(store.examples(), dir / "out", nli::ExportFormat::jsonl,
                                      nli::StatePolicy::require_refined);
  EXPECT_EQ(m.stats.per_state.at(nli::State::refined), 3u);
}
