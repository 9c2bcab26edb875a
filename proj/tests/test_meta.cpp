#include <gtest/gtest.h>

#include <functional>
#include <map>
#include <set>

#include "simopt/llm_revision.hpp"
#include "simopt/meta_optimizer.hpp"
#include "stub_server.hpp"

using namespace simopt;
using simopt::testing::fast_config;
using simopt::testing::StubServer;

namespace {

/// Scorer whose value depends only on the schedule text and which split is asked for.
class StubScorer final : public ScheduleScorer {
 public:
  using Fn = std::function<double(const std::string& schedule, const std::vector<std::size_t>& points)>;
  explicit StubScorer(Fn fn) : fn_(std::move(fn)) {}
  ScoreResult score(const Schedule& s, const std::vector<std::size_t>& points) override {
    ++calls;
    ScoreResult r;
    r.schedule = s.to_string();
    r.S = fn_(r.schedule, points);
    return r;
  }
  int calls = 0;

 private:
  Fn fn_;
};

/// Returns a scripted sequence of proposals, then repeats the current schedule.
class SequenceOperator final : public RevisionOperator {
 public:
  explicit SequenceOperator(std::vector<std::string> seq, std::vector<std::string> initials = {})
      : seq_(std::move(seq)), initials_(std::move(initials)) {}
  Proposal propose(const RevisionContext& ctx) override {
    seen_history.push_back(ctx.history.size());
    if (next_ < seq_.size()) {
      const auto& s = seq_[next_++];
      if (s == "!fail") throw OperatorFailure("scripted failure");
      return {parse_schedule(s), "scripted"};
    }
    return {ctx.current, "repeat"};
  }
  Proposal initial(const BaselineReference& ref, std::int64_t budget) override {
    if (init_next_ < initials_.size()) return {parse_schedule(initials_[init_next_++]), "scripted initial"};
    return RevisionOperator::initial(ref, budget);
  }
  std::vector<std::size_t> seen_history;

 private:
  std::vector<std::string> seq_, initials_;
  std::size_t next_ = 0, init_next_ = 0;
};

class FailingOperator final : public RevisionOperator {
 public:
  Proposal propose(const RevisionContext&) override { throw OperatorFailure("down"); }
  Proposal initial(const BaselineReference&, std::int64_t) override { throw OperatorFailure("down"); }
};

BaselineReference fake_reference(std::vector<std::pair<std::string, double>> scores) {
  BaselineReference ref;
  for (auto& [id, s] : scores) {
    ScoreResult r;
    r.S = s;
    ref.entries.push_back({id, r});
  }
  std::stable_sort(ref.entries.begin(), ref.entries.end(),
                   [](const auto& a, const auto& b) { return a.result.S > b.result.S; });
  return ref;
}

class Bowl final : public StochasticSystem {
 public:
  explicit Bowl(double centre) : centre_(centre) { domain_.bounds.assign(2, Interval{0, 1}); }
  const Domain& domain() const override { return domain_; }
  double evaluate(std::span<const double> x, Rng& rng) const override {
    double s = 0.0;
    for (double v : x) s += (v - centre_) * (v - centre_);
    return s + 0.02 * rng.normal();
  }

 private:
  double centre_;
  Domain domain_;
};

MetaDataset toy_dataset(std::size_t n) {
  MetaDataset ds;
  for (std::size_t i = 0; i < n; ++i) {
    EnsemblePoint p;
    p.w = {1.0};
    p.omega = 1.0 / static_cast<double>(n);
    p.kl = 0.01 * static_cast<double>(i);
    ds.points.push_back(p);
  }
  for (std::size_t i = 0; i < n; ++i) (i % 5 == 4 ? ds.test : (i % 5 == 3 ? ds.val : ds.train)).push_back(i);
  return ds;
}

std::vector<ScoringPoint> bowl_points(std::size_t n) {
  std::vector<ScoringPoint> pts;
  for (std::size_t i = 0; i < n; ++i) {
    pts.push_back({i, std::make_shared<Bowl>(0.1 + 0.8 * static_cast<double>(i) / static_cast<double>(n)), 1.0});
  }
  return pts;
}

}  // namespace

// ----------------------------------------------------------------- baselines

TEST(BaselineReference, OneBaselineOnePoint) {
  EnsembleScorer scorer(bowl_points(1), 1, 10, {}, 2);
  auto ref = collect_baseline_reference({"GA"}, scorer, {0}, 10);
  ASSERT_EQ(ref.entries.size(), 1u);
  EXPECT_EQ(ref.entries[0].algorithm, "GA");
  EXPECT_EQ(ref.entries[0].result.per_point.size(), 1u);
}

TEST(BaselineReference, SortedAndDeterministic) {
  StubScorer scorer([](const std::string& s, const auto&) { return s.rfind("PSO", 0) == 0 ? 0.9 : s.size() * 0.01; });
  auto ref = collect_baseline_reference(builtin_algorithms(), scorer, {0, 1}, 20);
  EXPECT_EQ(ref.best().algorithm, "PSO");
  for (std::size_t i = 1; i < ref.entries.size(); ++i) EXPECT_GE(ref.entries[i - 1].result.S, ref.entries[i].result.S);
  const auto summary = ref.summary();
  EXPECT_LT(summary.find("PSO"), summary.find("BO-EI"));

  auto run = [] {
    EnsembleScorer s(bowl_points(3), 7, 12, {}, 2);
    return collect_baseline_reference({"GA", "PSO", "BO-UCB"}, s, {0, 1, 2}, 12).summary();
  };
  EXPECT_EQ(run(), run());
  EXPECT_THROW(collect_baseline_reference({}, scorer, {0}, 10), InvalidInput);
}

// ----------------------------------------------------------------- init

TEST(InitSchedule, Contracts) {
  const auto ref = fake_reference({{"GA", 0.3}, {"BO-PI", 0.6}, {"PSO", 0.1}});
  SequenceOperator best({});
  EXPECT_EQ(init_schedule(ref, best, 100).to_string(), "BO-PI(100)");

  FailingOperator failing;
  EXPECT_EQ(init_schedule(ref, failing, 100).to_string(), "BO-PI(100)");

  SequenceOperator shortish({}, {"GA(40)->PSO(57)"});
  EXPECT_EQ(init_schedule(ref, shortish, 100).to_string(), "GA(40)->PSO(60)");
}

// ----------------------------------------------------------------- epochs

TEST(RunEpoch, NoOpOperatorKeepsSchedule) {
  StubScorer scorer([](const std::string&, const auto&) { return 0.4; });
  const auto ref = fake_reference({{"GA", 0.4}});
  RevisionHistory history{&ref, {}};
  SequenceOperator op({});
  const auto pi = parse_schedule("GA(50)->PSO(50)");
  auto out = run_epoch(pi, {0}, op, 6, 100, scorer, history, /*early_stop=*/false);
  EXPECT_EQ(out.schedule, pi);
  EXPECT_DOUBLE_EQ(out.S_train, 0.4);
  EXPECT_EQ(history.records.size(), 6u);
  EXPECT_EQ(history.size(), 7u);
  for (const auto& r : history.records) EXPECT_FALSE(r.accepted);
}

TEST(RunEpoch, AcceptsStrictImprovementOnly) {
  std::map<std::string, double> table{{"GA(100)", 0.3}, {"GA(50)->PSO(50)", 0.5}, {"PSO(100)", 0.5},
                                      {"BO-EI(100)", 0.2}, {"GA(20)->PSO(80)", 0.7}};
  StubScorer scorer([&](const std::string& s, const auto&) { return table.at(s); });
  const auto ref = fake_reference({{"GA", 0.3}});
  RevisionHistory history{&ref, {}};
  SequenceOperator op({"BO-EI(100)", "GA(50)->PSO(50)", "PSO(100)", "!fail", "GA(20)->PSO(80)", "GA(100)"});
  auto out = run_epoch(parse_schedule("GA(100)"), {0}, op, 6, 100, scorer, history, false);
  EXPECT_EQ(out.schedule.to_string(), "GA(20)->PSO(80)");
  EXPECT_DOUBLE_EQ(out.S_train, 0.7);
  ASSERT_EQ(history.records.size(), 6u);
  EXPECT_FALSE(history.records[0].accepted);
  EXPECT_TRUE(history.records[1].accepted);
  EXPECT_FALSE(history.records[2].accepted);  // equal score is not an improvement
  EXPECT_TRUE(history.records[3].failed);
  EXPECT_TRUE(history.records[4].accepted);
  for (std::size_t i = 1; i < out.accepted_scores.size(); ++i) {
    EXPECT_GE(out.accepted_scores[i], out.accepted_scores[i - 1]);
  }
  // The operator sees the history grow by one entry per round.
  EXPECT_EQ(op.seen_history, (std::vector<std::size_t>{1, 2, 3, 4, 5, 6}));
}

TEST(RunEpoch, EarlyStopAfterStaleRounds) {
  StubScorer scorer([](const std::string&, const auto&) { return 0.4; });
  const auto ref = fake_reference({{"GA", 0.4}});
  RevisionHistory history{&ref, {}};
  SequenceOperator op({});
  run_epoch(parse_schedule("GA(10)"), {0}, op, 10, 10, scorer, history, true, 3);
  EXPECT_EQ(history.records.size(), 3u);
}

TEST(RunEpoch, CandidatesAreRepairedBeforeScoring) {
  std::vector<std::string> seen;
  StubScorer scorer([&](const std::string& s, const auto&) {
    seen.push_back(s);
    return 0.1;
  });
  const auto ref = fake_reference({{"GA", 0.1}});
  RevisionHistory history{&ref, {}};
  SequenceOperator op({"GA(30)->GA(30)"});
  run_epoch(parse_schedule("PSO(100)"), {0}, op, 1, 100, scorer, history);
  EXPECT_EQ(seen.back(), "GA(30)->GA(70)");
}

// ----------------------------------------------------------------- learn_schedule

TEST(LearnSchedule, DegenerateLoopReturnsInitial) {
  StubScorer scorer([](const std::string& s, const auto&) { return s == "BO-UCB(100)" ? 0.8 : 0.2; });
  MetaConfig cfg;
  cfg.runs = 1;
  cfg.epochs = 1;
  cfg.revisions = 0;
  SequenceOperator op({});
  auto res = learn_schedule(toy_dataset(20), scorer, cfg, op);
  EXPECT_EQ(res.best.to_string(), "BO-UCB(100)");
  EXPECT_EQ(res.report.runs[0].initial_schedule, "BO-UCB(100)");
}

TEST(LearnSchedule, LargeGapLeavesAcceptedScheduleUnchanged) {
  const auto ds = toy_dataset(20);
  const std::set<std::size_t> test(ds.test.begin(), ds.test.end());
  // GA(50)->PSO(50) looks great on train and poor on validation.
  StubScorer scorer([&](const std::string& s, const std::vector<std::size_t>& pts) {
    if (s != "GA(50)->PSO(50)") return 0.3;
    return pts.size() > 4 ? 0.9 : 0.2;
  });
  MetaConfig cfg;
  cfg.runs = 1;
  cfg.epochs = 2;
  cfg.revisions = 2;
  cfg.baselines = {"GA"};
  SequenceOperator op({"GA(50)->PSO(50)"});
  std::vector<nlohmann::json> log;
  auto res = learn_schedule(ds, scorer, cfg, op, [&](const nlohmann::json& j) { log.push_back(j); });
  const auto& e0 = res.report.runs[0].epochs[0];
  EXPECT_EQ(e0.schedule, "GA(50)->PSO(50)");
  EXPECT_GT(std::abs(e0.S_train - e0.S_val), cfg.eps_gap);
  EXPECT_FALSE(e0.accepted);
  EXPECT_EQ(e0.accepted_schedule, "GA(100)");
  EXPECT_EQ(res.best.to_string(), "GA(100)");
  EXPECT_FALSE(log.empty());
}

TEST(LearnSchedule, BestTestRunWins) {
  StubScorer scorer([](const std::string& s, const auto&) { return s == "PSO(100)" ? 0.6 : 0.4; });
  MetaConfig cfg;
  cfg.runs = 2;
  cfg.epochs = 1;
  cfg.revisions = 0;
  SequenceOperator op({}, {"GA(100)", "PSO(100)"});
  auto res = learn_schedule(toy_dataset(20), scorer, cfg, op);
  EXPECT_EQ(res.report.best_run, 1u);
  EXPECT_EQ(res.best.to_string(), "PSO(100)");
  EXPECT_DOUBLE_EQ(res.report.best_S_test, 0.6);
}

TEST(LearnSchedule, FreshPartitionsAvoidTestPoints) {
  StubScorer scorer([](const std::string&, const auto&) { return 0.5; });
  MetaConfig cfg;
  cfg.runs = 3;
  cfg.epochs = 1;
  cfg.revisions = 1;
  SequenceOperator op({});
  const auto ds = toy_dataset(30);
  auto res = learn_schedule(ds, scorer, cfg, op);
  const std::set<std::size_t> test(ds.test.begin(), ds.test.end());
  for (const auto& run : res.report.runs) {
    EXPECT_FALSE(run.train.empty());
    EXPECT_FALSE(run.val.empty());
    std::set<std::size_t> seen;
    for (auto i : run.train) EXPECT_TRUE(seen.insert(i).second && !test.count(i));
    for (auto i : run.val) EXPECT_TRUE(seen.insert(i).second && !test.count(i));
    EXPECT_EQ(seen.size(), ds.train.size() + ds.val.size());
  }
}

TEST(LearnSchedule, ReproducibleWithScriptedOperator) {
  auto once = [] {
    auto ds = toy_dataset(10);
    EnsembleScorer scorer(bowl_points(10), 3, 12, {}, 2);
    MetaConfig cfg;
    cfg.runs = 2;
    cfg.epochs = 2;
    cfg.revisions = 3;
    cfg.budget = 12;
    cfg.baselines = {"GA", "PSO", "BO-EI"};
    ScriptedRevisionOperator op(ScriptedMove::Mixed, 11);
    std::ostringstream log;
    auto res = learn_schedule(ds, scorer, cfg, op, [&](const nlohmann::json& j) { log << j.dump() << '\n'; });
    return to_json(res.report).dump() + log.str();
  };
  EXPECT_EQ(once(), once());
}

// ----------------------------------------------------------------- scripted operator

TEST(ScriptedOperator, MoveDefinitions) {
  const auto s = parse_schedule("GA(50)->PSO(50)");
  EXPECT_EQ(shift_boundary(s, 0, 10).to_string(), "GA(60)->PSO(40)");
  EXPECT_EQ(shift_boundary(s, 0, -60).to_string(), "GA(1)->PSO(99)");
  EXPECT_EQ(swap_segments(s, 0, 1).to_string(), "PSO(50)->GA(50)");

  StubScorer scorer([](const std::string&, const auto&) { return 0.5; });
  const auto ref = fake_reference({{"BO-EI", 0.9}, {"GA", 0.5}});
  RevisionHistory history{&ref, {}};
  ScoreResult current;
  const auto one = parse_schedule("GA(100)");
  ScriptedRevisionOperator swap(ScriptedMove::SegmentSwap, 1);
  EXPECT_EQ(swap.propose({one, current, history, 100}).schedule, one);

  ScriptedRevisionOperator splice(ScriptedMove::BaselineSplice, 1);
  EXPECT_EQ(splice.propose({one, current, history, 100}).schedule.to_string(), "BO-EI(100)");
  const auto all_best = parse_schedule("BO-EI(100)");
  EXPECT_EQ(splice.propose({all_best, current, history, 100}).schedule.to_string(), "BO-EI(50)->GA(50)");
}

TEST(ScriptedOperator, SpliceTargetsLeastProductiveSegment) {
  // First segment does all the improving, the second none.
  ScoreResult current;
  PointResult p;
  for (int t = 0; t < 10; ++t) {
    p.trajectory.observations.push_back({{0.0}, t < 5 ? 10.0 - t : 7.0, t + 1});
  }
  current.per_point.push_back(p);
  const auto ref = fake_reference({{"BO-EI", 0.9}});
  RevisionHistory history{&ref, {}};
  ScriptedRevisionOperator splice(ScriptedMove::BaselineSplice, 1);
  const auto s = parse_schedule("GA(5)->PSO(5)");
  EXPECT_EQ(splice.propose({s, current, history, 10}).schedule.to_string(), "GA(5)->BO-EI(5)");
}

TEST(ScriptedOperator, OutputsAlwaysSumToBudget) {
  Rng rng(3);
  const auto ref = fake_reference({{"BO-EI", 0.9}, {"GA", 0.5}});
  RevisionHistory history{&ref, {}};
  ScoreResult current;
  ScriptedRevisionOperator op(ScriptedMove::Mixed, 2);
  const auto& ids = builtin_algorithms();
  for (int trial = 0; trial < 2000; ++trial) {
    const std::int64_t B = 1 + static_cast<std::int64_t>(rng.index(200));
    Schedule s;
    const std::size_t n = 1 + rng.index(4);
    for (std::size_t i = 0; i < n; ++i) s.segments.push_back({ids[rng.index(5)], 1 + static_cast<std::int64_t>(rng.index(60))});
    s = repair_budget(s, B);
    const auto out = op.propose({s, current, history, B}).schedule;
    ASSERT_NO_THROW(validate_schedule(out, B)) << s.to_string() << " -> " << out.to_string();
  }
}

// ----------------------------------------------------------------- language-model operator

namespace {
struct LlmFixture {
  BaselineReference ref = fake_reference({{"BO-EI", 0.6}, {"GA", 0.4}});
  RevisionHistory history{&ref, {}};
  Schedule current = parse_schedule("PSO(100)");
  ScoreResult result;
};
}  // namespace

TEST(LlmOperator, ParsesReply) {
  StubServer stub({{200, "BO-EI(50)->GA(50)"}});
  LlmRevisionOperator op(fast_config(stub.url()));
  LlmFixture f;
  EXPECT_EQ(op.propose({f.current, f.result, f.history, 100}).schedule.to_string(), "BO-EI(50)->GA(50)");
  const auto body = nlohmann::json::parse(stub.last_body);
  const auto prompt = body["messages"][1]["content"].get<std::string>();
  EXPECT_NE(prompt.find("PSO(100)"), std::string::npos);
  EXPECT_NE(prompt.find("BO-EI: S=0.6000"), std::string::npos);
}

TEST(LlmOperator, RepairsBudget) {
  StubServer stub({{200, "Try this:\n```\nGA(30)->GA(30)\n```"}});
  LlmRevisionOperator op(fast_config(stub.url()));
  LlmFixture f;
  EXPECT_EQ(op.propose({f.current, f.result, f.history, 100}).schedule.to_string(), "GA(30)->GA(70)");
}

TEST(LlmOperator, ProseReplyKeepsInput) {
  StubServer stub({{200, "I would keep exploring for a while longer."}});
  LlmRevisionOperator op(fast_config(stub.url()));
  LlmFixture f;
  EXPECT_EQ(op.propose({f.current, f.result, f.history, 100}).schedule, f.current);
  EXPECT_EQ(stub.hits(), 1);
}

TEST(LlmOperator, TransportErrorIsOperatorFailure) {
  StubServer stub({{503, "busy"}});
  auto cfg = fast_config(stub.url());
  cfg.retry.max_attempts = 2;
  LlmRevisionOperator op(cfg);
  LlmFixture f;
  EXPECT_THROW(op.propose({f.current, f.result, f.history, 100}), OperatorFailure);

  // Inside an epoch the failure only skips the round.
  StubScorer scorer([](const std::string&, const auto&) { return 0.5; });
  RevisionHistory history{&f.ref, {}};
  auto out = run_epoch(f.current, {0}, op, 2, 100, scorer, history, false);
  EXPECT_EQ(out.schedule, f.current);
  ASSERT_EQ(history.records.size(), 2u);
  EXPECT_TRUE(history.records[0].failed);
}

TEST(LlmOperator, ExtractScheduleTakesLastValidExpression) {
  EXPECT_EQ(extract_schedule("Currently PSO(100). I suggest bo-ei(40) -> pso(60).")->to_string(), "BO-EI(40)->PSO(60)");
  EXPECT_FALSE(extract_schedule("no schedule here").has_value());
  EXPECT_FALSE(extract_schedule("SIMPLEX(100)").has_value());
}
