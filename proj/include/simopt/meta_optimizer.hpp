#pragma once

#include <algorithm>
#include <functional>
#include <iomanip>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "simopt/metrics.hpp"

namespace simopt {

// ---------------------------------------------------------------------------
// Scoring back ends

/// Scores a schedule on a subset of dataset points.
class ScheduleScorer {
 public:
  virtual ~ScheduleScorer() = default;
  virtual ScoreResult score(const Schedule& schedule, const std::vector<std::size_t>& points) = 0;
};

/// Scores on mixture systems built from an OAR ensemble; reference optima are
/// computed lazily and cached.
class EnsembleScorer final : public ScheduleScorer {
 public:
  EnsembleScorer(std::vector<ScoringPoint> points, std::uint64_t seed, std::int64_t budget, ScoringOptions opt = {},
                 int reference_multiplier = 10, std::shared_ptr<ReferenceCache> cache = nullptr)
      : seed_(seed),
        budget_(budget),
        opt_(std::move(opt)),
        multiplier_(reference_multiplier),
        cache_(cache ? std::move(cache) : std::make_shared<ReferenceCache>()) {
    for (auto& p : points) points_.emplace(p.id, std::move(p));
  }

  ScoreResult score(const Schedule& schedule, const std::vector<std::size_t>& ids) override {
    std::vector<ScoringPoint> subset;
    for (auto id : ids) {
      auto it = points_.find(id);
      if (it == points_.end()) throw InvalidInput("unknown dataset point " + std::to_string(id));
      subset.push_back(it->second);
    }
    ensure_references(subset);
    return score_and_log(schedule, subset, refs_, seed_, opt_);
  }

  const ReferenceMap& references() const { return refs_; }
  std::shared_ptr<ReferenceCache> cache() const { return cache_; }

 private:
  void ensure_references(const std::vector<ScoringPoint>& subset) {
    std::vector<ScoringPoint> missing;
    for (const auto& p : subset) {
      if (!refs_.count(p.id)) missing.push_back(p);
    }
    if (missing.empty()) return;
    for (auto& [id, v] : compute_references(missing, *cache_, multiplier_, budget_, seed_, opt_.jobs)) refs_[id] = v;
  }

  std::map<std::size_t, ScoringPoint> points_;
  ReferenceMap refs_;
  std::uint64_t seed_;
  std::int64_t budget_;
  ScoringOptions opt_;
  int multiplier_;
  std::shared_ptr<ReferenceCache> cache_;
};

// ---------------------------------------------------------------------------
// Baseline reference and history

struct BaselineEntry {
  std::string algorithm;
  ScoreResult result;
};

struct BaselineReference {
  std::vector<BaselineEntry> entries;  // sorted by S, best first

  const BaselineEntry& best() const {
    if (entries.empty()) throw InvalidInput("empty baseline reference");
    return entries.front();
  }

  std::string summary() const {
    std::ostringstream os;
    os << std::fixed << std::setprecision(4);
    os << "Baseline algorithms on the training ensembles (score S, higher is better; metrics are means of "
          "[final improvement, any-time AUC, monotonicity, stability]):\n";
    for (const auto& e : entries) {
      std::array<double, 4> mean{};
      for (const auto& p : e.result.per_point) {
        const auto a = p.u.as_array();
        for (std::size_t k = 0; k < 4; ++k) mean[k] += a[k];
      }
      const auto n = static_cast<double>(std::max<std::size_t>(1, e.result.per_point.size()));
      os << "  " << e.algorithm << ": S=" << e.result.S << " u=[" << mean[0] / n << ", " << mean[1] / n << ", "
         << mean[2] / n << ", " << mean[3] / n << "]\n";
    }
    return os.str();
  }
};

/// Runs every baseline as a one-segment schedule on `points`.
inline BaselineReference collect_baseline_reference(const std::vector<std::string>& baselines, ScheduleScorer& scorer,
                                                    const std::vector<std::size_t>& points, std::int64_t budget) {
  if (baselines.empty()) throw InvalidInput("no baseline algorithms given");
  BaselineReference ref;
  for (const auto& id : baselines) {
    Schedule s{{{canonical_algorithm_id(id), budget}}};
    ref.entries.push_back({canonical_algorithm_id(id), scorer.score(s, points)});
  }
  std::stable_sort(ref.entries.begin(), ref.entries.end(),
                   [](const auto& a, const auto& b) { return a.result.S > b.result.S; });
  return ref;
}

struct PointDigest {
  std::size_t id = 0;
  MetricVector u;
  double s = 0.0;
};

struct RevisionRecord {
  std::string schedule;
  std::vector<PointDigest> per_point;
  double score = 0.0;
  bool accepted = false;
  bool failed = false;
  std::string rationale;
};

struct RevisionHistory {
  const BaselineReference* baseline = nullptr;
  std::vector<RevisionRecord> records;

  /// Entries including the baseline block.
  std::size_t size() const { return 1 + records.size(); }

  std::string render() const {
    std::ostringstream os;
    if (baseline) os << baseline->summary();
    if (!records.empty()) os << "\nRevisions tried in this epoch:\n";
    os << std::fixed << std::setprecision(4);
    for (std::size_t i = 0; i < records.size(); ++i) {
      const auto& r = records[i];
      os << "  " << i + 1 << ". ";
      if (r.failed) {
        os << "(operator failed: " << r.rationale << ")\n";
        continue;
      }
      os << r.schedule << " S=" << r.score << (r.accepted ? " accepted" : " rejected") << '\n';
    }
    return os.str();
  }
};

inline std::vector<PointDigest> digest(const ScoreResult& r) {
  std::vector<PointDigest> out;
  for (const auto& p : r.per_point) out.push_back({p.id, p.u, p.s});
  return out;
}

/// How much of the total best-so-far improvement each segment achieved,
/// averaged over trajectories.
struct SegmentDigest {
  std::string algorithm;
  std::int64_t budget = 0;
  double improvement_share = 0.0;
  double overshoot_rate = 0.0;  // fraction of steps above the incumbent
};

inline std::vector<SegmentDigest> segment_digests(const Schedule& schedule, const ScoreResult& result) {
  std::vector<SegmentDigest> out;
  for (const auto& seg : schedule.segments) out.push_back({seg.algorithm, seg.budget, 0.0, 0.0});
  if (result.per_point.empty()) return out;
  for (const auto& p : result.per_point) {
    const auto y = p.trajectory.values();
    if (y.empty()) continue;
    const auto b = best_so_far(y);
    const double total = b.front() - b.back();
    std::size_t begin = 0;
    for (std::size_t j = 0; j < out.size() && begin < y.size(); ++j) {
      const std::size_t end = std::min(y.size(), begin + static_cast<std::size_t>(out[j].budget));
      const double start_b = begin == 0 ? y.front() : b[begin - 1];
      out[j].improvement_share += total > 0 ? (start_b - b[end - 1]) / total : 0.0;
      std::size_t over = 0;
      for (std::size_t t = std::max<std::size_t>(begin, 1); t < end; ++t) over += y[t] > b[t - 1] ? 1 : 0;
      out[j].overshoot_rate += static_cast<double>(over) / static_cast<double>(end - begin);
      begin = end;
    }
  }
  for (auto& d : out) {
    d.improvement_share /= static_cast<double>(result.per_point.size());
    d.overshoot_rate /= static_cast<double>(result.per_point.size());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Revision operators

struct RevisionContext {
  const Schedule& current;
  const ScoreResult& current_result;  // trajectories on the training points
  const RevisionHistory& history;
  std::int64_t budget;
};

struct Proposal {
  Schedule schedule;
  std::string rationale;
};

/// Proposes schedules. Throwing signals an operator failure for the round.
class RevisionOperator {
 public:
  virtual ~RevisionOperator() = default;
  virtual Proposal propose(const RevisionContext& ctx) = 0;
  /// First schedule of a run; the default picks the best baseline.
  virtual Proposal initial(const BaselineReference& ref, std::int64_t budget) {
    return {Schedule{{{ref.best().algorithm, budget}}}, "best baseline"};
  }
};

inline Schedule best_baseline_schedule(const BaselineReference& ref, std::int64_t budget) {
  return Schedule{{{ref.best().algorithm, budget}}};
}

/// Initial schedule from the operator, repaired to the budget; falls back to
/// the best baseline when the operator fails.
inline Schedule init_schedule(const BaselineReference& ref, RevisionOperator& op, std::int64_t budget) {
  try {
    return repair_budget(op.initial(ref, budget).schedule, budget);
  } catch (const std::exception& e) {
    spdlog::warn("initial proposal failed ({}); using the best baseline", e.what());
    return best_baseline_schedule(ref, budget);
  }
}

enum class ScriptedMove { SegmentSwap, BoundaryShift, BaselineSplice, Mixed };

inline ScriptedMove scripted_move_from_string(const std::string& s) {
  const auto c = canonical_algorithm_id(s);
  if (c == "SEGMENT-SWAP" || c == "SWAP") return ScriptedMove::SegmentSwap;
  if (c == "BOUNDARY-SHIFT" || c == "SHIFT") return ScriptedMove::BoundaryShift;
  if (c == "BEST-BASELINE-SPLICE" || c == "SPLICE") return ScriptedMove::BaselineSplice;
  if (c == "MIXED") return ScriptedMove::Mixed;
  throw InvalidInput("unknown scripted move '" + s + "'");
}

/// Moves boundary k (between segments k and k+1) by `delta` evaluations,
/// keeping both neighbours at >= 1.
inline Schedule shift_boundary(Schedule s, std::size_t k, std::int64_t delta) {
  if (k + 1 >= s.segments.size()) return s;
  auto& a = s.segments[k].budget;
  auto& b = s.segments[k + 1].budget;
  delta = std::clamp(delta, 1 - a, b - 1);
  a += delta;
  b -= delta;
  return s;
}

inline Schedule swap_segments(Schedule s, std::size_t i, std::size_t j) {
  if (i < s.segments.size() && j < s.segments.size()) std::swap(s.segments[i].algorithm, s.segments[j].algorithm);
  return s;
}

/// Deterministic neighbourhood search used as a stand-in for a language-model operator.
class ScriptedRevisionOperator final : public RevisionOperator {
 public:
  ScriptedRevisionOperator(ScriptedMove move, std::uint64_t seed) : move_(move), rng_(Rng(seed).split("scripted")) {}

  Proposal propose(const RevisionContext& ctx) override {
    ScriptedMove m = move_;
    if (m == ScriptedMove::Mixed) m = static_cast<ScriptedMove>(rng_.index(3));
    Proposal p;
    switch (m) {
      case ScriptedMove::SegmentSwap:
        p = swap(ctx);
        break;
      case ScriptedMove::BoundaryShift:
        p = shift(ctx);
        break;
      default:
        p = splice(ctx);
        break;
    }
    p.schedule = repair_budget(std::move(p.schedule), ctx.budget);
    return p;
  }

 private:
  Proposal swap(const RevisionContext& ctx) {
    const auto n = ctx.current.segments.size();
    if (n < 2) return {ctx.current, "segment swap: single segment, unchanged"};
    const std::size_t i = rng_.index(n);
    std::size_t j = rng_.index(n - 1);
    if (j >= i) ++j;
    return {swap_segments(ctx.current, i, j),
            "segment swap of positions " + std::to_string(i + 1) + " and " + std::to_string(j + 1)};
  }

  Proposal shift(const RevisionContext& ctx) {
    const auto n = ctx.current.segments.size();
    if (n < 2) return {ctx.current, "boundary shift: no boundary, unchanged"};
    const std::size_t k = rng_.index(n - 1);
    const auto step = std::max<std::int64_t>(1, static_cast<std::int64_t>(std::llround(0.1 * static_cast<double>(ctx.budget))));
    const std::int64_t delta = rng_.bernoulli(0.5) ? step : -step;
    return {shift_boundary(ctx.current, k, delta),
            "boundary " + std::to_string(k + 1) + " shifted by " + std::to_string(delta)};
  }

  /// Replaces the least productive segment's algorithm with the best
  /// baseline; when every segment already runs it, splits off the second
  /// half of the longest segment for the runner-up baseline.
  Proposal splice(const RevisionContext& ctx) {
    if (!ctx.history.baseline || ctx.history.baseline->entries.empty()) return {ctx.current, "no baselines"};
    const auto& entries = ctx.history.baseline->entries;
    const std::string best = entries.front().algorithm;
    const auto digests = segment_digests(ctx.current, ctx.current_result);
    std::optional<std::size_t> worst;
    double worst_rate = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < digests.size(); ++j) {
      if (digests[j].algorithm == best) continue;
      const double rate = digests[j].improvement_share / static_cast<double>(digests[j].budget);
      if (rate < worst_rate) {
        worst_rate = rate;
        worst = j;
      }
    }
    Schedule s = ctx.current;
    if (worst) {
      s.segments[*worst].algorithm = best;
      return {s, "segment " + std::to_string(*worst + 1) + " replaced by " + best};
    }
    if (entries.size() < 2) return {s, "splice: nothing to change"};
    auto longest = std::max_element(s.segments.begin(), s.segments.end(),
                                    [](const auto& a, const auto& b) { return a.budget < b.budget; });
    if (longest->budget < 2) return {s, "splice: segments too short"};
    const std::int64_t tail = longest->budget / 2;
    longest->budget -= tail;
    s.segments.insert(longest + 1, Segment{entries[1].algorithm, tail});
    return {s, "split longest segment, second half runs " + entries[1].algorithm};
  }

  ScriptedMove move_;
  Rng rng_;
};

/// Finds the last `ALGO(T)->...` expression in free text and parses it.
inline std::optional<Schedule> extract_schedule(const std::string& text) {
  static const std::regex re(
      R"([A-Za-z][A-Za-z0-9_\-]*\s*\(\s*\d+\s*\)(?:\s*->\s*[A-Za-z][A-Za-z0-9_\-]*\s*\(\s*\d+\s*\))*)");
  std::optional<Schedule> found;
  for (auto it = std::sregex_iterator(text.begin(), text.end(), re); it != std::sregex_iterator(); ++it) {
    try {
      found = parse_schedule(it->str());
    } catch (const Error&) {
    }
  }
  return found;
}

// ---------------------------------------------------------------------------
// Epochs and outer runs

struct MetaConfig {
  int runs = 2;            // R
  int epochs = 2;          // E
  int revisions = 5;       // T_rev
  double eps_gap = 0.05;
  std::int64_t budget = 100;
  std::vector<std::string> baselines = builtin_algorithms();
  bool early_stop = true;
  int early_stop_patience = 3;
  std::uint64_t seed = 0;
  int strata = 3;

  void validate() const {
    if (runs < 1 || epochs < 1) throw InvalidInput("runs and epochs must be >= 1");
    if (revisions < 0) throw InvalidInput("revisions must be >= 0");
    if (!(eps_gap > 0)) throw InvalidInput("eps_gap must be positive");
    if (budget < 1) throw InvalidInput("budget must be >= 1");
    if (baselines.empty()) throw InvalidInput("no baselines configured");
  }
};

/// Receives one JSON object per history event.
using HistorySink = std::function<void(const nlohmann::json&)>;

struct EpochOutcome {
  Schedule schedule;
  double S_train = 0.0;
  std::vector<double> accepted_scores;  // S after every round, starting with the input score
};

/// Intra-epoch revision loop with strict accept-if-better on the train split.
inline EpochOutcome run_epoch(const Schedule& pi_in, const std::vector<std::size_t>& train, RevisionOperator& op,
                              int revisions, std::int64_t budget, ScheduleScorer& scorer, RevisionHistory& history,
                              bool early_stop = true, int patience = 3, const HistorySink& sink = {},
                              const nlohmann::json& tag = nlohmann::json::object()) {
  EpochOutcome out;
  out.schedule = pi_in;
  ScoreResult current = scorer.score(pi_in, train);
  out.S_train = current.S;
  out.accepted_scores.push_back(out.S_train);
  int stale = 0;
  for (int round = 0; round < revisions; ++round) {
    RevisionRecord rec;
    nlohmann::json ev = tag;
    ev["round"] = round + 1;
    try {
      Proposal prop = op.propose({out.schedule, current, history, budget});
      Schedule cand = repair_budget(std::move(prop.schedule), budget);
      ScoreResult res = scorer.score(cand, train);
      rec.schedule = cand.to_string();
      rec.per_point = digest(res);
      rec.score = res.S;
      rec.rationale = prop.rationale;
      rec.accepted = res.S > out.S_train;
      if (rec.accepted) {
        out.schedule = std::move(cand);
        out.S_train = res.S;
        current = std::move(res);
        stale = 0;
      } else {
        ++stale;
      }
    } catch (const std::exception& e) {
      spdlog::warn("revision round {} skipped: {}", round + 1, e.what());
      rec.failed = true;
      rec.rationale = e.what();
      ++stale;
    }
    ev["schedule"] = rec.schedule;
    ev["S"] = rec.score;
    ev["accepted"] = rec.accepted;
    ev["failed"] = rec.failed;
    ev["rationale"] = rec.rationale;
    ev["S_current"] = out.S_train;
    nlohmann::json pts = nlohmann::json::array();
    for (const auto& p : rec.per_point) pts.push_back({{"id", p.id}, {"u", to_json(p.u)}, {"s", p.s}});
    ev["per_point"] = pts;
    if (sink) sink(ev);
    history.records.push_back(std::move(rec));
    out.accepted_scores.push_back(out.S_train);
    if (early_stop && stale >= patience) break;
  }
  return out;
}

struct EpochReport {
  int epoch = 0;
  std::string schedule;  // epoch-final candidate
  double S_train = 0.0;
  double S_val = 0.0;
  bool accepted = false;
  std::string accepted_schedule;  // pi_acc after the epoch
  std::vector<double> round_scores;
};

struct RunReport {
  int run = 0;
  std::vector<std::size_t> train, val;
  std::string initial_schedule;
  std::vector<std::pair<std::string, double>> baseline_scores;  // train S per baseline
  std::vector<EpochReport> epochs;
  std::string final_schedule;
  double S_test = 0.0;
};

struct MetaReport {
  std::vector<RunReport> runs;
  std::size_t best_run = 0;
  std::string best_schedule;
  double best_S_test = 0.0;
  std::vector<std::pair<std::string, double>> baseline_test_scores;
  std::vector<std::size_t> test;
};

inline nlohmann::json to_json(const MetaReport& r) {
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& run : r.runs) {
    nlohmann::json epochs = nlohmann::json::array();
    for (const auto& e : run.epochs) {
      epochs.push_back({{"epoch", e.epoch},
                        {"schedule", e.schedule},
                        {"S_train", e.S_train},
                        {"S_val", e.S_val},
                        {"accepted", e.accepted},
                        {"accepted_schedule", e.accepted_schedule},
                        {"round_scores", e.round_scores}});
    }
    nlohmann::json baselines = nlohmann::json::object();
    for (const auto& [k, v] : run.baseline_scores) baselines[k] = v;
    runs.push_back({{"run", run.run},
                    {"train", run.train},
                    {"val", run.val},
                    {"initial_schedule", run.initial_schedule},
                    {"baselines_train", baselines},
                    {"epochs", epochs},
                    {"final_schedule", run.final_schedule},
                    {"S_test", run.S_test}});
  }
  nlohmann::json base_test = nlohmann::json::object();
  for (const auto& [k, v] : r.baseline_test_scores) base_test[k] = v;
  return {{"runs", runs},
          {"best_run", r.best_run},
          {"best_schedule", r.best_schedule},
          {"best_S_test", r.best_S_test},
          {"baselines_test", base_test},
          {"test", r.test}};
}

/// Importance-aware two-way split of `pool` into train and validation.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_train_val(
    const MetaDataset& ds, const std::vector<std::size_t>& pool, int strata, Rng& rng) {
  std::vector<double> omega, kl;
  for (auto i : pool) {
    omega.push_back(ds.points.at(i).omega);
    kl.push_back(ds.points.at(i).kl);
  }
  const double r_train = ds.params.train_ratio / (ds.params.train_ratio + ds.params.val_ratio);
  std::vector<std::size_t> train, val;
  if (pool.size() < 2) {
    train = pool;
    return {train, val};
  }
  std::vector<double> cut;
  const int S = std::max(1, strata);
  for (int s = 1; s < S; ++s) cut.push_back(weighted_quantile(kl, omega, static_cast<double>(s) / S));
  std::vector<std::vector<std::size_t>> groups(static_cast<std::size_t>(S));
  for (std::size_t m = 0; m < pool.size(); ++m) {
    groups[static_cast<std::size_t>(std::lower_bound(cut.begin(), cut.end(), kl[m]) - cut.begin())].push_back(m);
  }
  for (std::size_t s = 0; s < groups.size(); ++s) {
    if (groups[s].empty()) continue;
    Rng srng = rng.split(static_cast<std::uint64_t>(s));
    const auto order = detail::weighted_order(groups[s], omega, srng);
    double W = 0.0;
    for (auto i : groups[s]) W += omega[i];
    auto parts = detail::greedy_partition(order, omega, {r_train * W, (1 - r_train) * W});
    if (groups[s].size() >= 2) {
      for (std::size_t p = 0; p < 2; ++p) {
        if (!parts[p].empty()) continue;
        auto& donor = parts[1 - p];
        parts[p].push_back(donor.back());
        donor.pop_back();
      }
    }
    for (auto i : parts[0]) train.push_back(pool[i]);
    for (auto i : parts[1]) val.push_back(pool[i]);
  }
  std::sort(train.begin(), train.end());
  std::sort(val.begin(), val.end());
  if (val.empty()) {
    val.push_back(train.back());
    train.pop_back();
  }
  if (train.empty()) {
    train.push_back(val.back());
    val.pop_back();
  }
  return {train, val};
}

struct LearnScheduleResult {
  Schedule best;
  MetaReport report;
};

/// R outer runs of E epochs each; returns the run-final schedule with the best test score.
inline LearnScheduleResult learn_schedule(const MetaDataset& ds, ScheduleScorer& scorer, const MetaConfig& cfg,
                                          RevisionOperator& op, const HistorySink& sink = {}) {
  cfg.validate();
  if (ds.test.empty()) throw InvalidInput("dataset has an empty test split");
  std::vector<std::size_t> pool;
  pool.insert(pool.end(), ds.train.begin(), ds.train.end());
  pool.insert(pool.end(), ds.val.begin(), ds.val.end());
  std::sort(pool.begin(), pool.end());
  if (pool.size() < 2) throw InvalidInput("need at least two non-test points");

  LearnScheduleResult out;
  out.report.test = ds.test;
  std::optional<double> best_test;
  for (int r = 0; r < cfg.runs; ++r) {
    RunReport run;
    run.run = r;
    Rng rng = Rng(cfg.seed).split("outer-run").split(static_cast<std::uint64_t>(r));
    std::tie(run.train, run.val) = split_train_val(ds, pool, cfg.strata, rng);
    if (run.train.empty() || run.val.empty()) throw InvalidInput("train and validation splits must be non-empty");
    const BaselineReference ref = collect_baseline_reference(cfg.baselines, scorer, run.train, cfg.budget);
    for (const auto& e : ref.entries) run.baseline_scores.emplace_back(e.algorithm, e.result.S);
    if (sink) sink({{"event", "baselines"}, {"run", r}, {"summary", ref.summary()}});

    Schedule pi_acc = init_schedule(ref, op, cfg.budget);
    run.initial_schedule = pi_acc.to_string();
    if (sink) sink({{"event", "init"}, {"run", r}, {"schedule", run.initial_schedule}});
    for (int e = 0; e < cfg.epochs; ++e) {
      RevisionHistory history{&ref, {}};
      EpochReport er;
      er.epoch = e;
      EpochOutcome outcome;
      const nlohmann::json tag{{"event", "revision"}, {"run", r}, {"epoch", e}};
      if (cfg.revisions > 0) {
        outcome = run_epoch(pi_acc, run.train, op, cfg.revisions, cfg.budget, scorer, history, cfg.early_stop,
                            cfg.early_stop_patience, sink, tag);
      } else {
        outcome.schedule = pi_acc;
        outcome.S_train = scorer.score(pi_acc, run.train).S;
        outcome.accepted_scores = {outcome.S_train};
      }
      er.schedule = outcome.schedule.to_string();
      er.S_train = outcome.S_train;
      er.S_val = scorer.score(outcome.schedule, run.val).S;
      er.accepted = std::abs(er.S_train - er.S_val) <= cfg.eps_gap;
      if (er.accepted) pi_acc = outcome.schedule;
      er.accepted_schedule = pi_acc.to_string();
      er.round_scores = outcome.accepted_scores;
      if (sink) {
        sink({{"event", "epoch"},
              {"run", r},
              {"epoch", e},
              {"schedule", er.schedule},
              {"S_train", er.S_train},
              {"S_val", er.S_val},
              {"accepted", er.accepted},
              {"pi_acc", er.accepted_schedule}});
      }
      run.epochs.push_back(std::move(er));
    }
    run.final_schedule = pi_acc.to_string();
    run.S_test = scorer.score(pi_acc, ds.test).S;
    if (!best_test || run.S_test > *best_test) {
      best_test = run.S_test;
      out.best = pi_acc;
      out.report.best_run = static_cast<std::size_t>(r);
    }
    out.report.runs.push_back(std::move(run));
  }
  out.report.best_schedule = out.best.to_string();
  out.report.best_S_test = *best_test;
  for (const auto& id : cfg.baselines) {
    Schedule s{{{canonical_algorithm_id(id), cfg.budget}}};
    out.report.baseline_test_scores.emplace_back(canonical_algorithm_id(id), scorer.score(s, ds.test).S);
  }
  return out;
}

}  // namespace simopt
