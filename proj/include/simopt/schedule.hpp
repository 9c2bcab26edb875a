#pragma once

#include <algorithm>
#include <cctype>
#include <numeric>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include "simopt/algorithms.hpp"

namespace simopt {

struct Segment {
  std::string algorithm;
  std::int64_t budget = 0;

  bool operator==(const Segment&) const = default;
};

struct Schedule {
  std::vector<Segment> segments;

  std::int64_t total() const {
    std::int64_t t = 0;
    for (const auto& s : segments) t += s.budget;
    return t;
  }
  std::string to_string() const {
    std::string out;
    for (std::size_t i = 0; i < segments.size(); ++i) {
      if (i) out += "->";
      out += segments[i].algorithm + "(" + std::to_string(segments[i].budget) + ")";
    }
    return out;
  }
  bool operator==(const Schedule&) const = default;
};

/// Parses `ALGO(T)->ALGO(T)->...`. Ids are case-insensitive and must be registered.
inline Schedule parse_schedule(const std::string& text) {
  static const std::regex seg_re(R"(^\s*([A-Za-z][A-Za-z0-9_\-]*)\s*\(\s*(\d+)\s*\)\s*$)");
  Schedule s;
  std::size_t pos = 0;
  if (text.find_first_not_of(" \t\r\n") == std::string::npos) throw InvalidInput("empty schedule");
  while (pos <= text.size()) {
    const std::size_t arrow = text.find("->", pos);
    const std::string part = text.substr(pos, arrow == std::string::npos ? std::string::npos : arrow - pos);
    std::smatch m;
    if (!std::regex_match(part, m, seg_re)) throw InvalidInput("malformed schedule segment '" + part + "'");
    const std::string id = canonical_algorithm_id(m[1].str());
    if (!AlgorithmRegistry::instance().contains(id)) throw UnknownAlgorithm("unknown algorithm '" + m[1].str() + "'");
    std::int64_t budget = 0;
    try {
      budget = std::stoll(m[2].str());
    } catch (const std::out_of_range&) {
      throw InvalidInput("segment budget out of range in '" + part + "'");
    }
    s.segments.push_back({id, budget});
    if (arrow == std::string::npos) break;
    pos = arrow + 2;
  }
  return s;
}

inline std::string format_schedule(const Schedule& s) { return s.to_string(); }

/// Throws unless every segment has a registered algorithm, T_j >= 1 and the budgets sum to `budget`.
inline void validate_schedule(const Schedule& s, std::int64_t budget) {
  if (s.segments.empty()) throw InvalidInput("schedule has no segments");
  for (const auto& seg : s.segments) {
    if (!AlgorithmRegistry::instance().contains(seg.algorithm)) {
      throw UnknownAlgorithm("unknown algorithm '" + seg.algorithm + "'");
    }
    if (seg.budget < 1) throw InvalidInput("segment " + seg.algorithm + " has budget < 1");
  }
  if (s.total() != budget) {
    throw InvalidInput("schedule budgets sum to " + std::to_string(s.total()) + ", expected " + std::to_string(budget));
  }
}

/// Makes a schedule valid for `budget`: clamps segments to >= 1, drops
/// trailing segments when there are more than `budget`, then lets the last
/// segment absorb the residual or, when it cannot, rescales by largest
/// remainders.
inline Schedule repair_budget(Schedule s, std::int64_t budget) {
  if (budget < 1) throw InvalidInput("budget must be >= 1");
  if (s.segments.empty()) throw InvalidInput("schedule has no segments");
  if (static_cast<std::int64_t>(s.segments.size()) > budget) s.segments.resize(static_cast<std::size_t>(budget));
  for (auto& seg : s.segments) seg.budget = std::max<std::int64_t>(1, seg.budget);
  const std::int64_t residual = budget - s.total();
  if (residual == 0) return s;
  if (s.segments.back().budget + residual >= 1) {
    s.segments.back().budget += residual;
    return s;
  }
  // Largest-remainder rescale with one guaranteed unit per segment.
  const auto n = static_cast<std::int64_t>(s.segments.size());
  const double spare = static_cast<double>(budget - n);
  const double weight_sum = static_cast<double>(s.total() - n);
  std::vector<double> share(s.segments.size());
  std::vector<std::int64_t> base(s.segments.size());
  std::int64_t assigned = 0;
  for (std::size_t i = 0; i < s.segments.size(); ++i) {
    const double w = weight_sum > 0 ? static_cast<double>(s.segments[i].budget - 1) / weight_sum
                                    : 1.0 / static_cast<double>(n);
    share[i] = w * spare;
    base[i] = static_cast<std::int64_t>(std::floor(share[i]));
    assigned += base[i];
  }
  std::vector<std::size_t> order(s.segments.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return share[a] - static_cast<double>(base[a]) > share[b] - static_cast<double>(base[b]);
  });
  for (std::size_t k = 0; assigned < budget - n; ++k, ++assigned) ++base[order[k % order.size()]];
  for (std::size_t i = 0; i < s.segments.size(); ++i) s.segments[i].budget = 1 + base[i];
  return s;
}

enum class HandoffPolicy { Warm, Cold };

struct ScheduleRun {
  Trajectory trajectory;
  /// State handed to each segment (index j = what segment j started from).
  std::vector<AlgoState> handoffs;
  AlgoState final_state;
};

/// Runs the segments back to back on one trajectory and one budget ledger.
/// Segment j draws its algorithm stream from (seed, j); system noise depends
/// only on (seed, global step), so a single segment reproduces a standalone run.
inline ScheduleRun execute_schedule(const StochasticSystem& system, const Schedule& schedule, std::uint64_t seed,
                                    const AlgoConfigs& cfg = {}, HandoffPolicy policy = HandoffPolicy::Warm,
                                    bool keep_handoffs = false) {
  validate_schedule(schedule, schedule.total());
  ScheduleRun run;
  run.trajectory.seed = seed;
  run.trajectory.algorithm_tag = schedule.to_string();
  BudgetLedger ledger(schedule.total());
  AlgoState state;
  for (std::size_t j = 0; j < schedule.segments.size(); ++j) {
    const auto& seg = schedule.segments[j];
    if (policy == HandoffPolicy::Cold) state = AlgoState{};
    if (keep_handoffs) run.handoffs.push_back(state);
    const std::size_t begin = run.trajectory.size();
    run_segment(system, seg.algorithm, seg.budget, seed, j, run.trajectory, ledger, state, cfg);
    run.trajectory.segments.push_back({canonical_algorithm_id(seg.algorithm), begin, run.trajectory.size() - begin});
  }
  run.final_state = std::move(state);
  return run;
}

}  // namespace simopt
