#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <memory>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "simopt/errors.hpp"
#include "simopt/rng.hpp"

namespace simopt {

struct Interval {
  double lo = 0.0;
  double hi = 1.0;
  double width() const { return hi - lo; }
};

/// Box-bounded decision space with optional integral coordinates.
struct Domain {
  std::vector<Interval> bounds;
  std::vector<bool> integral;  // empty means all continuous

  std::size_t dimension() const { return bounds.size(); }
  bool is_integral(std::size_t i) const { return i < integral.size() && integral[i]; }

  bool contains(std::span<const double> x) const {
    if (x.size() != bounds.size()) return false;
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (!(x[i] >= bounds[i].lo && x[i] <= bounds[i].hi)) return false;
    }
    return true;
  }

  /// Clip to bounds, then round integral coordinates to the nearest integer
  /// that still lies inside the bound.
  std::vector<double> project(std::span<const double> x) const {
    if (x.size() != bounds.size()) {
      throw InvalidInput("point has dimension " + std::to_string(x.size()) + ", domain " +
                         std::to_string(bounds.size()));
    }
    std::vector<double> out(x.begin(), x.end());
    for (std::size_t i = 0; i < out.size(); ++i) {
      double v = std::isfinite(out[i]) ? out[i] : 0.5 * (bounds[i].lo + bounds[i].hi);
      v = std::clamp(v, bounds[i].lo, bounds[i].hi);
      if (is_integral(i)) {
        v = std::round(v);
        if (v > bounds[i].hi) v = std::floor(bounds[i].hi);
        if (v < bounds[i].lo) v = std::ceil(bounds[i].lo);
      }
      out[i] = v;
    }
    return out;
  }

  std::vector<double> sample_uniform(Rng& rng) const {
    std::vector<double> x(bounds.size());
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.uniform(bounds[i].lo, bounds[i].hi);
    return x;
  }
};

struct Observation {
  std::vector<double> x;
  double y = 0.0;
  std::int64_t step = 1;
};

/// Contiguous run of one algorithm inside a trajectory.
struct SegmentSpan {
  std::string algorithm;
  std::size_t begin = 0;  // index into observations
  std::size_t length = 0;
};

struct Trajectory {
  std::vector<Observation> observations;
  std::uint64_t seed = 0;
  std::string algorithm_tag;
  std::vector<SegmentSpan> segments;

  std::size_t size() const { return observations.size(); }
  bool empty() const { return observations.empty(); }
  std::vector<double> values() const {
    std::vector<double> y;
    y.reserve(observations.size());
    for (const auto& o : observations) y.push_back(o.y);
    return y;
  }
};

/// Evaluation budget. `total` is the budget called B (or T) throughout.
struct BudgetLedger {
  std::int64_t total = 0;
  std::int64_t consumed = 0;

  explicit BudgetLedger(std::int64_t total_budget = 0) : total(total_budget) {}
  std::int64_t remaining() const { return total - consumed; }
  bool exhausted() const { return consumed >= total; }
};

/// A noisy, expensive-to-sample system to be minimised.
class StochasticSystem {
 public:
  virtual ~StochasticSystem() = default;
  virtual const Domain& domain() const = 0;
  /// Noisy objective at an in-bounds point. Deterministic given the stream.
  virtual double evaluate(std::span<const double> x, Rng& rng) const = 0;
  virtual std::string description() const { return {}; }
  std::size_t dimension() const { return domain().dimension(); }
};

/// Wraps a system to be maximised so that it can be minimised.
class NegatedSystem final : public StochasticSystem {
 public:
  explicit NegatedSystem(std::shared_ptr<const StochasticSystem> inner) : inner_(std::move(inner)) {}
  const Domain& domain() const override { return inner_->domain(); }
  double evaluate(std::span<const double> x, Rng& rng) const override {
    return -inner_->evaluate(x, rng);
  }
  std::string description() const override { return inner_->description(); }

 private:
  std::shared_ptr<const StochasticSystem> inner_;
};

/// Counts evaluations of the wrapped system.
class CountingSystem final : public StochasticSystem {
 public:
  explicit CountingSystem(std::shared_ptr<const StochasticSystem> inner) : inner_(std::move(inner)) {}
  const Domain& domain() const override { return inner_->domain(); }
  double evaluate(std::span<const double> x, Rng& rng) const override {
    count_.fetch_add(1, std::memory_order_relaxed);
    return inner_->evaluate(x, rng);
  }
  std::int64_t count() const { return count_.load(); }
  void reset() { count_ = 0; }

 private:
  std::shared_ptr<const StochasticSystem> inner_;
  mutable std::atomic<std::int64_t> count_{0};
};

/// Running minimum b_t = min_{s<=t} y_s.
inline std::vector<double> best_so_far(std::span<const double> y) {
  if (y.empty()) throw EmptyTrajectory("best-so-far of an empty sequence");
  std::vector<double> b(y.size());
  b[0] = y[0];
  for (std::size_t t = 1; t < y.size(); ++t) b[t] = std::min(b[t - 1], y[t]);
  return b;
}

inline std::vector<double> best_so_far(const Trajectory& traj) {
  if (traj.empty()) throw EmptyTrajectory("trajectory has no observations");
  const auto y = traj.values();
  return best_so_far(std::span<const double>(y));
}

/// Appends one evaluation and charges the ledger.
inline void record_step(Trajectory& traj, std::vector<double> x, double y, BudgetLedger& ledger) {
  if (ledger.consumed >= ledger.total) {
    throw BudgetExceeded("budget of " + std::to_string(ledger.total) + " evaluations already consumed");
  }
  Observation obs;
  obs.x = std::move(x);
  obs.y = y;
  obs.step = static_cast<std::int64_t>(traj.observations.size()) + 1;
  traj.observations.push_back(std::move(obs));
  ++ledger.consumed;
}

inline std::string format_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

/// Writes `step,x1,...,xd,y,best_so_far`.
inline void write_trajectory_csv(std::ostream& os, const Trajectory& traj) {
  const std::size_t d = traj.empty() ? 0 : traj.observations.front().x.size();
  os << "step";
  for (std::size_t i = 1; i <= d; ++i) os << ",x" << i;
  os << ",y,best_so_far\n";
  double best = 0.0;
  for (std::size_t t = 0; t < traj.observations.size(); ++t) {
    const auto& o = traj.observations[t];
    best = t == 0 ? o.y : std::min(best, o.y);
    os << o.step;
    for (double v : o.x) os << ',' << format_number(v);
    os << ',' << format_number(o.y) << ',' << format_number(best) << '\n';
  }
}

}  // namespace simopt
