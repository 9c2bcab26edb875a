#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <exception>
#include <map>
#include <mutex>
#include <numeric>
#include <span>
#include <thread>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "simopt/ensemble.hpp"
#include "simopt/schedule.hpp"

namespace simopt {

/// Empirical quantile with linear interpolation between order statistics
/// (position p·(n−1) in the sorted sample).
inline double linear_quantile(std::vector<double> v, double p) {
  if (v.empty()) throw InvalidInput("quantile of an empty sample");
  std::sort(v.begin(), v.end());
  const double pos = p * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return v[lo] + frac * (v[hi] - v[lo]);
}

/// Spread between the 90% and 10% quantiles of the observed values.
inline double robust_range(std::span<const double> y) {
  if (y.size() < 2) throw InvalidInput("robust range needs at least two observations");
  std::vector<double> v(y.begin(), y.end());
  return std::max(0.0, linear_quantile(v, 0.9) - linear_quantile(v, 0.1));
}

/// Normaliser for the improvement metrics; strictly positive.
inline double delta_star(std::span<const double> y, double y_ref, double eps) {
  if (!(eps > 0.0)) throw InvalidInput("eps must be positive");
  if (y.empty()) throw InvalidInput("empty trajectory");
  const double rho = y.size() >= 2 ? robust_range(y) : 0.0;
  return std::max(std::abs(y.front() - y_ref), rho) + eps;
}

struct MetricVector {
  double final_improvement = 0.0;  // I_final
  double anytime_auc = 0.0;        // AUC_any
  double monotonicity = 0.0;       // mu_raw
  double stability = 0.0;          // sigma_osc

  std::array<double, 4> as_array() const { return {final_improvement, anytime_auc, monotonicity, stability}; }
};

struct MetricWeights {
  std::array<double, 4> lambda{0.4, 0.3, 0.15, 0.15};

  void validate() const {
    double s = 0.0;
    for (double l : lambda) {
      if (!(l >= 0.0)) throw InvalidInput("metric weights must be non-negative");
      s += l;
    }
    if (std::abs(s - 1.0) > 1e-9) throw InvalidInput("metric weights must sum to 1");
  }
};

struct MetricOptions {
  double xi = 0.0;
  double eps = 1e-9;
};

namespace detail {
inline double unit_clamp(double v) { return std::isnan(v) ? 0.0 : std::clamp(v, 0.0, 1.0); }
}  // namespace detail

inline MetricVector compute_metrics(std::span<const double> y, double y_ref, const MetricOptions& opt = {}) {
  const std::size_t T = y.size();
  if (T < 2) throw InvalidInput("metrics need a trajectory of length >= 2");
  if (!(opt.xi >= 0.0)) throw InvalidInput("xi must be non-negative");
  const double delta = delta_star(y, y_ref, opt.eps);
  const std::vector<double> b = best_so_far(y);

  MetricVector u;
  u.final_improvement = detail::unit_clamp(std::max(0.0, b.front() - b.back()) / delta);

  double auc = 0.0, overshoot = 0.0;
  std::size_t monotone = 0;
  for (std::size_t t = 1; t < T; ++t) {
    auc += std::min(1.0, std::max(0.0, b.front() - b[t]) / delta);
    if (y[t] <= y[t - 1] + opt.xi) ++monotone;
    overshoot += std::max(0.0, y[t] - b[t - 1]) / delta;
  }
  const auto steps = static_cast<double>(T - 1);
  u.anytime_auc = detail::unit_clamp(auc / steps);
  u.monotonicity = detail::unit_clamp(static_cast<double>(monotone) / steps);
  u.stability = detail::unit_clamp(1.0 - std::min(1.0, overshoot / steps));
  return u;
}

inline double score(const MetricVector& u, const MetricWeights& w) {
  const auto a = u.as_array();
  double s = 0.0;
  for (std::size_t p = 0; p < 4; ++p) s += w.lambda[p] * a[p];
  return std::clamp(s, 0.0, 1.0);
}

inline nlohmann::json to_json(const MetricVector& u) {
  return nlohmann::json::array({u.final_improvement, u.anytime_auc, u.monotonicity, u.stability});
}

// ---------------------------------------------------------------------------
// Reference optima

/// One system to score a schedule on, together with its importance weight.
struct ScoringPoint {
  std::size_t id = 0;
  std::shared_ptr<const StochasticSystem> system;
  double omega = 1.0;
};

/// Builds the mixture systems for the given dataset indices.
inline std::vector<ScoringPoint> scoring_points(const OarSet& members, const MetaDataset& ds,
                                                const std::vector<std::size_t>& indices, const Domain& domain) {
  std::vector<ScoringPoint> out;
  for (auto i : indices) {
    const auto& pt = ds.points.at(i);
    out.push_back({i, std::make_shared<EnsembleSystem>(members, pt.w, domain), pt.omega});
  }
  return out;
}

inline std::uint64_t reference_seed(std::uint64_t seed, std::size_t point_id) {
  return Rng(seed).split("reference").split(static_cast<std::uint64_t>(point_id)).key();
}

inline std::uint64_t evaluation_seed(std::uint64_t seed, std::size_t point_id) {
  return Rng(seed).split("evaluation").split(static_cast<std::uint64_t>(point_id)).key();
}

/// Heavy-budget reference optima, computed once per (point, multiplier, seed).
class ReferenceCache {
 public:
  std::string algorithm = "BO-EI";
  AlgoConfigs configs;

  /// Final best-so-far of `algorithm` run for multiplier·B evaluations.
  double get(const ScoringPoint& pt, int multiplier, std::int64_t base_budget, std::uint64_t seed) {
    if (multiplier < 1) throw InvalidInput("reference multiplier must be >= 1");
    const Key key{pt.id, multiplier, seed};
    {
      std::lock_guard lock(mu_);
      if (auto it = cache_.find(key); it != cache_.end()) return it->second;
    }
    const auto run = run_algorithm(*pt.system, algorithm, static_cast<std::int64_t>(multiplier) * base_budget, seed,
                                   std::nullopt, configs);
    const double v = best_so_far(run.trajectory).back();
    std::lock_guard lock(mu_);
    cache_.emplace(key, v);
    return v;
  }

  std::optional<double> find(std::size_t id, int multiplier, std::uint64_t seed) const {
    std::lock_guard lock(mu_);
    auto it = cache_.find(Key{id, multiplier, seed});
    if (it == cache_.end()) return std::nullopt;
    return it->second;
  }

  void put(std::size_t id, int multiplier, std::uint64_t seed, double value) {
    std::lock_guard lock(mu_);
    cache_[Key{id, multiplier, seed}] = value;
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return cache_.size();
  }

  nlohmann::json to_json() const {
    std::lock_guard lock(mu_);
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& [k, v] : cache_) {
      arr.push_back({{"id", std::get<0>(k)}, {"multiplier", std::get<1>(k)}, {"seed", std::get<2>(k)}, {"value", v}});
    }
    return {{"algorithm", algorithm}, {"entries", arr}};
  }

  /// Adds the entries of a document produced by to_json().
  void load_json(const nlohmann::json& j) {
    try {
      algorithm = j.at("algorithm").get<std::string>();
      for (const auto& e : j.at("entries")) {
        put(e.at("id").get<std::size_t>(), e.at("multiplier").get<int>(), e.at("seed").get<std::uint64_t>(),
              e.at("value").get<double>());
      }
    } catch (const nlohmann::json::exception& ex) {
      throw SchemaError(std::string("reference cache: ") + ex.what());
    }
  }

 private:
  using Key = std::tuple<std::size_t, int, std::uint64_t>;
  mutable std::mutex mu_;
  std::map<Key, double> cache_;
};

/// Reference values for every point, computed up front (in parallel when `jobs` > 1).
using ReferenceMap = std::map<std::size_t, double>;

namespace detail {

/// Runs fn(i) for i in [0, n) on up to `jobs` threads; rethrows the first failure.
template <typename Fn>
void parallel_for(std::size_t n, unsigned jobs, Fn&& fn) {
  jobs = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(n)));
  if (jobs <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < jobs; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mu);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace detail

inline ReferenceMap compute_references(const std::vector<ScoringPoint>& points, ReferenceCache& cache, int multiplier,
                                       std::int64_t base_budget, std::uint64_t seed, unsigned jobs = 1) {
  std::vector<double> values(points.size());
  detail::parallel_for(points.size(), jobs, [&](std::size_t i) {
    values[i] = cache.get(points[i], multiplier, base_budget, reference_seed(seed, points[i].id));
  });
  ReferenceMap out;
  for (std::size_t i = 0; i < points.size(); ++i) out[points[i].id] = values[i];
  return out;
}

// ---------------------------------------------------------------------------
// Schedule scoring

struct PointResult {
  std::size_t id = 0;
  MetricVector u;
  double s = 0.0;
  double omega = 0.0;
  Trajectory trajectory;
};

struct ScoreResult {
  std::string schedule;
  double S = 0.0;
  std::vector<PointResult> per_point;  // sorted by id
};

struct ScoringOptions {
  MetricWeights weights;
  MetricOptions metric;
  AlgoConfigs algorithms;
  HandoffPolicy handoff = HandoffPolicy::Warm;
  unsigned jobs = 1;
};

/// Runs the schedule on every point and returns the importance-weighted mean score.
inline ScoreResult score_and_log(const Schedule& schedule, const std::vector<ScoringPoint>& points,
                                 const ReferenceMap& refs, std::uint64_t seed, const ScoringOptions& opt = {}) {
  if (points.empty()) throw InvalidInput("score_and_log needs at least one point");
  opt.weights.validate();
  for (const auto& p : points) {
    if (!refs.count(p.id)) throw MissingReference("no reference optimum for point " + std::to_string(p.id));
    if (!(p.omega >= 0.0)) throw InvalidInput("importance weights must be non-negative");
  }
  validate_schedule(schedule, schedule.total());

  std::vector<PointResult> results(points.size());
  detail::parallel_for(points.size(), opt.jobs, [&](std::size_t i) {
    const auto& p = points[i];
    auto run = execute_schedule(*p.system, schedule, evaluation_seed(seed, p.id), opt.algorithms, opt.handoff);
    auto& r = results[i];
    r.id = p.id;
    r.omega = p.omega;
    r.u = compute_metrics(run.trajectory.values(), refs.at(p.id), opt.metric);
    r.s = score(r.u, opt.weights);
    r.trajectory = std::move(run.trajectory);
  });
  std::stable_sort(results.begin(), results.end(), [](const auto& a, const auto& b) { return a.id < b.id; });

  ScoreResult out;
  out.schedule = schedule.to_string();
  double num = 0.0, den = 0.0;
  for (const auto& r : results) {
    num += r.omega * r.s;
    den += r.omega;
  }
  if (den > 0.0) {
    out.S = std::clamp(num / den, 0.0, 1.0);
  } else {
    // All weights zero: fall back to the plain mean.
    for (const auto& r : results) out.S += r.s;
    out.S /= static_cast<double>(results.size());
  }
  out.per_point = std::move(results);
  return out;
}

inline nlohmann::json to_json(const ScoreResult& r) {
  nlohmann::json pts = nlohmann::json::array();
  for (const auto& p : r.per_point) {
    pts.push_back({{"id", p.id}, {"u", to_json(p.u)}, {"s", p.s}, {"omega", p.omega}});
  }
  return {{"schedule", r.schedule}, {"S", r.S}, {"per_point", pts}};
}

}  // namespace simopt
