#pragma once

#include <algorithm>
#include <cctype>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <spdlog/spdlog.h>

#include "simopt/gp.hpp"
#include "simopt/system.hpp"

namespace simopt {

struct Individual {
  std::vector<double> x;
  double fitness = 0.0;
};

struct Particle {
  std::vector<double> x;
  std::vector<double> v;
  std::vector<double> pbest_x;
  double pbest_y = std::numeric_limits<double>::infinity();
  bool evaluated = false;
};

/// Everything a successor segment may reuse: all evaluations so far plus the
/// population / swarm of the last GA / PSO segment.
struct AlgoState {
  std::size_t dimension = 0;
  std::vector<Observation> history;
  std::vector<Individual> population;
  std::vector<Particle> swarm;
  std::vector<double> gbest_x;
  double gbest_y = std::numeric_limits<double>::infinity();
  std::size_t pso_cursor = 0;
  std::optional<GpHyper> gp_hyper;
  std::string family;

  const Observation* incumbent() const {
    const Observation* best = nullptr;
    for (const auto& o : history) {
      if (!best || o.y < best->y) best = &o;
    }
    return best;
  }

  /// History sorted by value, best first (stable in evaluation order).
  std::vector<Observation> best_points(std::size_t k) const {
    std::vector<Observation> sorted = history;
    std::stable_sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.y < b.y; });
    if (sorted.size() > k) sorted.resize(k);
    return sorted;
  }
};

/// Evaluation gateway handed to an algorithm for one segment: projects the
/// proposal, draws the system noise stream for the global step, records the
/// observation and charges the budget.
class EvalSession {
 public:
  EvalSession(const StochasticSystem& system, Trajectory& traj, BudgetLedger& ledger, AlgoState& state,
              std::int64_t segment_budget, const Rng& system_root)
      : system_(system), traj_(traj), ledger_(ledger), state_(state), limit_(segment_budget), root_(system_root) {}

  const Domain& domain() const { return system_.domain(); }
  std::size_t dimension() const { return system_.dimension(); }
  std::int64_t remaining() const { return std::min(limit_ - used_, ledger_.remaining()); }
  std::int64_t used() const { return used_; }
  AlgoState& state() { return state_; }

  /// Evaluates the projected point, or returns nullopt when the segment budget is spent.
  std::optional<double> evaluate(std::span<const double> x) {
    if (remaining() <= 0) return std::nullopt;
    std::vector<double> px = system_.domain().project(x);
    const auto t = static_cast<std::uint64_t>(traj_.size());
    Rng noise = root_.split(t);
    const double y = system_.evaluate(px, noise);
    record_step(traj_, px, y, ledger_);
    state_.history.push_back(traj_.observations.back());
    ++used_;
    return y;
  }

  const std::vector<double>& last_x() const { return traj_.observations.back().x; }

 private:
  const StochasticSystem& system_;
  Trajectory& traj_;
  BudgetLedger& ledger_;
  AlgoState& state_;
  std::int64_t limit_;
  std::int64_t used_ = 0;
  Rng root_;
};

class Algorithm {
 public:
  virtual ~Algorithm() = default;
  virtual std::string id() const = 0;
  /// Spends the session's whole budget.
  virtual void run(EvalSession& session, Rng& rng) = 0;
};

// ---------------------------------------------------------------------------
// Bayesian optimisation

struct BoConfig {
  AcquisitionKind kind = AcquisitionKind::EI;
  AcquisitionParams acq;
  int n_init = 5;
  int n_candidates = 500;
  double perturbation = 0.01;  // of the range, around evaluated points
  int refit_every = 5;         // minimum hyperparameter refit interval (evaluations)
  double refit_growth = 0.1;   // the interval also grows to this fraction of the history size
  std::size_t max_gp_points = 100;
  GpFitOptions gp;
};

inline Eigen::MatrixXd to_unit(const Domain& d, const std::vector<std::vector<double>>& xs) {
  Eigen::MatrixXd U(static_cast<Eigen::Index>(xs.size()), static_cast<Eigen::Index>(d.dimension()));
  for (std::size_t i = 0; i < xs.size(); ++i) {
    for (std::size_t k = 0; k < d.dimension(); ++k) {
      const double w = d.bounds[k].width();
      U(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = w > 0 ? (xs[i][k] - d.bounds[k].lo) / w : 0.5;
    }
  }
  return U;
}

inline std::vector<double> from_unit(const Domain& d, const Eigen::RowVectorXd& u) {
  std::vector<double> x(d.dimension());
  for (std::size_t k = 0; k < x.size(); ++k) {
    x[k] = d.bounds[k].lo + std::clamp(u(static_cast<Eigen::Index>(k)), 0.0, 1.0) * d.bounds[k].width();
  }
  return x;
}

/// Fits a GP (in unit-cube coordinates) to a history of observations.
inline GaussianProcess fit_history_gp(const Domain& dom, const std::vector<Observation>& history, const GpHyper& init,
                                      const GpFitOptions& opt, Rng* rng) {
  std::vector<std::vector<double>> xs;
  Eigen::VectorXd y(static_cast<Eigen::Index>(history.size()));
  for (std::size_t i = 0; i < history.size(); ++i) {
    xs.push_back(history[i].x);
    y(static_cast<Eigen::Index>(i)) = history[i].y;
  }
  return GaussianProcess::fit(to_unit(dom, xs), y, init, opt, rng);
}

/// Training window for the surrogate: everything while the history is short,
/// otherwise the best half of the cap plus the most recent observations.
inline std::vector<Observation> gp_window(const std::vector<Observation>& history, std::size_t cap) {
  if (cap == 0 || history.size() <= cap) return history;
  std::vector<std::size_t> order(history.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return history[a].y < history[b].y; });
  std::vector<bool> keep(history.size(), false);
  for (std::size_t i = 0; i < cap / 2; ++i) keep[order[i]] = true;
  std::size_t kept = cap / 2;
  for (std::size_t i = history.size(); i-- > 0 && kept < cap;) {
    if (!keep[i]) {
      keep[i] = true;
      ++kept;
    }
  }
  std::vector<Observation> out;
  out.reserve(cap);
  for (std::size_t i = 0; i < history.size(); ++i) {
    if (keep[i]) out.push_back(history[i]);
  }
  return out;
}

/// Acquisition argmax over `n_candidates` uniform points plus every evaluated
/// point perturbed by `perturbation` of the range. Ties go to the lowest index.
inline std::vector<double> propose_next_bo(const GaussianProcess& gp, const Domain& dom,
                                           const std::vector<Observation>& history, AcquisitionKind kind,
                                           const AcquisitionParams& acq, int n_candidates, double perturbation,
                                           Rng& rng) {
  if (n_candidates < 1) throw InvalidInput("n_candidates must be >= 1");
  const auto d = static_cast<Eigen::Index>(dom.dimension());
  const auto n_hist = static_cast<Eigen::Index>(history.size());
  Eigen::MatrixXd C(n_candidates + n_hist, d);
  for (Eigen::Index i = 0; i < n_candidates; ++i) {
    for (Eigen::Index k = 0; k < d; ++k) C(i, k) = rng.uniform();
  }
  if (n_hist > 0) {
    std::vector<std::vector<double>> xs;
    for (const auto& o : history) xs.push_back(o.x);
    const Eigen::MatrixXd H = to_unit(dom, xs);
    for (Eigen::Index i = 0; i < n_hist; ++i) {
      for (Eigen::Index k = 0; k < d; ++k) {
        C(n_candidates + i, k) = std::clamp(H(i, k) + rng.normal(0.0, perturbation), 0.0, 1.0);
      }
    }
  }
  double best_y = std::numeric_limits<double>::infinity();
  for (const auto& o : history) best_y = std::min(best_y, o.y);
  const auto pred = gp.predict(C);
  // Score in standardised units so xi and kappa are scale-free.
  const double scale = gp.y_scale();
  const double best_std = std::isfinite(best_y) ? (best_y - gp.y_mean()) / scale : 0.0;
  Eigen::Index arg = 0;
  double top = -std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < C.rows(); ++i) {
    const double mu = (pred.mean(i) - gp.y_mean()) / scale;
    const double a = acquisition(mu, pred.sd(i) / scale, best_std, kind, acq);
    if (a > top) {
      top = a;
      arg = i;
    }
  }
  return from_unit(dom, C.row(arg));
}

class BayesianOptimizer final : public Algorithm {
 public:
  BayesianOptimizer(std::string id, BoConfig cfg) : id_(std::move(id)), cfg_(std::move(cfg)) {}
  std::string id() const override { return id_; }

  void run(EvalSession& s, Rng& rng) override {
    auto& st = s.state();
    const auto& dom = s.domain();
    while (s.remaining() > 0 && static_cast<int>(st.history.size()) < cfg_.n_init) {
      s.evaluate(dom.sample_uniform(rng));
    }
    GpHyper hyper = st.gp_hyper.value_or(GpHyper{std::vector<double>(dom.dimension(), 0.3), 1.0, 1e-4});
    std::size_t fitted_at = 0;
    bool have_fit = false;
    while (s.remaining() > 0) {
      GpFitOptions opt = cfg_.gp;
      const auto interval = std::max(static_cast<std::size_t>(std::max(cfg_.refit_every, 1)),
                                     static_cast<std::size_t>(std::ceil(cfg_.refit_growth * static_cast<double>(fitted_at))));
      const bool refit = !have_fit || st.history.size() >= fitted_at + interval;
      opt.fit_hyper = cfg_.gp.fit_hyper && refit;
      Rng fit_rng = rng.split(rng());
      const auto window = gp_window(st.history, cfg_.max_gp_points);
      const auto gp = fit_history_gp(dom, window, hyper, opt, &fit_rng);
      if (refit) {
        hyper = gp.hyper();
        fitted_at = st.history.size();
        have_fit = true;
      }
      s.evaluate(
          propose_next_bo(gp, dom, window, cfg_.kind, cfg_.acq, cfg_.n_candidates, cfg_.perturbation, rng));
    }
    st.gp_hyper = hyper;
  }

 private:
  std::string id_;
  BoConfig cfg_;
};

// ---------------------------------------------------------------------------
// Genetic algorithm

struct GaConfig {
  int population = 10;
  int tournament = 3;
  double crossover_rate = 0.7;
  double mutation_rate = 0.2;
  double mutation_step = 0.1;  // fraction of each variable's range
};

namespace detail {

inline const Individual& tournament_pick(const std::vector<Individual>& pop, int k, Rng& rng) {
  const Individual* best = nullptr;
  for (int i = 0; i < k; ++i) {
    const auto& c = pop[rng.index(pop.size())];
    if (!best || c.fitness < best->fitness) best = &c;
  }
  return *best;
}

inline std::size_t best_index(const std::vector<Individual>& pop) {
  std::size_t b = 0;
  for (std::size_t i = 1; i < pop.size(); ++i) {
    if (pop[i].fitness < pop[b].fitness) b = i;
  }
  return b;
}

}  // namespace detail

/// Population for a GA segment: kept if the state already carries a
/// compatible one, otherwise the best prior points topped up with uniform
/// draws (each of which costs an evaluation).
inline void ga_initialize(EvalSession& s, const GaConfig& cfg, Rng& rng) {
  auto& st = s.state();
  if (st.family == "GA" && static_cast<int>(st.population.size()) == cfg.population) return;
  st.population.clear();
  for (const auto& o : st.best_points(static_cast<std::size_t>(cfg.population))) st.population.push_back({o.x, o.y});
  while (static_cast<int>(st.population.size()) < cfg.population) {
    const auto y = s.evaluate(s.domain().sample_uniform(rng));
    if (!y) break;
    st.population.push_back({s.last_x(), *y});
  }
}

/// One generation: tournament selection, uniform crossover, Gaussian mutation,
/// clipping, evaluation and elitist replacement. When the budget runs out
/// mid-generation the missing slots keep the best old individuals.
inline void ga_step(EvalSession& s, const GaConfig& cfg, Rng& rng) {
  auto& pop = s.state().population;
  if (pop.empty()) return;
  const auto& dom = s.domain();
  const std::size_t size = pop.size();
  std::vector<Individual> next;
  next.push_back(pop[detail::best_index(pop)]);
  while (next.size() < size && s.remaining() > 0) {
    const auto& a = detail::tournament_pick(pop, cfg.tournament, rng);
    const auto& b = detail::tournament_pick(pop, cfg.tournament, rng);
    std::vector<double> child = a.x;
    if (rng.bernoulli(cfg.crossover_rate)) {
      for (std::size_t k = 0; k < child.size(); ++k) {
        if (rng.bernoulli(0.5)) child[k] = b.x[k];
      }
    }
    for (std::size_t k = 0; k < child.size(); ++k) {
      if (rng.bernoulli(cfg.mutation_rate)) child[k] += rng.normal(0.0, cfg.mutation_step * dom.bounds[k].width());
      child[k] = std::clamp(child[k], dom.bounds[k].lo, dom.bounds[k].hi);
    }
    const auto y = s.evaluate(child);
    if (!y) break;
    next.push_back({s.last_x(), *y});
  }
  if (next.size() < size) {
    std::vector<Individual> old = pop;
    std::stable_sort(old.begin(), old.end(), [](const auto& p, const auto& q) { return p.fitness < q.fitness; });
    for (std::size_t i = 1; next.size() < size && i < old.size(); ++i) next.push_back(old[i]);
  }
  pop = std::move(next);
}

class GeneticAlgorithm final : public Algorithm {
 public:
  explicit GeneticAlgorithm(GaConfig cfg = {}) : cfg_(cfg) {}
  std::string id() const override { return "GA"; }
  void run(EvalSession& s, Rng& rng) override {
    ga_initialize(s, cfg_, rng);
    while (s.remaining() > 0) ga_step(s, cfg_, rng);
  }

 private:
  GaConfig cfg_;
};

// ---------------------------------------------------------------------------
// Particle swarm

struct PsoConfig {
  int particles = 5;
  double inertia = 0.7;
  double c1 = 1.5;
  double c2 = 1.5;
  double init_velocity = 0.1;  // fraction of range
};

/// Swarm for a PSO segment: kept if compatible, otherwise one particle at the
/// incumbent (already evaluated) and the rest uniform (evaluated lazily).
inline void pso_initialize(AlgoState& st, const Domain& dom, const PsoConfig& cfg, Rng& rng) {
  if (st.family == "PSO" && static_cast<int>(st.swarm.size()) == cfg.particles) return;
  st.swarm.clear();
  st.pso_cursor = 0;
  st.gbest_y = std::numeric_limits<double>::infinity();
  st.gbest_x.clear();
  const Observation* inc = st.incumbent();
  if (inc) {
    st.gbest_x = inc->x;
    st.gbest_y = inc->y;
  }
  for (int i = 0; i < cfg.particles; ++i) {
    Particle p;
    p.x = (i == 0 && inc) ? inc->x : dom.sample_uniform(rng);
    p.v.resize(p.x.size());
    for (std::size_t k = 0; k < p.v.size(); ++k) {
      const double w = cfg.init_velocity * dom.bounds[k].width();
      p.v[k] = rng.uniform(-w, w);
    }
    if (i == 0 && inc) {
      p.pbest_x = inc->x;
      p.pbest_y = inc->y;
      p.evaluated = true;
    }
    st.swarm.push_back(std::move(p));
  }
  // Start with particles that still need a first evaluation.
  if (inc && cfg.particles > 1) st.pso_cursor = 1;
}

/// Moves (or first evaluates) exactly one particle; consumes one evaluation.
inline void pso_step(EvalSession& s, const PsoConfig& cfg, Rng& rng) {
  auto& st = s.state();
  if (st.swarm.empty() || s.remaining() <= 0) return;
  const auto& dom = s.domain();
  Particle& p = st.swarm[st.pso_cursor];
  if (p.evaluated) {
    for (std::size_t k = 0; k < p.x.size(); ++k) {
      const double r1 = rng.uniform(), r2 = rng.uniform();
      const double g = st.gbest_x.empty() ? p.pbest_x[k] : st.gbest_x[k];
      double v = cfg.inertia * p.v[k] + cfg.c1 * r1 * (p.pbest_x[k] - p.x[k]) + cfg.c2 * r2 * (g - p.x[k]);
      const double vmax = dom.bounds[k].width();
      v = std::clamp(v, -vmax, vmax);
      p.v[k] = v;
      p.x[k] = std::clamp(p.x[k] + v, dom.bounds[k].lo, dom.bounds[k].hi);
    }
  }
  const auto y = s.evaluate(p.x);
  if (!y) return;
  p.evaluated = true;
  if (*y < p.pbest_y) {
    p.pbest_y = *y;
    p.pbest_x = p.x;
  }
  if (*y < st.gbest_y) {
    st.gbest_y = *y;
    st.gbest_x = p.x;
  }
  st.pso_cursor = (st.pso_cursor + 1) % st.swarm.size();
}

class ParticleSwarm final : public Algorithm {
 public:
  explicit ParticleSwarm(PsoConfig cfg = {}) : cfg_(cfg) {}
  std::string id() const override { return "PSO"; }
  void run(EvalSession& s, Rng& rng) override {
    pso_initialize(s.state(), s.domain(), cfg_, rng);
    while (s.remaining() > 0) pso_step(s, cfg_, rng);
  }

 private:
  PsoConfig cfg_;
};

// ---------------------------------------------------------------------------
// Registry

struct AlgoConfigs {
  BoConfig bo;
  GaConfig ga;
  PsoConfig pso;
};

using AlgorithmFactory = std::function<std::unique_ptr<Algorithm>(const AlgoConfigs&)>;

inline std::string canonical_algorithm_id(std::string id) {
  std::transform(id.begin(), id.end(), id.begin(), [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  return id;
}

class AlgorithmRegistry {
 public:
  static AlgorithmRegistry& instance() {
    static AlgorithmRegistry reg;
    return reg;
  }

  void add(const std::string& id, AlgorithmFactory f) {
    std::lock_guard lock(mu_);
    factories_[canonical_algorithm_id(id)] = std::move(f);
  }
  bool contains(const std::string& id) const {
    std::lock_guard lock(mu_);
    return factories_.count(canonical_algorithm_id(id)) > 0;
  }
  std::unique_ptr<Algorithm> create(const std::string& id, const AlgoConfigs& cfg) const {
    AlgorithmFactory f;
    {
      std::lock_guard lock(mu_);
      auto it = factories_.find(canonical_algorithm_id(id));
      if (it == factories_.end()) throw UnknownAlgorithm("no algorithm registered as '" + id + "'");
      f = it->second;
    }
    return f(cfg);
  }
  std::vector<std::string> ids() const {
    std::lock_guard lock(mu_);
    std::vector<std::string> out;
    for (const auto& [k, v] : factories_) out.push_back(k);
    return out;
  }

 private:
  AlgorithmRegistry() {
    auto bo = [](AcquisitionKind kind, std::string id) {
      return [kind, id](const AlgoConfigs& c) {
        BoConfig b = c.bo;
        b.kind = kind;
        return std::unique_ptr<Algorithm>(std::make_unique<BayesianOptimizer>(id, b));
      };
    };
    factories_["BO-EI"] = bo(AcquisitionKind::EI, "BO-EI");
    factories_["BO-UCB"] = bo(AcquisitionKind::UCB, "BO-UCB");
    factories_["BO-PI"] = bo(AcquisitionKind::PI, "BO-PI");
    factories_["GA"] = [](const AlgoConfigs& c) { return std::unique_ptr<Algorithm>(std::make_unique<GeneticAlgorithm>(c.ga)); };
    factories_["PSO"] = [](const AlgoConfigs& c) { return std::unique_ptr<Algorithm>(std::make_unique<ParticleSwarm>(c.pso)); };
  }

  mutable std::mutex mu_;
  std::map<std::string, AlgorithmFactory> factories_;
};

/// Registers a user algorithm under `id` (case-insensitive).
inline void register_algorithm(const std::string& id, AlgorithmFactory f) {
  AlgorithmRegistry::instance().add(id, std::move(f));
}

inline const std::vector<std::string>& builtin_algorithms() {
  static const std::vector<std::string> ids{"BO-EI", "BO-UCB", "BO-PI", "GA", "PSO"};
  return ids;
}

// ---------------------------------------------------------------------------
// Driver

inline Rng system_stream(std::uint64_t seed) { return Rng(seed).split("system"); }
inline Rng segment_stream(std::uint64_t seed, std::size_t segment) {
  return Rng(seed).split("algorithm").split(static_cast<std::uint64_t>(segment));
}

inline void check_state(const AlgoState& st, const Domain& dom) {
  if (st.dimension != 0 && st.dimension != dom.dimension()) {
    throw StateMismatch("state has dimension " + std::to_string(st.dimension) + ", system " +
                        std::to_string(dom.dimension()));
  }
  for (const auto& o : st.history) {
    if (o.x.size() != dom.dimension()) throw StateMismatch("state history point has the wrong dimension");
  }
  for (const auto& ind : st.population) {
    if (ind.x.size() != dom.dimension()) throw StateMismatch("state population has the wrong dimension");
  }
  for (const auto& p : st.swarm) {
    if (p.x.size() != dom.dimension()) throw StateMismatch("state swarm has the wrong dimension");
  }
}

/// Runs one segment into `traj`, continuing the global step count.
inline void run_segment(const StochasticSystem& system, const std::string& algo_id, std::int64_t budget,
                        std::uint64_t seed, std::size_t segment, Trajectory& traj, BudgetLedger& ledger,
                        AlgoState& state, const AlgoConfigs& cfg = {}) {
  if (budget < 1) throw InvalidInput("segment budget must be >= 1");
  check_state(state, system.domain());
  state.dimension = system.dimension();
  auto algo = AlgorithmRegistry::instance().create(algo_id, cfg);
  EvalSession session(system, traj, ledger, state, budget, system_stream(seed));
  Rng rng = segment_stream(seed, segment);
  algo->run(session, rng);
  if (session.remaining() > 0) {
    spdlog::warn("algorithm {} left {} evaluations unused; spending them uniformly", algo_id, session.remaining());
    while (session.remaining() > 0) session.evaluate(system.domain().sample_uniform(rng));
  }
  state.family = canonical_algorithm_id(algo_id);
}

struct RunResult {
  Trajectory trajectory;
  AlgoState state;
};

/// Standalone run of one algorithm for `budget` evaluations.
inline RunResult run_algorithm(const StochasticSystem& system, const std::string& algo_id, std::int64_t budget,
                               std::uint64_t seed, std::optional<AlgoState> init = std::nullopt,
                               const AlgoConfigs& cfg = {}) {
  RunResult r;
  r.state = init.value_or(AlgoState{});
  r.trajectory.seed = seed;
  r.trajectory.algorithm_tag = canonical_algorithm_id(algo_id);
  BudgetLedger ledger(budget);
  run_segment(system, algo_id, budget, seed, 0, r.trajectory, ledger, r.state, cfg);
  r.trajectory.segments.push_back({r.trajectory.algorithm_tag, 0, static_cast<std::size_t>(budget)});
  return r;
}

}  // namespace simopt
