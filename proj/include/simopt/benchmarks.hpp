#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "simopt/system.hpp"

namespace simopt {

namespace detail {

inline std::int64_t poisson(double rate, Rng& rng) {
  if (rate <= 0.0) return 0;
  std::poisson_distribution<std::int64_t> d(rate);
  return d(rng);
}

inline std::int64_t binomial(std::int64_t n, double p, Rng& rng) {
  if (n <= 0 || p <= 0.0) return 0;
  if (p >= 1.0) return n;
  std::binomial_distribution<std::int64_t> d(n, p);
  return d(rng);
}

template <typename T>
T read_field(const nlohmann::json& j, const char* key, const char* where) {
  if (!j.contains(key)) throw SchemaError(std::string(where) + ": missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string(where) + ": field '" + key + "': " + e.what());
  }
}

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(path + ": " + e.what());
  }
}

}  // namespace detail

/// Quadratic penalty on the total order-up-to level above `cap`.
inline double capacity_penalty(std::span<const double> S, double cap, double coefficient) {
  if (coefficient < 0.0) throw InvalidInput("capacity penalty coefficient must be >= 0");
  const double excess = std::max(0.0, std::accumulate(S.begin(), S.end(), 0.0) - cap);
  return coefficient * excess * excess;
}

// ---------------------------------------------------------------------------
// Warehouse

enum class CapacityMode { Hard, Soft };

struct ProductConfig {
  int lead_time = 0;
  double holding_cost = 0.0;
  double backorder_penalty = 0.0;
  double demand_rate = 0.0;
  std::vector<double> seasonality;  // 7 weekday multipliers
  double lower = 0.0;
  double upper = 0.0;
};

struct WarehouseConfig {
  std::vector<ProductConfig> products;
  int horizon_days = 0;
  int warmup_days = 0;
  double capacity = 0.0;
  CapacityMode capacity_mode = CapacityMode::Soft;
  double penalty_coefficient = 0.0;

  void validate() const {
    if (products.empty()) throw InvalidInput("warehouse needs at least one product");
    if (warmup_days < 0 || warmup_days >= horizon_days) throw InvalidInput("warm-up must be in [0, horizon)");
    if (penalty_coefficient < 0) throw InvalidInput("penalty coefficient must be >= 0");
    for (const auto& p : products) {
      if (p.lead_time < 0) throw InvalidInput("lead time must be >= 0");
      if (p.holding_cost < 0 || p.backorder_penalty < 0 || p.demand_rate < 0) {
        throw InvalidInput("warehouse rates and costs must be >= 0");
      }
      if (p.seasonality.size() != 7) throw InvalidInput("seasonality needs 7 weekday multipliers");
      for (double s : p.seasonality) {
        if (s < 0) throw InvalidInput("seasonality multipliers must be >= 0");
      }
      if (p.lower > p.upper) throw InvalidInput("order-up-to bounds are inverted");
    }
  }

  Domain domain() const {
    Domain d;
    for (const auto& p : products) d.bounds.push_back({p.lower, p.upper});
    d.integral.assign(products.size(), true);
    return d;
  }
};

inline WarehouseConfig warehouse_config_from_json(const nlohmann::json& j) {
  constexpr const char* where = "warehouse config";
  WarehouseConfig c;
  c.horizon_days = detail::read_field<int>(j, "horizon_days", where);
  c.warmup_days = detail::read_field<int>(j, "warmup_days", where);
  c.capacity = detail::read_field<double>(j, "capacity", where);
  c.penalty_coefficient = detail::read_field<double>(j, "penalty_coefficient", where);
  const auto mode = detail::read_field<std::string>(j, "capacity_mode", where);
  if (mode == "hard") {
    c.capacity_mode = CapacityMode::Hard;
  } else if (mode == "soft") {
    c.capacity_mode = CapacityMode::Soft;
  } else {
    throw SchemaError("capacity_mode must be 'hard' or 'soft'");
  }
  for (const auto& p : detail::read_field<nlohmann::json>(j, "products", where)) {
    ProductConfig pc;
    pc.lead_time = detail::read_field<int>(p, "lead_time", "product");
    pc.holding_cost = detail::read_field<double>(p, "holding_cost", "product");
    pc.backorder_penalty = detail::read_field<double>(p, "backorder_penalty", "product");
    pc.demand_rate = detail::read_field<double>(p, "demand_rate", "product");
    pc.seasonality = detail::read_field<std::vector<double>>(p, "seasonality", "product");
    const auto bounds = detail::read_field<std::vector<double>>(p, "bounds", "product");
    if (bounds.size() != 2) throw SchemaError("product bounds must be [lower, upper]");
    pc.lower = bounds[0];
    pc.upper = bounds[1];
    c.products.push_back(std::move(pc));
  }
  c.validate();
  return c;
}

inline WarehouseConfig load_warehouse_config(const std::string& path) {
  return warehouse_config_from_json(detail::read_json_file(path));
}

/// Per-run bookkeeping exposed for invariant checks.
struct WarehouseTrace {
  std::vector<std::vector<double>> position_after_order;  // [day][product]
  std::vector<std::int64_t> ordered, received, in_pipeline;  // per product, at horizon end
  std::vector<double> daily_cost;
  // Post-warm-up daily means of the cost components.
  double mean_holding = 0.0, mean_backorder = 0.0, mean_capacity_penalty = 0.0;
};

/// Mean daily cost of a base-stock policy with order-up-to levels S.
inline double warehouse_evaluate(std::span<const double> S_in, const WarehouseConfig& cfg, Rng& rng,
                                 WarehouseTrace* trace = nullptr) {
  const std::size_t n = cfg.products.size();
  if (S_in.size() != n) throw InvalidInput("order-up-to vector has the wrong length");
  std::vector<std::int64_t> S(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!(S_in[i] >= cfg.products[i].lower && S_in[i] <= cfg.products[i].upper)) {
      throw InvalidInput("order-up-to level " + std::to_string(i) + " is out of bounds");
    }
    S[i] = std::llround(S_in[i]);
  }
  std::vector<double> Sd(S.begin(), S.end());
  const double total = std::accumulate(Sd.begin(), Sd.end(), 0.0);
  if (cfg.capacity_mode == CapacityMode::Hard && total > cfg.capacity) {
    throw HardCapacityViolated("sum of order-up-to levels " + std::to_string(total) + " exceeds capacity " +
                               std::to_string(cfg.capacity));
  }
  const double soft = cfg.capacity_mode == CapacityMode::Soft ? capacity_penalty(Sd, cfg.capacity, cfg.penalty_coefficient)
                                                             : 0.0;

  std::vector<std::int64_t> on_hand(S), backlog(n, 0), pipeline_units(n, 0);
  // pipeline[i][k]: units arriving in k days (ring buffer indexed by day).
  std::vector<std::vector<std::int64_t>> due(n);
  for (std::size_t i = 0; i < n; ++i) due[i].assign(static_cast<std::size_t>(cfg.products[i].lead_time) + 1, 0);
  std::vector<std::int64_t> ordered(n, 0), received(n, 0);
  if (trace) *trace = WarehouseTrace{};

  double cost_sum = 0.0, holding_sum = 0.0, backorder_sum = 0.0;
  for (int day = 0; day < cfg.horizon_days; ++day) {
    double holding = 0.0, backorder = 0.0;
    std::vector<double> positions(n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& p = cfg.products[i];
      auto& slot = due[i][static_cast<std::size_t>(day) % due[i].size()];
      on_hand[i] += slot;
      received[i] += slot;
      pipeline_units[i] -= slot;
      slot = 0;

      const std::int64_t cleared = std::min(on_hand[i], backlog[i]);
      on_hand[i] -= cleared;
      backlog[i] -= cleared;

      const std::int64_t demand = detail::poisson(p.demand_rate * p.seasonality[static_cast<std::size_t>(day % 7)], rng);
      const std::int64_t served = std::min(on_hand[i], demand);
      on_hand[i] -= served;
      backlog[i] += demand - served;

      holding += p.holding_cost * static_cast<double>(on_hand[i]);
      backorder += p.backorder_penalty * static_cast<double>(backlog[i]);

      const std::int64_t position = on_hand[i] + pipeline_units[i] - backlog[i];
      const std::int64_t q = std::max<std::int64_t>(0, S[i] - position);
      if (q > 0) {
        if (p.lead_time == 0) {
          on_hand[i] += q;
          received[i] += q;
        } else {
          due[i][static_cast<std::size_t>(day + p.lead_time) % due[i].size()] += q;
          pipeline_units[i] += q;
        }
        ordered[i] += q;
      }
      positions[i] = static_cast<double>(on_hand[i] + pipeline_units[i] - backlog[i]);
    }
    const double cost = holding + backorder + soft;
    if (day >= cfg.warmup_days) {
      cost_sum += cost;
      holding_sum += holding;
      backorder_sum += backorder;
    }
    if (trace) {
      trace->position_after_order.push_back(std::move(positions));
      trace->daily_cost.push_back(cost);
    }
  }
  if (trace) {
    trace->ordered = ordered;
    trace->received = received;
    trace->in_pipeline = pipeline_units;
  }
  const double days = static_cast<double>(cfg.horizon_days - cfg.warmup_days);
  if (trace) {
    trace->mean_holding = holding_sum / days;
    trace->mean_backorder = backorder_sum / days;
    trace->mean_capacity_penalty = soft;
  }
  return cost_sum / days;
}

/// Lowers the largest levels one unit at a time until the hard cap holds.
inline std::vector<double> project_to_capacity(std::vector<double> S, const WarehouseConfig& cfg) {
  double total = std::accumulate(S.begin(), S.end(), 0.0);
  while (total > cfg.capacity) {
    std::size_t arg = S.size();
    for (std::size_t i = 0; i < S.size(); ++i) {
      if (S[i] - 1.0 < cfg.products[i].lower) continue;
      if (arg == S.size() || S[i] > S[arg]) arg = i;
    }
    if (arg == S.size()) break;
    S[arg] -= 1.0;
    total -= 1.0;
  }
  return S;
}

class WarehouseSystem final : public StochasticSystem {
 public:
  explicit WarehouseSystem(WarehouseConfig cfg) : cfg_(std::move(cfg)), domain_(cfg_.domain()) { cfg_.validate(); }
  const Domain& domain() const override { return domain_; }
  double evaluate(std::span<const double> x, Rng& rng) const override {
    auto S = domain_.project(x);
    if (cfg_.capacity_mode == CapacityMode::Hard) S = project_to_capacity(std::move(S), cfg_);
    return warehouse_evaluate(S, cfg_, rng);
  }
  std::string description() const override {
    return "Single-echelon warehouse with " + std::to_string(cfg_.products.size()) +
           " products under an order-up-to policy; decision = integer order-up-to level per product; "
           "objective = mean daily holding plus backorder cost.";
  }
  const WarehouseConfig& config() const { return cfg_; }

 private:
  WarehouseConfig cfg_;
  Domain domain_;
};

// ---------------------------------------------------------------------------
// Queueing network

struct QueueNetConfig {
  int n_stations = 0;
  int entry_station = 0;
  double arrival_rate = 0.0;
  /// n_stations rows of n_stations + 1 columns; the last column is the exit probability.
  std::vector<std::vector<double>> routing;
  int server_pool = 0;
  std::vector<int> server_lower, server_upper;
  double multiplier_lower = 1.0, multiplier_upper = 1.0;
  std::vector<double> service_rates;
  double holding_cost = 0.0;
  double operating_cost = 0.0;
  double resource_cost = 0.0;
  double congestion_penalty = 0.0;
  double congestion_threshold = 0.0;
  double imbalance_penalty = 0.0;
  int horizon = 0;
  int warmup = 0;
  bool optimize_routing = true;
  double logit_bound = 3.0;

  void validate() const {
    const auto n = static_cast<std::size_t>(n_stations);
    if (n_stations < 1) throw InvalidInput("queue network needs at least one station");
    if (entry_station < 0 || entry_station >= n_stations) throw InvalidInput("entry station out of range");
    if (routing.size() != n) throw InvalidInput("routing needs one row per station");
    for (const auto& row : routing) {
      if (row.size() != n + 1) throw InvalidInput("routing rows need n_stations + 1 entries (last = exit)");
      double s = 0.0;
      for (double v : row) {
        if (v < 0) throw InvalidInput("routing probabilities must be >= 0");
        s += v;
      }
      if (std::abs(s - 1.0) > 1e-9) throw InvalidInput("routing row plus exit must sum to 1");
    }
    if (server_lower.size() != n || server_upper.size() != n || service_rates.size() != n) {
      throw InvalidInput("per-station vectors must have n_stations entries");
    }
    int min_total = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (server_lower[i] < 0 || server_lower[i] > server_upper[i]) throw InvalidInput("bad server bounds");
      min_total += server_lower[i];
    }
    if (min_total > server_pool) throw InvalidInput("server lower bounds exceed the pool");
    if (multiplier_lower > multiplier_upper || multiplier_lower < 0) throw InvalidInput("bad multiplier bounds");
    if (arrival_rate < 0) throw InvalidInput("arrival rate must be >= 0");
    if (warmup < 0 || warmup >= horizon) throw InvalidInput("warm-up must be in [0, horizon)");
  }

  std::size_t decision_dimension() const {
    const auto n = static_cast<std::size_t>(n_stations);
    return 2 * n + (optimize_routing ? n * (n + 1) : 0);
  }

  Domain domain() const {
    Domain d;
    const auto n = static_cast<std::size_t>(n_stations);
    for (std::size_t i = 0; i < n; ++i) {
      d.bounds.push_back({static_cast<double>(server_lower[i]), static_cast<double>(server_upper[i])});
      d.integral.push_back(true);
    }
    for (std::size_t i = 0; i < n; ++i) {
      d.bounds.push_back({multiplier_lower, multiplier_upper});
      d.integral.push_back(false);
    }
    if (optimize_routing) {
      for (std::size_t i = 0; i < n * (n + 1); ++i) {
        d.bounds.push_back({-logit_bound, logit_bound});
        d.integral.push_back(false);
      }
    }
    return d;
  }
};

inline QueueNetConfig queue_config_from_json(const nlohmann::json& j) {
  constexpr const char* where = "queue network config";
  QueueNetConfig c;
  c.n_stations = detail::read_field<int>(j, "n_stations", where);
  c.entry_station = j.value("entry_station", 0);
  c.arrival_rate = detail::read_field<double>(j, "arrival_rate", where);
  c.routing = detail::read_field<std::vector<std::vector<double>>>(j, "routing", where);
  c.server_pool = detail::read_field<int>(j, "server_pool", where);
  c.server_lower = detail::read_field<std::vector<int>>(j, "server_lower", where);
  c.server_upper = detail::read_field<std::vector<int>>(j, "server_upper", where);
  const auto mb = detail::read_field<std::vector<double>>(j, "multiplier_bounds", where);
  if (mb.size() != 2) throw SchemaError("multiplier_bounds must be [lower, upper]");
  c.multiplier_lower = mb[0];
  c.multiplier_upper = mb[1];
  c.service_rates = detail::read_field<std::vector<double>>(j, "service_rates", where);
  c.holding_cost = detail::read_field<double>(j, "holding_cost", where);
  c.operating_cost = detail::read_field<double>(j, "operating_cost", where);
  c.resource_cost = detail::read_field<double>(j, "resource_cost", where);
  c.congestion_penalty = detail::read_field<double>(j, "congestion_penalty", where);
  c.congestion_threshold = detail::read_field<double>(j, "congestion_threshold", where);
  c.imbalance_penalty = detail::read_field<double>(j, "imbalance_penalty", where);
  c.horizon = detail::read_field<int>(j, "horizon", where);
  c.warmup = detail::read_field<int>(j, "warmup", where);
  c.optimize_routing = j.value("optimize_routing", true);
  c.logit_bound = j.value("logit_bound", 3.0);
  c.validate();
  return c;
}

inline QueueNetConfig load_queue_config(const std::string& path) {
  return queue_config_from_json(detail::read_json_file(path));
}

/// Row-wise softmax of logits laid out as n rows of n + 1 columns.
inline std::vector<std::vector<double>> routing_from_logits(std::span<const double> logits, std::size_t n) {
  if (logits.size() != n * (n + 1)) throw InvalidInput("routing logits have the wrong length");
  std::vector<std::vector<double>> R(n, std::vector<double>(n + 1));
  for (std::size_t i = 0; i < n; ++i) {
    const double m = *std::max_element(logits.begin() + static_cast<std::ptrdiff_t>(i * (n + 1)),
                                       logits.begin() + static_cast<std::ptrdiff_t>((i + 1) * (n + 1)));
    double s = 0.0;
    for (std::size_t k = 0; k <= n; ++k) s += R[i][k] = std::exp(logits[i * (n + 1) + k] - m);
    for (auto& v : R[i]) v /= s;
  }
  return R;
}

struct QueueTrace {
  std::int64_t arrivals = 0;
  std::int64_t exits = 0;
  std::int64_t in_system = 0;
  std::vector<double> period_cost;
};

/// Mean per-period cost of a discrete-time queueing network.
inline double queue_evaluate(std::span<const double> allocation, std::span<const double> multipliers,
                             std::vector<std::vector<double>> routing, const QueueNetConfig& cfg, Rng& rng,
                             QueueTrace* trace = nullptr) {
  const auto n = static_cast<std::size_t>(cfg.n_stations);
  if (allocation.size() != n || multipliers.size() != n) throw InvalidInput("decision has the wrong length");
  if (routing.size() != n) throw InvalidInput("routing needs one row per station");
  std::vector<std::int64_t> servers(n);
  std::int64_t pool = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double a = std::round(allocation[i]);
    if (a < cfg.server_lower[i] || a > cfg.server_upper[i]) throw InvalidInput("server allocation out of bounds");
    servers[i] = static_cast<std::int64_t>(a);
    pool += servers[i];
    if (!(multipliers[i] >= cfg.multiplier_lower && multipliers[i] <= cfg.multiplier_upper)) {
      throw InvalidInput("service multiplier out of bounds");
    }
  }
  if (pool > cfg.server_pool) {
    throw InvalidInput("allocation uses " + std::to_string(pool) + " servers, pool has " +
                       std::to_string(cfg.server_pool));
  }
  for (auto& row : routing) {
    if (row.size() != n + 1) throw InvalidInput("routing rows need n_stations + 1 entries");
    double s = 0.0;
    for (auto& v : row) s += v = std::max(0.0, v);
    if (s <= 0.0) {
      row.assign(n + 1, 0.0);
      row[n] = 1.0;
    } else {
      for (auto& v : row) v /= s;
    }
  }

  double fixed = cfg.operating_cost * static_cast<double>(pool);
  for (std::size_t i = 0; i < n; ++i) fixed += cfg.resource_cost * std::max(0.0, multipliers[i] - 1.0);

  std::vector<std::int64_t> queue(n, 0), incoming(n, 0);
  std::vector<double> util(n);
  std::int64_t arrivals = 0, exits = 0;
  double cost_sum = 0.0;
  if (trace) *trace = QueueTrace{};
  for (int t = 0; t < cfg.horizon; ++t) {
    const std::int64_t a = detail::poisson(cfg.arrival_rate, rng);
    arrivals += a;
    queue[static_cast<std::size_t>(cfg.entry_station)] += a;
    std::fill(incoming.begin(), incoming.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      const std::int64_t busy = std::min(queue[i], servers[i]);
      util[i] = servers[i] > 0 ? static_cast<double>(busy) / static_cast<double>(servers[i]) : 0.0;
      const double p = std::min(1.0, cfg.service_rates[i] * multipliers[i]);
      const std::int64_t done = detail::binomial(busy, p, rng);
      queue[i] -= done;
      // Multinomial split of the completions by sequential conditional binomials.
      std::int64_t left = done;
      double mass = 1.0;
      for (std::size_t k = 0; k < n && left > 0; ++k) {
        const double pk = mass > 0 ? std::min(1.0, routing[i][k] / mass) : 0.0;
        const std::int64_t moved = detail::binomial(left, pk, rng);
        incoming[k] += moved;
        left -= moved;
        mass -= routing[i][k];
      }
      exits += left;
    }
    for (std::size_t k = 0; k < n; ++k) queue[k] += incoming[k];

    const std::int64_t total = std::accumulate(queue.begin(), queue.end(), std::int64_t{0});
    const double max_q = static_cast<double>(*std::max_element(queue.begin(), queue.end()));
    const auto [umin, umax] = std::minmax_element(util.begin(), util.end());
    const double cost = fixed + cfg.holding_cost * static_cast<double>(total) +
                        cfg.congestion_penalty * std::max(0.0, max_q - cfg.congestion_threshold) +
                        cfg.imbalance_penalty * (*umax - *umin);
    if (t >= cfg.warmup) cost_sum += cost;
    if (trace) trace->period_cost.push_back(cost);
  }
  if (trace) {
    trace->arrivals = arrivals;
    trace->exits = exits;
    trace->in_system = std::accumulate(queue.begin(), queue.end(), std::int64_t{0});
  }
  return cost_sum / static_cast<double>(cfg.horizon - cfg.warmup);
}

/// Removes servers from the largest stations until the pool constraint holds.
inline std::vector<double> project_to_pool(std::vector<double> alloc, const QueueNetConfig& cfg) {
  double total = std::accumulate(alloc.begin(), alloc.end(), 0.0);
  while (total > cfg.server_pool) {
    std::size_t arg = alloc.size();
    for (std::size_t i = 0; i < alloc.size(); ++i) {
      if (alloc[i] - 1.0 < cfg.server_lower[i]) continue;
      if (arg == alloc.size() || alloc[i] > alloc[arg]) arg = i;
    }
    if (arg == alloc.size()) break;
    alloc[arg] -= 1.0;
    total -= 1.0;
  }
  return alloc;
}

/// Decision vector [allocation | multipliers | routing logits] (logits only when routing is optimised).
class QueueNetworkSystem final : public StochasticSystem {
 public:
  explicit QueueNetworkSystem(QueueNetConfig cfg) : cfg_(std::move(cfg)), domain_(cfg_.domain()) { cfg_.validate(); }
  const Domain& domain() const override { return domain_; }
  double evaluate(std::span<const double> x, Rng& rng) const override {
    const auto p = domain_.project(x);
    const auto n = static_cast<std::size_t>(cfg_.n_stations);
    const auto alloc = project_to_pool({p.begin(), p.begin() + static_cast<std::ptrdiff_t>(n)}, cfg_);
    const std::span<const double> mult(p.data() + n, n);
    auto routing = cfg_.optimize_routing ? routing_from_logits(std::span<const double>(p.data() + 2 * n, n * (n + 1)), n)
                                         : cfg_.routing;
    return queue_evaluate(alloc, mult, std::move(routing), cfg_, rng);
  }
  std::string description() const override {
    return "Discrete-time queueing network with " + std::to_string(cfg_.n_stations) +
           " stations; decision = servers per station, service-rate multipliers" +
           (cfg_.optimize_routing ? std::string(" and routing logits") : std::string()) +
           "; objective = mean holding, operating, resource, congestion and imbalance cost per period.";
  }
  const QueueNetConfig& config() const { return cfg_; }

 private:
  QueueNetConfig cfg_;
  Domain domain_;
};

}  // namespace simopt
