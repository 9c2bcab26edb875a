#include <gtest/gtest.h>

#include "simopt/benchmarks.hpp"

using namespace simopt;

namespace {

WarehouseConfig shipped_warehouse() { return load_warehouse_config(SIMOPT_CONFIG_DIR "/warehouse.json"); }
QueueNetConfig shipped_queue() { return load_queue_config(SIMOPT_CONFIG_DIR "/queue.json"); }

std::vector<double> mid_levels(const WarehouseConfig& c) {
  std::vector<double> S;
  for (const auto& p : c.products) S.push_back(std::round(p.demand_rate * (p.lead_time + 1) * 1.2));
  return S;
}

}  // namespace

TEST(CapacityPenalty, Examples) {
  const std::vector<double> under{50, 50, 50};
  EXPECT_DOUBLE_EQ(capacity_penalty(under, 200, 2.0), 0.0);
  const std::vector<double> over{100, 103};
  EXPECT_DOUBLE_EQ(capacity_penalty(over, 200, 2.0), 18.0);
  EXPECT_THROW(capacity_penalty(over, 200, -1.0), InvalidInput);
  double prev = -1.0;
  for (double total = 150; total <= 260; total += 5) {
    const std::vector<double> S{total};
    const double p = capacity_penalty(S, 200, 0.5);
    EXPECT_GE(p, prev);
    prev = p;
  }
}

TEST(Warehouse, ShippedConfigLoads) {
  const auto c = shipped_warehouse();
  ASSERT_EQ(c.products.size(), 5u);
  EXPECT_EQ(c.horizon_days, 200);
  EXPECT_EQ(c.warmup_days, 50);
  EXPECT_EQ(c.products[3].lead_time, 4);
  EXPECT_EQ(c.capacity_mode, CapacityMode::Soft);
  const auto d = c.domain();
  EXPECT_EQ(d.dimension(), 5u);
  EXPECT_TRUE(d.is_integral(0));
}

TEST(Warehouse, SchemaErrors) {
  auto j = nlohmann::json::parse(R"({"horizon_days": 10})");
  EXPECT_THROW(warehouse_config_from_json(j), SchemaError);
  EXPECT_THROW(load_warehouse_config("/nonexistent/warehouse.json"), InvalidInput);
}

TEST(Warehouse, ZeroDemandClosedForm) {
  auto c = shipped_warehouse();
  for (auto& p : c.products) p.demand_rate = 0.0;
  const std::vector<double> S{10, 20, 30, 40, 50};
  double expected = 0.0;
  for (std::size_t i = 0; i < S.size(); ++i) expected += c.products[i].holding_cost * S[i];
  Rng rng(3);
  EXPECT_NEAR(warehouse_evaluate(S, c, rng), expected, 1e-12);
}

TEST(Warehouse, SoftPenaltyOnlyAboveCap) {
  auto c = shipped_warehouse();
  for (auto& p : c.products) p.demand_rate = 0.0;
  const std::vector<double> at_cap{40, 40, 40, 40, 40};
  double base = 0.0;
  for (std::size_t i = 0; i < 5; ++i) base += c.products[i].holding_cost * 40;
  Rng r1(1);
  EXPECT_NEAR(warehouse_evaluate(at_cap, c, r1), base, 1e-12);
  const std::vector<double> above{40, 40, 40, 40, 43};
  Rng r2(1);
  const double expected = base + c.products[4].holding_cost * 3 + c.penalty_coefficient * 9;
  EXPECT_NEAR(warehouse_evaluate(above, c, r2), expected, 1e-12);
}

TEST(Warehouse, HardModeAndBounds) {
  auto c = shipped_warehouse();
  c.capacity_mode = CapacityMode::Hard;
  const std::vector<double> over{50, 50, 50, 50, 50};
  Rng rng(0);
  EXPECT_THROW(warehouse_evaluate(over, c, rng), HardCapacityViolated);
  const std::vector<double> oob{61, 0, 0, 0, 0};
  EXPECT_THROW(warehouse_evaluate(oob, c, rng), InvalidInput);
  const std::vector<double> short_vec{1, 2};
  EXPECT_THROW(warehouse_evaluate(short_vec, c, rng), InvalidInput);

  WarehouseSystem sys(c);
  Rng r(1);
  EXPECT_TRUE(std::isfinite(sys.evaluate(over, r)));
  const auto projected = project_to_capacity(over, c);
  EXPECT_LE(std::accumulate(projected.begin(), projected.end(), 0.0), c.capacity);
}

TEST(Warehouse, Determinism) {
  const auto c = shipped_warehouse();
  const auto S = mid_levels(c);
  Rng a(42), b(42), d(43);
  const double ya = warehouse_evaluate(S, c, a);
  EXPECT_EQ(ya, warehouse_evaluate(S, c, b));
  EXPECT_NE(ya, warehouse_evaluate(S, c, d));
}

TEST(Warehouse, PositionAndConservationInvariants) {
  const auto c = shipped_warehouse();
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng pick(seed);
    std::vector<double> S(5);
    for (auto& s : S) s = static_cast<double>(pick.index(61));
    Rng rng(seed + 100);
    WarehouseTrace trace;
    warehouse_evaluate(S, c, rng, &trace);
    ASSERT_EQ(trace.position_after_order.size(), static_cast<std::size_t>(c.horizon_days));
    for (const auto& day : trace.position_after_order) {
      for (std::size_t i = 0; i < 5; ++i) ASSERT_EQ(day[i], S[i]);
    }
    for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(trace.ordered[i], trace.received[i] + trace.in_pipeline[i]);
  }
}

TEST(Warehouse, CostsMonotoneUnderCommonRandomNumbers) {
  const auto c = shipped_warehouse();
  const auto S = mid_levels(c);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto hi = c;
    for (auto& p : hi.products) {
      p.backorder_penalty *= 1.5;
      p.holding_cost *= 1.2;
    }
    Rng r1(seed), r2(seed);
    EXPECT_LE(warehouse_evaluate(S, c, r1), warehouse_evaluate(S, hi, r2));
  }
}

TEST(Warehouse, SystemInterface) {
  WarehouseSystem sys(shipped_warehouse());
  EXPECT_EQ(sys.dimension(), 5u);
  EXPECT_FALSE(sys.description().empty());
  const std::vector<double> fractional{12.4, 20.6, 18.0, 35.2, 40.0};
  Rng a(5), b(5);
  const std::vector<double> rounded{12, 21, 18, 35, 40};
  EXPECT_EQ(sys.evaluate(fractional, a), warehouse_evaluate(rounded, sys.config(), b));
}

TEST(QueueNetwork, ShippedConfigLoads) {
  const auto c = shipped_queue();
  EXPECT_EQ(c.n_stations, 3);
  EXPECT_EQ(c.server_pool, 12);
  EXPECT_EQ(c.horizon, 300);
  EXPECT_EQ(c.warmup, 60);
  EXPECT_EQ(c.decision_dimension(), 3u + 3u + 12u);
  EXPECT_EQ(c.domain().dimension(), c.decision_dimension());
}

TEST(QueueNetwork, RoutingRowsMustSumToOne) {
  auto j = nlohmann::json::parse(std::ifstream(SIMOPT_CONFIG_DIR "/queue.json"));
  j["routing"][0][3] = 0.2;
  EXPECT_THROW(queue_config_from_json(j), InvalidInput);
}

TEST(QueueNetwork, ZeroArrivalsCostIsExact) {
  auto c = shipped_queue();
  c.arrival_rate = 0.0;
  const std::vector<double> alloc{4, 3, 5}, mult{1.5, 0.8, 1.2};
  const double expected = c.operating_cost * 12 + c.resource_cost * (0.5 + 0.2);
  Rng rng(9);
  EXPECT_NEAR(queue_evaluate(alloc, mult, c.routing, c, rng), expected, 1e-12);
  c.horizon *= 2;
  Rng rng2(9);
  EXPECT_NEAR(queue_evaluate(alloc, mult, c.routing, c, rng2), expected, 1e-12);
}

TEST(QueueNetwork, PoolAndBoundsErrors) {
  const auto c = shipped_queue();
  Rng rng(0);
  const std::vector<double> mult{1, 1, 1};
  EXPECT_THROW(queue_evaluate(std::vector<double>{5, 5, 5}, mult, c.routing, c, rng), InvalidInput);
  EXPECT_THROW(queue_evaluate(std::vector<double>{0, 5, 5}, mult, c.routing, c, rng), InvalidInput);
  EXPECT_THROW(queue_evaluate(std::vector<double>{4, 4, 4}, std::vector<double>{3, 1, 1}, c.routing, c, rng),
               InvalidInput);
}

TEST(QueueNetwork, CustomerConservation) {
  const auto c = shipped_queue();
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    QueueTrace trace;
    queue_evaluate(std::vector<double>{4, 4, 4}, std::vector<double>{1, 1, 1}, c.routing, c, rng, &trace);
    EXPECT_GT(trace.arrivals, 0);
    EXPECT_EQ(trace.arrivals, trace.exits + trace.in_system);
  }
}

TEST(QueueNetwork, RoutingIsRenormalised) {
  const auto c = shipped_queue();
  auto scaled = c.routing;
  for (auto& row : scaled) {
    for (auto& v : row) v *= 3.0;
  }
  const std::vector<double> alloc{4, 4, 4}, mult{1, 1, 1};
  Rng a(2), b(2);
  EXPECT_EQ(queue_evaluate(alloc, mult, c.routing, c, a), queue_evaluate(alloc, mult, scaled, c, b));
}

TEST(QueueNetwork, SoftmaxRouting) {
  const std::vector<double> logits{0, 0, 0, 0, std::log(3.0), 0};
  const auto R = routing_from_logits(logits, 2);
  EXPECT_NEAR(R[0][0], 1.0 / 3.0, 1e-12);
  EXPECT_NEAR(R[1][1], 3.0 / 5.0, 1e-12);
  for (const auto& row : R) EXPECT_NEAR(row[0] + row[1] + row[2], 1.0, 1e-12);
}

TEST(QueueNetwork, CostsMonotoneUnderCommonRandomNumbers) {
  const auto c = shipped_queue();
  auto hi = c;
  hi.holding_cost *= 2.0;
  hi.congestion_penalty *= 2.0;
  const std::vector<double> alloc{5, 4, 3}, mult{1.0, 1.2, 0.9};
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng a(seed), b(seed);
    EXPECT_LE(queue_evaluate(alloc, mult, c.routing, c, a), queue_evaluate(alloc, mult, hi.routing, hi, b));
  }
}

TEST(QueueNetwork, SystemProjectsOntoPoolAndIsDeterministic) {
  QueueNetworkSystem sys(shipped_queue());
  std::vector<double> x(sys.dimension(), 0.0);
  x[0] = x[1] = x[2] = 8.0;
  x[3] = x[4] = x[5] = 1.0;
  Rng a(4), b(4);
  const double ya = sys.evaluate(x, a);
  EXPECT_TRUE(std::isfinite(ya));
  EXPECT_EQ(ya, sys.evaluate(x, b));
  const auto p = project_to_pool({8, 8, 8}, sys.config());
  EXPECT_EQ(p[0] + p[1] + p[2], 12.0);
  EXPECT_FALSE(sys.description().empty());
}

TEST(Warehouse, TraceComponentsAddUpToCost) {
  const auto c = shipped_warehouse();
  const std::vector<double> S{30, 30, 40, 50, 60};
  Rng rng(8);
  WarehouseTrace trace;
  const double y = warehouse_evaluate(S, c, rng, &trace);
  EXPECT_NEAR(trace.mean_holding + trace.mean_backorder + trace.mean_capacity_penalty, y, 1e-9);
  EXPECT_NEAR(trace.mean_capacity_penalty, c.penalty_coefficient * 10 * 10, 1e-12);
}
