#include <gtest/gtest.h>

#include <sstream>

#include "scm.hpp"
#include "simopt/oar_learning.hpp"

using namespace simopt;
using simopt::testing::chain_data;
using simopt::testing::chain_skeleton;

namespace {

MechanismSpec linear_template() {
  MechanismSpec s;
  s.family = MechanismFamily::Linear;
  return s;
}

StructuralModel linear_chain(double a, double c) {
  StructuralModel m(chain_skeleton(), linear_template());
  m.mechanism("z").params() = {a, 0.0};
  m.mechanism("y").params() = {c, 0.0};
  return m;
}

ModelData raw_units(const StructuralModel& m, const Dataset& d) { return to_model_units(m, d); }

double rel_err(double a, double b) { return std::abs(a - b) / std::max({1e-8, std::abs(a), std::abs(b)}); }

// Central finite differences on a scalar function of a vector.
std::vector<double> numeric_grad(const std::function<double(const std::vector<double>&)>& f, std::vector<double> p,
                                 double h = 1e-6) {
  std::vector<double> g(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double old = p[i];
    p[i] = old + h;
    const double up = f(p);
    p[i] = old - h;
    const double down = f(p);
    p[i] = old;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

TrainConfig fast_config() {
  TrainConfig cfg;
  cfg.starts = 1;
  cfg.rounds = 2;
  cfg.stage0_steps = 800;
  cfg.m_steps = 200;
  return cfg;
}

}  // namespace

TEST(Forward, LinearChainComposes) {
  const auto m = linear_chain(2.0, 3.0);
  const std::vector<double> x{1.0};
  const auto r = m.forward(x);
  EXPECT_DOUBLE_EQ(r.y, 6.0);
  EXPECT_DOUBLE_EQ(r.states.at("z").at(0), 2.0);
}

TEST(Forward, ClampReplacesMechanismOutput) {
  const auto m = linear_chain(2.0, 3.0);
  const std::map<std::string, std::vector<double>> clamp{{"z", {5.0}}};
  const std::vector<double> x{1.0};
  EXPECT_DOUBLE_EQ(m.forward(x, &clamp).y, 15.0);
}

TEST(Forward, IdentityChainOfThree) {
  CausalSkeleton s({{"x", "", VariableKind::Input, 1},
                    {"a", "", VariableKind::Latent, 1},
                    {"b", "", VariableKind::Latent, 1},
                    {"y", "", VariableKind::Objective, 1}});
  s.add_edge_unchecked("x", "a");
  s.add_edge_unchecked("a", "b");
  s.add_edge_unchecked("b", "y");
  StructuralModel m(s, linear_template());
  for (const auto& n : {"a", "b", "y"}) m.mechanism(n).params() = {1.0, 0.0};
  const std::vector<double> x{0.7};
  EXPECT_DOUBLE_EQ(m.forward(x).y, 0.7);
}

TEST(Forward, UnreachableObjectiveThrows) {
  CausalSkeleton s({{"x", "", VariableKind::Input, 1},
                    {"z", "", VariableKind::Latent, 1},
                    {"y", "", VariableKind::Objective, 1}});
  s.add_edge_unchecked("x", "z");
  StructuralModel m(s, linear_template());
  const std::vector<double> x{1.0};
  EXPECT_THROW(m.forward(x), UnreachableObjective);
}

TEST(Forward, MechanismOnlyForNonInputs) {
  StructuralModel m(chain_skeleton(), MechanismSpec{});
  EXPECT_EQ(m.topo_order(), (std::vector<std::string>{"z", "y"}));
  EXPECT_THROW(m.mechanism("x"), std::out_of_range);
  EXPECT_EQ(m.param_count(), 2u * (16 * 2 + 16 + 1));
}

TEST(Gradients, ForwardLossMatchesFiniteDifferences) {
  Rng rng(7);
  StructuralModel m(chain_skeleton(), MechanismSpec{});
  m.initialize(rng);
  const auto d = raw_units(m, chain_data(12, 0.1, 3));
  std::vector<double> g(m.param_count(), 0.0);
  forward_loss(m, d, &g);
  auto work = m;
  const auto num = numeric_grad(
      [&](const std::vector<double>& p) {
        work.set_flat_params(p);
        return forward_loss(work, d, nullptr);
      },
      m.flat_params());
  for (std::size_t i = 0; i < g.size(); ++i) EXPECT_LT(rel_err(g[i], num[i]), 1e-4) << "param " << i;
}

TEST(Gradients, MLossMatchesFiniteDifferences) {
  Rng rng(11);
  MechanismSpec spec;
  spec.hidden_sizes = {5};
  StructuralModel m(chain_skeleton(), spec);
  m.initialize(rng);
  const auto d = raw_units(m, chain_data(9, 0.1, 4));
  LatentAssignment z{{"z", Eigen::MatrixXd::Random(1, 9)}};
  std::vector<double> g(m.param_count(), 0.0);
  m_loss(m, z, d, 0.3, &g);
  auto work = m;
  const auto num = numeric_grad(
      [&](const std::vector<double>& p) {
        work.set_flat_params(p);
        return m_loss(work, z, d, 0.3, nullptr);
      },
      m.flat_params());
  for (std::size_t i = 0; i < g.size(); ++i) EXPECT_LT(rel_err(g[i], num[i]), 1e-4) << "param " << i;
}

TEST(Gradients, ELossMatchesFiniteDifferences) {
  CausalSkeleton s({{"x", "", VariableKind::Input, 1},
                    {"a", "", VariableKind::Latent, 2},
                    {"b", "", VariableKind::Latent, 1},
                    {"y", "", VariableKind::Objective, 1}});
  s.add_edge_unchecked("x", "a");
  s.add_edge_unchecked("x", "b");
  s.add_edge_unchecked("a", "b");
  s.add_edge_unchecked("a", "y");
  s.add_edge_unchecked("b", "y");
  MechanismSpec spec;
  spec.hidden_sizes = {4};
  StructuralModel m(s, spec);
  Rng rng(5);
  m.initialize(rng);
  const auto d = raw_units(m, chain_data(6, 0.1, 8));
  LatentAssignment z{{"a", Eigen::MatrixXd::Random(2, 6)}, {"b", Eigen::MatrixXd::Random(1, 6)}};
  NodeStates g{{"a", Eigen::MatrixXd::Zero(2, 6)}, {"b", Eigen::MatrixXd::Zero(1, 6)}};
  e_loss(m, z, d, 0.7, &g);

  std::vector<double> flat;
  for (const auto& n : {"a", "b"}) flat.insert(flat.end(), z[n].data(), z[n].data() + z[n].size());
  auto unflatten = [&](const std::vector<double>& p) {
    LatentAssignment out = z;
    std::copy(p.begin(), p.begin() + 12, out["a"].data());
    std::copy(p.begin() + 12, p.end(), out["b"].data());
    return out;
  };
  const auto num = numeric_grad([&](const std::vector<double>& p) { return e_loss(m, unflatten(p), d, 0.7, nullptr); },
                                flat);
  std::vector<double> ana;
  for (const auto& n : {"a", "b"}) ana.insert(ana.end(), g[n].data(), g[n].data() + g[n].size());
  for (std::size_t i = 0; i < ana.size(); ++i) EXPECT_LT(rel_err(ana[i], num[i]), 1e-4) << "latent " << i;
}

TEST(Stage0, DescendsOnOwnData) {
  Rng rng(21);
  StructuralModel gen(chain_skeleton(), MechanismSpec{});
  gen.initialize(rng);
  Dataset d = chain_data(40, 0.1, 9);
  d.y = gen.predict(d.x);
  StructuralModel m(chain_skeleton(), MechanismSpec{});
  Rng rng2(99);
  m.initialize(rng2);
  const auto md = raw_units(m, d);
  const double before = forward_loss(m, md, nullptr);
  const auto fitted = stage0_fit(m, md, md, fast_config());
  EXPECT_LE(forward_loss(fitted, md, nullptr), before);
}

TEST(Stage0, LinearChainReachesNoiseLevel) {
  auto cfg = fast_config();
  cfg.family = MechanismFamily::Linear;
  cfg.stage0_steps = 3000;
  // y = 3(2x) + N(0, 0.01^2): noise on the objective only.
  Dataset all = chain_data(50, 0.0, 17);
  Rng noise(5);
  for (Eigen::Index i = 0; i < all.size(); ++i) all.y(i) += noise.normal(0.0, 0.01);
  const auto split = split_indices(all.size(), cfg, 1);
  const auto tr = all.subset(split.train), va = all.subset(split.val);
  Rng rng(3);
  auto m = make_initial_model(chain_skeleton(), tr, cfg, rng);
  DescentReport rep;
  m = stage0_fit(m, to_model_units(m, tr), to_model_units(m, va), cfg, &rep);
  EXPECT_LE(raw_mse(m, va), 0.001) << rep.steps << " steps, best at " << rep.best_step << ", early " << rep.stopped_early;
}

TEST(Stage0, StopsEarlyWhenValidationRises) {
  auto cfg = fast_config();
  cfg.check_every = 1;
  cfg.check_patience = 3;
  cfg.stage0_steps = 500;
  Dataset tr = chain_data(30, 0.01, 5);
  Dataset va = tr;
  va.y = -tr.y;  // the opposite relationship: fitting train hurts validation
  Rng rng(1);
  auto m = make_initial_model(chain_skeleton(), tr, cfg, rng);
  const auto mtr = to_model_units(m, tr), mva = to_model_units(m, va);
  DescentReport rep;
  const auto fitted = stage0_fit(m, mtr, mva, cfg, &rep);
  EXPECT_TRUE(rep.stopped_early);
  EXPECT_LT(rep.steps, cfg.stage0_steps);
  EXPECT_NEAR(forward_loss(fitted, mva, nullptr), rep.best_val, 1e-12);
}

TEST(Stage0, NonFiniteDataDiverges) {
  auto cfg = fast_config();
  Dataset tr = chain_data(20, 0.1, 5);
  Rng rng(1);
  auto m = make_initial_model(chain_skeleton(), tr, cfg, rng);
  auto md = to_model_units(m, tr);
  md.y(0, 3) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(stage0_fit(m, md, md, cfg), TrainingDiverged);
}

TEST(EStep, GlobalMinimumIsFixedPoint) {
  const auto m = linear_chain(2.0, 3.0);
  Dataset d = chain_data(10, 0.0, 2);
  const auto md = raw_units(m, d);
  LatentAssignment z{{"z", 2.0 * md.inputs.at("x")}};
  EXPECT_NEAR(e_loss(m, z, md, 1.0, nullptr), 0.0, 1e-20);
  const auto z2 = e_step(m, z, md, 1.0, 25);
  EXPECT_EQ(z2.at("z"), z.at("z"));
}

TEST(EStep, ZeroStepsIsNoOp) {
  const auto m = linear_chain(2.0, 3.0);
  const auto md = raw_units(m, chain_data(10, 0.3, 2));
  LatentAssignment z{{"z", Eigen::MatrixXd::Random(1, 10)}};
  EXPECT_EQ(e_step(m, z, md, 1.0, 0).at("z"), z.at("z"));
}

TEST(EStep, LargeLambdaPullsTowardMechanisms) {
  CausalSkeleton s({{"x", "", VariableKind::Input, 1},
                    {"a", "", VariableKind::Latent, 1},
                    {"b", "", VariableKind::Latent, 1},
                    {"y", "", VariableKind::Objective, 1}});
  s.add_edge_unchecked("x", "a");
  s.add_edge_unchecked("x", "b");
  s.add_edge_unchecked("a", "y");
  s.add_edge_unchecked("b", "y");
  StructuralModel m(s, linear_template());
  m.mechanism("a").params() = {1.0, 0.0};
  m.mechanism("b").params() = {-1.0, 0.5};
  m.mechanism("y").params() = {1.0, 2.0, 0.0};
  const auto md = raw_units(m, chain_data(15, 0.2, 6));
  LatentAssignment z{{"a", Eigen::MatrixXd::Random(1, 15)}, {"b", Eigen::MatrixXd::Random(1, 15)}};
  const double before = consistency_loss(m, z, md);
  const double le_before = e_loss(m, z, md, 1e9, nullptr);
  const auto z2 = e_step(m, z, md, 1e9, 25);
  EXPECT_LT(consistency_loss(m, z2, md), before);
  EXPECT_LE(e_loss(m, z2, md, 1e9, nullptr), le_before);
}

TEST(EStep, ObservedLatentsStayClamped) {
  const auto m = linear_chain(2.0, 3.0);
  Dataset d = chain_data(10, 0.3, 2, /*observe_z=*/true);
  const auto md = raw_units(m, d);
  const auto z = init_latents(m, md);
  EXPECT_EQ(z.at("z"), md.observed.at("z"));
  EXPECT_EQ(e_step(m, z, md, 1.0, 10).at("z"), md.observed.at("z"));
}

TEST(MStep, ReproducibleLatentsFitExactly) {
  auto cfg = fast_config();
  cfg.family = MechanismFamily::Linear;
  cfg.m_steps = 4000;
  cfg.check_patience = 1000;
  StructuralModel m(chain_skeleton(), linear_template());
  Rng rng(4);
  m.initialize(rng);
  Dataset d = chain_data(30, 0.0, 13);
  const auto md = raw_units(m, d);
  // Latents that a linear mechanism reproduces exactly: z = 2x, y = 3z.
  LatentAssignment z{{"z", 2.0 * md.inputs.at("x")}};
  const auto fitted = m_step(m, z, md, md, 0.1, cfg);
  EXPECT_LT(consistency_loss(fitted, z, md), 1e-6);
  // Closed-form optimum: slope 2, intercept 0.
  EXPECT_NEAR(fitted.mechanism("z").params()[0], 2.0, 1e-3);
}

TEST(MStep, GammaZeroDecouplesNodes) {
  Rng rng(8);
  MechanismSpec spec;
  spec.hidden_sizes = {3};
  StructuralModel m(chain_skeleton(), spec);
  m.initialize(rng);
  const auto md = raw_units(m, chain_data(10, 0.2, 1));
  LatentAssignment z{{"z", Eigen::MatrixXd::Random(1, 10)}};
  std::vector<double> g1(m.param_count(), 0.0);
  m_loss(m, z, md, 0.0, &g1);
  // Perturbing the objective mechanism leaves the latent block's gradient unchanged.
  auto m2 = m;
  for (auto& p : m2.mechanism("y").params()) p += 0.3;
  std::vector<double> g2(m.param_count(), 0.0);
  m_loss(m2, z, md, 0.0, &g2);
  const auto n_z = m.mechanism("z").param_count();
  for (std::size_t i = 0; i < n_z; ++i) EXPECT_DOUBLE_EQ(g1[m.param_offset("z") + i], g2[m.param_offset("z") + i]);
  // And the loss is the sum of the two per-node terms.
  const double total = m_loss(m, z, md, 0.0, nullptr);
  const double e = e_loss(m, z, md, 1.0, nullptr);
  EXPECT_NEAR(total, e, 1e-12);
}

TEST(MStep, LossDoesNotIncrease) {
  auto cfg = fast_config();
  Rng rng(2);
  StructuralModel m(chain_skeleton(), MechanismSpec{});
  m.initialize(rng);
  const auto md = raw_units(m, chain_data(30, 0.1, 3));
  const auto z = init_latents(m, md);
  const double before = m_loss(m, z, md, 0.1, nullptr);
  const auto fitted = m_step(m, z, md, md, 0.1, cfg);
  EXPECT_LE(m_loss(fitted, z, md, 0.1, nullptr), before);
}

TEST(LearnOar, NoRoundsEqualsStage0) {
  auto cfg = fast_config();
  cfg.rounds = 0;
  const Dataset d = chain_data(40, 0.05, 4);
  const auto res = learn_oar(d, chain_skeleton(), cfg, 77);

  const auto split = split_indices(d.size(), cfg, 77);
  const auto tr = d.subset(split.train), va = d.subset(split.val);
  Rng rng = Rng(77).split("start").split(std::uint64_t{0});
  auto m = make_initial_model(chain_skeleton(), tr, cfg, rng);
  m = stage0_fit(m, to_model_units(m, tr), to_model_units(m, va), cfg);
  EXPECT_EQ(res.model.flat_params(), m.flat_params());
}

TEST(LearnOar, ChainReachesTwiceNoiseFloor) {
  TrainConfig cfg;
  cfg.starts = 2;
  cfg.rounds = 3;
  const double floor = simopt::testing::chain_noise_floor(0.05);
  EXPECT_NEAR(floor, 10 * 0.05 * 0.05, 5e-4);
  const auto res = learn_oar(chain_data(200, 0.05, 31), chain_skeleton(), cfg, 5);
  const auto val = chain_data(2000, 0.05, 32);
  EXPECT_LE(raw_mse(res.model, val), 2 * floor);
}

TEST(LearnOar, ReturnsArgminOverStarts) {
  auto cfg = fast_config();
  cfg.starts = 2;
  const auto res = learn_oar(chain_data(40, 0.1, 6), chain_skeleton(), cfg, 12);
  ASSERT_EQ(res.starts.size(), 2u);
  EXPECT_DOUBLE_EQ(res.model.mse_test, std::min(res.starts[0].test_mse, res.starts[1].test_mse));
}

TEST(LearnOar, RejectsTinyDataAndUnreachableObjective) {
  EXPECT_THROW(learn_oar(chain_data(9, 0.1, 1), chain_skeleton(), fast_config(), 1), InsufficientData);
  CausalSkeleton s({{"x", "", VariableKind::Input, 1}, {"y", "", VariableKind::Objective, 1}});
  EXPECT_THROW(learn_oar(chain_data(20, 0.1, 1), s, fast_config(), 1), UnreachableObjective);
}

TEST(LearnOar, ObservedLatentColumnsAreUsed) {
  auto cfg = fast_config();
  const auto res = learn_oar(chain_data(60, 0.05, 8, true), chain_skeleton(), cfg, 3);
  EXPECT_TRUE(res.model.latent_scalers.count("z"));
  EXPECT_LT(res.model.mse_test, 0.2);
}

TEST(Checkpoint, JsonRoundTripPreservesPredictions) {
  auto cfg = fast_config();
  const auto res = learn_oar(chain_data(30, 0.1, 2), chain_skeleton(), cfg, 4);
  const auto j = to_json(res.model);
  const auto back = model_from_json(nlohmann::json::parse(j.dump()));
  const std::vector<double> x{0.37};
  EXPECT_DOUBLE_EQ(back.forward(x).y, res.model.forward(x).y);
  EXPECT_DOUBLE_EQ(back.mse_test, res.model.mse_test);
  auto bad = j;
  bad["schema_version"] = 99;
  EXPECT_THROW(model_from_json(bad), SchemaError);
}

TEST(Checkpoint, ReplicaSamplesAroundMean) {
  auto cfg = fast_config();
  auto res = learn_oar(chain_data(80, 0.1, 2), chain_skeleton(), cfg, 4);
  auto model = std::make_shared<StructuralModel>(res.model);
  ReplicaSystem sys(model, model->domain);
  Rng rng(1);
  const std::vector<double> x{0.5};
  double sum = 0;
  for (int i = 0; i < 2000; ++i) {
    Rng r = rng.split(static_cast<std::uint64_t>(i));
    sum += sys.evaluate(x, r);
  }
  EXPECT_NEAR(sum / 2000, model->forward(x).y, 0.05);
}

TEST(DatasetIo, TableMappingPicksUpLatentColumns) {
  std::istringstream csv("x1,y,z\n0.1,0.6,0.2\n0.2,1.2,0.4\n");
  const auto t = parse_csv(csv);
  const auto d = dataset_from_table(t, chain_skeleton());
  EXPECT_EQ(d.size(), 2);
  EXPECT_DOUBLE_EQ(d.y(1), 1.2);
  ASSERT_TRUE(d.latents.count("z"));
  EXPECT_DOUBLE_EQ(d.latents.at("z")(0, 1), 0.4);
  std::istringstream missing("x2,y\n1,2\n");
  EXPECT_THROW(dataset_from_table(parse_csv(missing), chain_skeleton()), InvalidInput);
}
