#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "simopt/ensemble.hpp"

using namespace simopt;

namespace {

/// Returns a constant plus optional Gaussian noise.
class ConstantSystem final : public StochasticSystem {
 public:
  ConstantSystem(double value, double noise = 0.0) : value_(value), noise_(noise), domain_{{{0, 1}}, {}} {}
  const Domain& domain() const override { return domain_; }
  double evaluate(std::span<const double>, Rng& rng) const override {
    return noise_ > 0 ? value_ + rng.normal(0, noise_) : value_;
  }

 private:
  double value_, noise_;
  Domain domain_;
};

OarMember member(const std::string& id, double mse, double value = 0.0, double noise = 0.0) {
  return {id, std::make_shared<ConstantSystem>(value, noise), mse};
}

double sum_of(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); }

}  // namespace

TEST(TopK, SortsAndBreaksTiesByInsertion) {
  const OarSet set{member("a", 0.3), member("b", 0.1), member("c", 0.2)};
  const auto top = select_top_k(set, 2);
  ASSERT_EQ(top.size(), 2u);
  EXPECT_EQ(top[0].id, "b");
  EXPECT_EQ(top[1].id, "c");
  EXPECT_EQ(select_top_k(set, 3)[2].id, "a");
  const OarSet tie{member("first", 0.1), member("second", 0.1)};
  EXPECT_EQ(select_top_k(tie, 1)[0].id, "first");
  EXPECT_THROW(select_top_k(set, 4), InvalidK);
  EXPECT_THROW(select_top_k(set, 0), InvalidK);
}

TEST(OptimalWeights, InverseErrorNormalisation) {
  const auto a = optimal_weights({0.1, 0.1}, 1e-6);
  EXPECT_NEAR(a[0], 0.5, 1e-12);
  EXPECT_NEAR(a[1], 0.5, 1e-12);
  // 1/1 and 1/3 normalised by 4/3.
  const auto b = optimal_weights({1.0, 3.0}, 0.0);
  EXPECT_NEAR(b[0], 0.75, 1e-12);
  EXPECT_NEAR(b[1], 0.25, 1e-12);
  EXPECT_EQ(optimal_weights({0.42}, 1e-6), std::vector<double>{1.0});
  EXPECT_THROW(optimal_weights({}, 1e-6), InvalidInput);
}

TEST(EnsemblePredict, VertexReproducesMember) {
  const OarSet set{member("a", 0.1, 1.0, 0.5), member("b", 0.2, 7.0, 0.5)};
  const std::vector<double> x{0.5};
  const Rng rng(3);
  Rng member_stream = rng.split(std::uint64_t{0});
  EXPECT_DOUBLE_EQ(ensemble_predict(set, {1.0, 0.0}, x, rng), set[0].model->evaluate(x, member_stream));
}

TEST(EnsemblePredict, MixturesOfDeterministicMembers) {
  const OarSet set{member("a", 0.1, 2.0), member("b", 0.1, 4.0)};
  const std::vector<double> x{0.5};
  EXPECT_DOUBLE_EQ(ensemble_predict(set, {0.5, 0.5}, x, Rng(1)), 3.0);
  const OarSet same{member("a", 0.1, 2.5), member("b", 0.1, 2.5)};
  EXPECT_DOUBLE_EQ(ensemble_predict(same, {0.3, 0.7}, x, Rng(1)), 2.5);
  EXPECT_THROW(ensemble_predict(set, {1.0}, x, Rng(1)), InvalidInput);
  const std::vector<double> bad{0.5, 0.5};
  EXPECT_THROW(ensemble_predict(set, {0.5, 0.5}, bad, Rng(1)), InvalidInput);
}

TEST(EnsembleSystem, DeterministicPerStreamAndVaryingAcrossCalls) {
  EnsembleSystem sys({member("a", 0.1, 1.0, 1.0), member("b", 0.1, 2.0, 1.0)}, {0.4, 0.6}, Domain{{{0, 1}}, {}});
  const std::vector<double> x{0.2};
  Rng r1(5), r2(5);
  EXPECT_DOUBLE_EQ(sys.evaluate(x, r1), sys.evaluate(x, r2));
  EXPECT_NE(sys.evaluate(x, r1), sys.evaluate(x, r1));
}

TEST(SampleWeights, LadderConcentration) {
  // 10 * (0.8 * 0.5 + 0.1) = 5 per coordinate.
  const auto a = dirichlet_alpha({0.5, 0.5}, 10.0, 0.1);
  EXPECT_NEAR(a[0], 5.0, 1e-12);
  EXPECT_NEAR(a[1], 5.0, 1e-12);
}

TEST(SampleWeights, DrawsLieOnSimplex) {
  SamplerParams p;
  Rng rng(8);
  const auto draws = sample_weights({0.6, 0.3, 0.1}, p, 500, rng);
  ASSERT_EQ(draws.size(), 500u);
  for (const auto& w : draws) EXPECT_TRUE(on_simplex(w));
}

TEST(SampleWeights, SingleComponentMeanMatchesDirichletMean) {
  SamplerParams p;
  p.L = 1;
  p.tau_min = 10.0;
  p.delta = 0.1;
  Rng rng(2);
  const auto draws = sample_weights({0.5, 0.5}, p, 10000, rng);
  double mean = 0;
  for (const auto& w : draws) mean += w[0];
  mean /= static_cast<double>(draws.size());
  EXPECT_NEAR(mean, 5.0 / 10.0, 0.02);
}

TEST(SampleWeights, RejectsBadDelta) {
  SamplerParams p;
  Rng rng(1);
  p.delta = 0.5;  // 1/K for K=2
  EXPECT_THROW(sample_weights({0.5, 0.5}, p, 1, rng), InvalidInput);
  p.delta = 0.0;
  EXPECT_THROW(sample_weights({0.5, 0.5}, p, 1, rng), InvalidInput);
}

TEST(Kl, KnownValues) {
  EXPECT_DOUBLE_EQ(kl_divergence({0.3, 0.7}, {0.3, 0.7}), 0.0);
  // 1 * ln(1 / 0.5) + 0
  EXPECT_NEAR(kl_divergence({1.0, 0.0}, {0.5, 0.5}), std::log(2.0), 1e-12);
  EXPECT_THROW(kl_divergence({1.0}, {0.5, 0.5}), InvalidInput);
}

TEST(Kl, NonNegativeOnRandomPairsIncludingVertices) {
  Rng rng(4);
  for (int i = 0; i < 2000; ++i) {
    const auto a = sample_dirichlet({0.2, 0.3, 0.5}, rng);
    auto b = sample_dirichlet({0.4, 0.4, 0.4}, rng);
    if (i % 7 == 0) b = {0.0, 1.0, 0.0};
    const double d = kl_divergence(a, b);
    EXPECT_GE(d, 0.0);
    EXPECT_TRUE(std::isfinite(d));
  }
}

TEST(ImportanceWeights, Examples) {
  const auto sym = importance_weights({0.2, 0.2}, {0.3, 0.3}, 1.0, 1.0, 1e-6);
  EXPECT_NEAR(sym[0], 0.5, 1e-12);
  const auto uni = importance_weights({0.1, 0.5, 2.0}, {0.1, 0.2, 0.3}, 0.0, 0.0, 1e-6);
  for (double v : uni) EXPECT_NEAR(v, 1.0 / 3, 1e-12);
  // zeta proportional to (1, 1/2).
  const auto w = importance_weights({0.0, std::log(2.0)}, {0.4, 0.4}, 1.0, 3.7, 1e-6);
  EXPECT_NEAR(w[0], 2.0 / 3, 1e-12);
  EXPECT_NEAR(w[1], 1.0 / 3, 1e-12);
}

TEST(ImportanceWeights, ScaleFreeInZeta) {
  // Scaling every mse_hat by c (eps = 0) multiplies every zeta by c^-beta.
  const std::vector<double> kl{0.1, 0.4, 0.9}, mse{0.2, 0.5, 0.3};
  std::vector<double> scaled = mse;
  for (auto& v : scaled) v *= 17.0;
  const auto a = importance_weights(kl, mse, 1.3, 0.8, 0.0);
  const auto b = importance_weights(kl, scaled, 1.3, 0.8, 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
  EXPECT_NEAR(sum_of(a), 1.0, 1e-12);
}

TEST(WeightedQuantile, MatchesHandComputation) {
  // sorted values 1,2,3,4 with weights .1,.2,.3,.4: cumulative .1,.3,.6,1.0
  const std::vector<double> v{3, 1, 4, 2}, w{0.3, 0.1, 0.4, 0.2};
  EXPECT_EQ(weighted_quantile(v, w, 0.25), 2);
  EXPECT_EQ(weighted_quantile(v, w, 0.5), 3);
  EXPECT_EQ(weighted_quantile(v, w, 0.61), 4);
}

TEST(StratifiedSplit, PartitionsIndices) {
  Rng rng(1);
  std::vector<double> omega(37), kl(37);
  for (std::size_t i = 0; i < omega.size(); ++i) {
    omega[i] = rng.uniform(0.1, 1.0);
    kl[i] = rng.uniform();
  }
  const double s = sum_of(omega);
  for (auto& v : omega) v /= s;
  const auto r = stratified_split(omega, kl, {0.7, 0.15, 0.15}, 3, rng);
  std::set<std::size_t> all;
  for (const auto* part : {&r.train, &r.val, &r.test}) {
    for (auto i : *part) EXPECT_TRUE(all.insert(i).second) << "duplicate index " << i;
  }
  EXPECT_EQ(all.size(), omega.size());
  EXPECT_TRUE(std::is_sorted(r.cutpoints.begin(), r.cutpoints.end()));
}

TEST(StratifiedSplit, UniformWeightsGiveRatioSizes) {
  std::vector<double> omega(100, 0.01), kl(100);
  Rng rng(2);
  for (auto& v : kl) v = rng.uniform();
  const auto r = stratified_split(omega, kl, {0.7, 0.15, 0.15}, 1, rng);
  EXPECT_NEAR(static_cast<double>(r.train.size()), 70, 2);
  EXPECT_NEAR(static_cast<double>(r.val.size()), 15, 2);
  EXPECT_NEAR(static_cast<double>(r.test.size()), 15, 2);
}

TEST(StratifiedSplit, WeightTargetsHoldAcrossSeeds) {
  SamplerParams p;
  p.M = 200;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto ds = build_meta_dataset({0.05, 0.08, 0.11, 0.2}, p, seed);
    const double total = sum_of(ds.omegas(ds.train)) + sum_of(ds.omegas(ds.val)) + sum_of(ds.omegas(ds.test));
    EXPECT_NEAR(total, 1.0, 1e-9);
    const double ratios[3] = {p.train_ratio, p.val_ratio, p.test_ratio};
    const std::vector<std::size_t>* parts[3] = {&ds.train, &ds.val, &ds.test};
    for (int k = 0; k < 3; ++k) {
      const double got = sum_of(ds.omegas(*parts[k]));
      EXPECT_LE(std::abs(got - ratios[k]) / ratios[k], 0.10) << "seed " << seed << " split " << k;
    }
  }
}

TEST(StratifiedSplit, DeterministicAndRejectsTinyInput) {
  std::vector<double> omega(20, 0.05), kl(20);
  Rng g(3);
  for (auto& v : kl) v = g.uniform();
  Rng a(9), b(9);
  const auto r1 = stratified_split(omega, kl, {0.7, 0.15, 0.15}, 2, a);
  const auto r2 = stratified_split(omega, kl, {0.7, 0.15, 0.15}, 2, b);
  EXPECT_EQ(r1.train, r2.train);
  EXPECT_EQ(r1.val, r2.val);
  EXPECT_EQ(r1.test, r2.test);
  Rng c(1);
  EXPECT_THROW(stratified_split({0.5, 0.5}, {0.1, 0.2}, {0.7, 0.15, 0.15}, 1, c), InvalidInput);
  EXPECT_THROW(stratified_split(omega, kl, {0.7, 0.2, 0.2}, 1, c), InvalidInput);
}

TEST(StratifiedSplit, EveryStratumFeedsEverySplit) {
  SamplerParams p;
  p.M = 60;
  const auto ds = build_meta_dataset({0.1, 0.2, 0.4}, p, 11);
  std::vector<double> kl;
  for (const auto& pt : ds.points) kl.push_back(pt.kl);
  auto stratum = [&](std::size_t i) {
    return std::lower_bound(ds.strata_cutpoints.begin(), ds.strata_cutpoints.end(), kl[i]) -
           ds.strata_cutpoints.begin();
  };
  for (const auto* part : {&ds.train, &ds.val, &ds.test}) {
    std::set<long> seen;
    for (auto i : *part) seen.insert(stratum(i));
    EXPECT_EQ(seen.size(), static_cast<std::size_t>(p.strata));
  }
}

TEST(MetaDataset, JsonRoundTrip) {
  SamplerParams p;
  p.M = 30;
  const auto ds = build_meta_dataset({0.1, 0.3}, p, 5, {"oar-0", "oar-1"});
  for (const auto& pt : ds.points) EXPECT_TRUE(on_simplex(pt.w));
  const auto back = meta_dataset_from_json(nlohmann::json::parse(to_json(ds).dump()));
  EXPECT_EQ(back.train, ds.train);
  EXPECT_EQ(back.points.size(), ds.points.size());
  EXPECT_DOUBLE_EQ(back.points[3].omega, ds.points[3].omega);
  EXPECT_EQ(back.member_ids, ds.member_ids);
  auto bad = to_json(ds);
  bad["splits"]["train"].push_back(999);
  EXPECT_THROW(meta_dataset_from_json(bad), SchemaError);
}
