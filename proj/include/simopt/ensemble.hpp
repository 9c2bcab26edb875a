#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "simopt/errors.hpp"
#include "simopt/rng.hpp"
#include "simopt/system.hpp"

namespace simopt {

struct OarMember {
  std::string id;
  std::shared_ptr<const StochasticSystem> model;
  double mse = 0.0;
};

using OarSet = std::vector<OarMember>;

/// The K members with the smallest MSE, ascending; ties keep insertion order.
inline OarSet select_top_k(const OarSet& set, std::size_t k) {
  if (k < 1 || k > set.size()) {
    throw InvalidK("K=" + std::to_string(k) + " but the set has " + std::to_string(set.size()) + " members");
  }
  OarSet sorted = set;
  std::stable_sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.mse < b.mse; });
  sorted.resize(k);
  return sorted;
}

/// Inverse-error weights on the simplex: w_k ∝ 1 / (mse_k + eps).
inline std::vector<double> optimal_weights(const std::vector<double>& mses, double eps) {
  if (mses.empty()) throw InvalidInput("optimal_weights needs at least one member");
  std::vector<double> w(mses.size());
  for (std::size_t k = 0; k < mses.size(); ++k) {
    if (!(mses[k] >= 0)) throw InvalidInput("member MSE must be non-negative");
    w[k] = 1.0 / (mses[k] + eps);
    if (!std::isfinite(w[k])) throw InvalidInput("zero MSE with eps=0 gives an unbounded weight");
  }
  const double s = std::accumulate(w.begin(), w.end(), 0.0);
  for (auto& v : w) v /= s;
  return w;
}

inline bool on_simplex(const std::vector<double>& w, double tol = 1e-9) {
  double s = 0.0;
  for (double v : w) {
    if (!(v >= 0.0)) return false;
    s += v;
  }
  return std::abs(s - 1.0) <= tol;
}

/// Weighted mixture of member outputs. Member k draws from `rng.split(k)`, so a
/// vertex weight reproduces that member exactly.
inline double ensemble_predict(const OarSet& set, const std::vector<double>& w, std::span<const double> x,
                               const Rng& rng) {
  if (w.size() != set.size()) throw InvalidInput("weight vector length does not match the ensemble size");
  double y = 0.0;
  for (std::size_t k = 0; k < set.size(); ++k) {
    if (set[k].model->dimension() != x.size()) throw InvalidInput("decision vector dimension mismatch");
    if (w[k] == 0.0) continue;
    Rng r = rng.split(static_cast<std::uint64_t>(k));
    y += w[k] * set[k].model->evaluate(x, r);
  }
  return y;
}

/// An ensemble point seen as a stochastic system.
class EnsembleSystem final : public StochasticSystem {
 public:
  EnsembleSystem(OarSet set, std::vector<double> w, Domain domain)
      : set_(std::move(set)), w_(std::move(w)), domain_(std::move(domain)) {
    if (set_.empty()) throw InvalidInput("empty ensemble");
    if (w_.size() != set_.size()) throw InvalidInput("weight vector length does not match the ensemble size");
    if (!on_simplex(w_)) throw InvalidInput("ensemble weights are not on the simplex");
  }
  const Domain& domain() const override { return domain_; }
  double evaluate(std::span<const double> x, Rng& rng) const override {
    const Rng stream = rng.split(rng());
    return ensemble_predict(set_, w_, x, stream);
  }
  const std::vector<double>& weights() const { return w_; }

 private:
  OarSet set_;
  std::vector<double> w_;
  Domain domain_;
};

struct SamplerParams {
  int L = 4;
  double tau_min = 5.0;
  double rho = 3.0;
  double delta = 0.02;
  double alpha = 1.0;
  double beta = 1.0;
  double eps = 1e-6;
  int strata = 3;
  int M = 60;
  double train_ratio = 0.7;
  double val_ratio = 0.15;
  double test_ratio = 0.15;
};

/// Dirichlet concentration of ladder rung with scale tau.
inline std::vector<double> dirichlet_alpha(const std::vector<double>& w_star, double tau, double delta) {
  const double k = static_cast<double>(w_star.size());
  std::vector<double> a(w_star.size());
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = tau * ((1.0 - delta * k) * w_star[i] + delta);
  return a;
}

inline std::vector<double> sample_dirichlet(const std::vector<double>& alpha, Rng& rng) {
  std::vector<double> g(alpha.size());
  for (int attempt = 0; attempt < 100; ++attempt) {
    double s = 0.0;
    for (std::size_t i = 0; i < alpha.size(); ++i) {
      std::gamma_distribution<double> gamma(alpha[i], 1.0);
      g[i] = gamma(rng);
      s += g[i];
    }
    if (s > 0.0 && std::isfinite(s)) {
      for (auto& v : g) v /= s;
      return g;
    }
  }
  throw InvalidInput("Dirichlet draw underflowed repeatedly");
}

/// M draws from an equal-weight mixture of L Dirichlets centred on w_star,
/// with concentrations on a geometric ladder tau_min * rho^(l-1).
inline std::vector<std::vector<double>> sample_weights(const std::vector<double>& w_star, const SamplerParams& p,
                                                       int M, Rng& rng) {
  const double k = static_cast<double>(w_star.size());
  if (w_star.empty() || !on_simplex(w_star, 1e-6)) throw InvalidInput("w_star must lie on the simplex");
  if (!(p.delta > 0.0 && p.delta < 1.0 / k)) throw InvalidInput("delta must lie in (0, 1/K)");
  if (!(p.rho > 1.0) || !(p.tau_min > 0.0) || p.L < 1) throw InvalidInput("need rho > 1, tau_min > 0, L >= 1");
  std::vector<std::vector<double>> out;
  out.reserve(static_cast<std::size_t>(M));
  for (int m = 0; m < M; ++m) {
    const auto l = rng.index(static_cast<std::size_t>(p.L));
    const double tau = p.tau_min * std::pow(p.rho, static_cast<double>(l));
    out.push_back(sample_dirichlet(dirichlet_alpha(w_star, tau, p.delta), rng));
  }
  return out;
}

/// KL(w || w_star). Zero entries of w contribute nothing. Where w is positive
/// but w_star is zero, w_star is floored at `floor` and renormalised first.
inline double kl_divergence(const std::vector<double>& w, const std::vector<double>& w_star, double floor = 0.002) {
  if (w.size() != w_star.size()) throw InvalidInput("KL arguments differ in length");
  std::vector<double> q = w_star;
  bool floored = false;
  for (std::size_t i = 0; i < q.size(); ++i) {
    if (w[i] > 0.0 && q[i] <= 0.0) {
      q[i] = floor;
      floored = true;
    }
  }
  if (floored) {
    const double s = std::accumulate(q.begin(), q.end(), 0.0);
    for (auto& v : q) v /= s;
  }
  double d = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (w[i] > 0.0) d += w[i] * std::log(w[i] / q[i]);
  }
  return std::max(0.0, d);
}

/// Normalised importance weights exp(-alpha D) (mse_hat + eps)^(-beta), computed in log space.
inline std::vector<double> importance_weights(const std::vector<double>& kl, const std::vector<double>& mse_hat,
                                              double alpha, double beta, double eps) {
  if (kl.size() != mse_hat.size() || kl.empty()) throw InvalidInput("importance_weights: bad input lengths");
  std::vector<double> logz(kl.size());
  for (std::size_t m = 0; m < kl.size(); ++m) logz[m] = -alpha * kl[m] - beta * std::log(mse_hat[m] + eps);
  const double mx = *std::max_element(logz.begin(), logz.end());
  double s = 0.0;
  for (auto& v : logz) {
    v = std::exp(v - mx);
    s += v;
  }
  for (auto& v : logz) v /= s;
  return logz;
}

/// Quantile of `values` under `weights` at level q: the smallest value whose
/// cumulative weight reaches q.
inline double weighted_quantile(const std::vector<double>& values, const std::vector<double>& weights, double q) {
  std::vector<std::size_t> idx(values.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return values[a] < values[b]; });
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  double acc = 0.0;
  for (auto i : idx) {
    acc += weights[i];
    if (acc >= q * total - 1e-15) return values[i];
  }
  return values[idx.back()];
}

struct SplitResult {
  std::vector<std::size_t> train, val, test;
  std::vector<double> cutpoints;
  std::vector<std::vector<std::size_t>> strata;
};

namespace detail {

/// Random order for weighted sampling without replacement: heavier items tend
/// to come first (key u^(1/w)); equal weights are shuffled.
inline std::vector<std::size_t> weighted_order(const std::vector<std::size_t>& items, const std::vector<double>& w,
                                               Rng& rng) {
  std::vector<std::pair<double, std::size_t>> keyed;
  for (auto i : items) {
    const double u = std::max(rng.uniform(), 1e-300);
    keyed.emplace_back(w[i] > 0 ? std::log(u) / w[i] : -std::numeric_limits<double>::infinity(), i);
  }
  std::stable_sort(keyed.begin(), keyed.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<std::size_t> out;
  for (const auto& [k, i] : keyed) out.push_back(i);
  return out;
}

/// Greedy fill of consecutive parts from an ordered list: each part takes
/// items until its weight first exceeds its target, keeping the crossing item
/// only if that lands closer to the target. The last part takes the rest.
inline std::vector<std::vector<std::size_t>> greedy_partition(const std::vector<std::size_t>& order,
                                                              const std::vector<double>& w,
                                                              const std::vector<double>& targets) {
  std::vector<std::vector<std::size_t>> parts(targets.size());
  std::size_t pos = 0;
  for (std::size_t p = 0; p + 1 < targets.size(); ++p) {
    double acc = 0.0;
    while (pos < order.size() && acc < targets[p]) {
      const double next = acc + w[order[pos]];
      if (next > targets[p] && std::abs(next - targets[p]) > std::abs(acc - targets[p]) && !parts[p].empty()) break;
      acc = next;
      parts[p].push_back(order[pos++]);
    }
  }
  for (; pos < order.size(); ++pos) parts.back().push_back(order[pos]);
  return parts;
}

}  // namespace detail

/// Strata by weighted quantiles of D, then a weighted greedy split inside
/// each stratum. Every split receives at least one point of a stratum that has
/// three or more.
inline SplitResult stratified_split(const std::vector<double>& omega, const std::vector<double>& kl,
                                    const std::vector<double>& ratios, int S, Rng& rng) {
  const std::size_t M = omega.size();
  if (M < 3) throw InvalidInput("stratified split needs at least 3 points");
  if (kl.size() != M) throw InvalidInput("stratified split: omega and D differ in length");
  if (ratios.size() != 3 || std::any_of(ratios.begin(), ratios.end(), [](double r) { return !(r > 0); }) ||
      std::abs(ratios[0] + ratios[1] + ratios[2] - 1.0) > 1e-9) {
    throw InvalidInput("split ratios must be three positive numbers summing to 1");
  }
  if (S < 1) throw InvalidInput("need at least one stratum");

  SplitResult res;
  for (int s = 1; s < S; ++s) res.cutpoints.push_back(weighted_quantile(kl, omega, static_cast<double>(s) / S));
  res.strata.resize(static_cast<std::size_t>(S));
  for (std::size_t m = 0; m < M; ++m) {
    const auto s = static_cast<std::size_t>(
        std::lower_bound(res.cutpoints.begin(), res.cutpoints.end(), kl[m]) - res.cutpoints.begin());
    res.strata[s].push_back(m);
  }

  for (std::size_t s = 0; s < res.strata.size(); ++s) {
    const auto& members = res.strata[s];
    if (members.empty()) continue;
    Rng srng = rng.split(static_cast<std::uint64_t>(s));
    const auto order = detail::weighted_order(members, omega, srng);
    double W = 0.0;
    for (auto i : members) W += omega[i];
    auto parts = detail::greedy_partition(order, omega, {ratios[0] * W, ratios[1] * W, ratios[2] * W});
    if (members.size() >= 3) {
      for (std::size_t p = 0; p < 3; ++p) {
        if (!parts[p].empty()) continue;
        auto donor = std::max_element(parts.begin(), parts.end(),
                                      [](const auto& a, const auto& b) { return a.size() < b.size(); });
        parts[p].push_back(donor->back());
        donor->pop_back();
      }
    }
    res.train.insert(res.train.end(), parts[0].begin(), parts[0].end());
    res.val.insert(res.val.end(), parts[1].begin(), parts[1].end());
    res.test.insert(res.test.end(), parts[2].begin(), parts[2].end());
  }
  std::sort(res.train.begin(), res.train.end());
  std::sort(res.val.begin(), res.val.end());
  std::sort(res.test.begin(), res.test.end());
  return res;
}

// ---------------------------------------------------------------------------

struct EnsemblePoint {
  std::vector<double> w;
  double omega = 0.0;
  double kl = 0.0;
  double mse_hat = 0.0;
};

struct MetaDataset {
  SamplerParams params;
  std::vector<double> member_mse;  // MSE of the top-K members, in order
  std::vector<std::string> member_ids;
  std::vector<double> w_star;
  std::vector<EnsemblePoint> points;
  std::vector<std::size_t> train, val, test;
  std::vector<double> strata_cutpoints;

  std::vector<double> omegas(const std::vector<std::size_t>& idx) const {
    std::vector<double> out;
    for (auto i : idx) out.push_back(points.at(i).omega);
    return out;
  }
};

/// Samples M ensemble points around the inverse-MSE optimum, weights them and splits them.
inline MetaDataset build_meta_dataset(const std::vector<double>& member_mse, const SamplerParams& p, std::uint64_t seed,
                                      std::vector<std::string> member_ids = {}) {
  MetaDataset ds;
  ds.params = p;
  ds.member_mse = member_mse;
  ds.member_ids = std::move(member_ids);
  ds.w_star = optimal_weights(member_mse, p.eps);
  Rng rng = Rng(seed).split("meta-dataset");
  Rng draw_rng = rng.split("weights");
  const auto draws = sample_weights(ds.w_star, p, p.M, draw_rng);
  std::vector<double> kl, mse_hat;
  for (const auto& w : draws) {
    EnsemblePoint pt;
    pt.w = w;
    pt.kl = kl_divergence(w, ds.w_star, p.delta / 10.0);
    for (std::size_t k = 0; k < w.size(); ++k) pt.mse_hat += w[k] * member_mse[k];
    kl.push_back(pt.kl);
    mse_hat.push_back(pt.mse_hat);
    ds.points.push_back(std::move(pt));
  }
  const auto omega = importance_weights(kl, mse_hat, p.alpha, p.beta, p.eps);
  for (std::size_t m = 0; m < omega.size(); ++m) ds.points[m].omega = omega[m];
  Rng split_rng = rng.split("split");
  const auto split =
      stratified_split(omega, kl, {p.train_ratio, p.val_ratio, p.test_ratio}, p.strata, split_rng);
  ds.train = split.train;
  ds.val = split.val;
  ds.test = split.test;
  ds.strata_cutpoints = split.cutpoints;
  return ds;
}

inline constexpr int kDatasetSchemaVersion = 1;

inline nlohmann::json to_json(const SamplerParams& p) {
  return {{"L", p.L},           {"tau_min", p.tau_min},         {"rho", p.rho},
          {"delta", p.delta},   {"alpha", p.alpha},             {"beta", p.beta},
          {"eps", p.eps},       {"strata", p.strata},           {"M", p.M},
          {"ratios", {p.train_ratio, p.val_ratio, p.test_ratio}}};
}

inline SamplerParams sampler_params_from_json(const nlohmann::json& j) {
  SamplerParams p;
  p.L = j.value("L", p.L);
  p.tau_min = j.value("tau_min", p.tau_min);
  p.rho = j.value("rho", p.rho);
  p.delta = j.value("delta", p.delta);
  p.alpha = j.value("alpha", p.alpha);
  p.beta = j.value("beta", p.beta);
  p.eps = j.value("eps", p.eps);
  p.strata = j.value("strata", p.strata);
  p.M = j.value("M", p.M);
  if (j.contains("ratios")) {
    const auto r = j.at("ratios").get<std::vector<double>>();
    if (r.size() != 3) throw SchemaError("ratios must have three entries");
    p.train_ratio = r[0];
    p.val_ratio = r[1];
    p.test_ratio = r[2];
  }
  return p;
}

inline nlohmann::json to_json(const MetaDataset& d) {
  nlohmann::json pts = nlohmann::json::array();
  for (const auto& p : d.points) pts.push_back({{"w", p.w}, {"omega", p.omega}, {"kl", p.kl}, {"mse_hat", p.mse_hat}});
  return {{"schema_version", kDatasetSchemaVersion},
          {"params", to_json(d.params)},
          {"members", {{"ids", d.member_ids}, {"mse", d.member_mse}}},
          {"w_star", d.w_star},
          {"points", pts},
          {"splits", {{"train", d.train}, {"val", d.val}, {"test", d.test}}},
          {"strata_cutpoints", d.strata_cutpoints}};
}

inline MetaDataset meta_dataset_from_json(const nlohmann::json& j) {
  try {
    const int version = j.at("schema_version").get<int>();
    if (version != kDatasetSchemaVersion) throw SchemaError("unsupported dataset schema_version " + std::to_string(version));
    MetaDataset d;
    d.params = sampler_params_from_json(j.at("params"));
    d.member_ids = j.at("members").at("ids").get<std::vector<std::string>>();
    d.member_mse = j.at("members").at("mse").get<std::vector<double>>();
    d.w_star = j.at("w_star").get<std::vector<double>>();
    for (const auto& p : j.at("points")) {
      d.points.push_back({p.at("w").get<std::vector<double>>(), p.at("omega").get<double>(), p.at("kl").get<double>(),
                          p.at("mse_hat").get<double>()});
    }
    d.train = j.at("splits").at("train").get<std::vector<std::size_t>>();
    d.val = j.at("splits").at("val").get<std::vector<std::size_t>>();
    d.test = j.at("splits").at("test").get<std::vector<std::size_t>>();
    d.strata_cutpoints = j.at("strata_cutpoints").get<std::vector<double>>();
    for (const auto& idx : {d.train, d.val, d.test}) {
      for (auto i : idx) {
        if (i >= d.points.size()) throw SchemaError("split index out of range");
      }
    }
    return d;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("malformed meta-dataset: ") + e.what());
  }
}

}  // namespace simopt
