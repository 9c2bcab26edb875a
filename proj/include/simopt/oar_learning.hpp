#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "simopt/structural_model.hpp"
#include "simopt/table.hpp"

namespace simopt {

struct TrainConfig {
  double lambda = 1.0;  // E-step consistency weight
  double gamma = 0.1;   // M-step end-to-end weight
  int rounds = 10;      // R
  int starts = 3;       // S
  int e_steps = 25;     // K_E
  int patience = 3;     // tau, in EM rounds

  double learning_rate = 0.1;
  double e_learning_rate = 0.5;  // per-sample step for latent updates
  int stage0_steps = 3000;
  int m_steps = 600;
  int check_every = 10;
  int check_patience = 20;  // early-stop patience, in checks

  double train_ratio = 0.7;
  double val_ratio = 0.15;
  double test_ratio = 0.15;

  MechanismFamily family = MechanismFamily::FeedForward;
  std::vector<int> hidden_sizes{16};
  Activation activation = Activation::Tanh;
  std::size_t min_samples = 10;

  MechanismSpec mechanism_template() const {
    MechanismSpec s;
    s.family = family;
    s.hidden_sizes = hidden_sizes;
    s.activation = activation;
    return s;
  }

  void validate() const {
    if (!(lambda > 0) || !(gamma >= 0)) throw InvalidInput("lambda must be > 0 and gamma >= 0");
    if (rounds < 0 || starts < 1 || e_steps < 0 || patience < 1) throw InvalidInput("bad EM schedule settings");
    const double sum = train_ratio + val_ratio + test_ratio;
    if (train_ratio <= 0 || val_ratio <= 0 || test_ratio <= 0 || std::abs(sum - 1.0) > 1e-9) {
      throw InvalidInput("split ratios must be positive and sum to 1");
    }
  }
};

/// Historical observations: one column per sample.
struct Dataset {
  Eigen::MatrixXd x;                               // input_dim x n, raw units
  Eigen::RowVectorXd y;                            // raw objective
  std::map<std::string, Eigen::MatrixXd> latents;  // observed latent columns, raw units

  Eigen::Index size() const { return x.cols(); }

  Dataset subset(const std::vector<Eigen::Index>& idx) const {
    Dataset d;
    d.x.resize(x.rows(), static_cast<Eigen::Index>(idx.size()));
    d.y.resize(static_cast<Eigen::Index>(idx.size()));
    for (const auto& [name, m] : latents) d.latents[name].resize(m.rows(), static_cast<Eigen::Index>(idx.size()));
    for (std::size_t c = 0; c < idx.size(); ++c) {
      const auto i = idx[c];
      const auto cc = static_cast<Eigen::Index>(c);
      d.x.col(cc) = x.col(i);
      d.y(cc) = y(i);
      for (const auto& [name, m] : latents) d.latents[name].col(cc) = m.col(i);
    }
    return d;
  }
};

/// Maps a historical table (`x1..xd, y`, optional latent columns) onto a skeleton.
/// A latent of dim 1 uses its own name as column; higher dims use name_1..name_k.
inline Dataset dataset_from_table(const Table& t, const CausalSkeleton& skel) {
  int d = 0;
  for (const auto& in : skel.inputs()) d += skel.variable(in).dim;
  Dataset ds;
  const auto n = static_cast<Eigen::Index>(t.rows());
  ds.x.resize(d, n);
  for (int k = 0; k < d; ++k) {
    const auto& col = t.column("x" + std::to_string(k + 1));
    for (Eigen::Index i = 0; i < n; ++i) ds.x(k, i) = col[static_cast<std::size_t>(i)];
  }
  const auto& ycol = t.column("y");
  ds.y = Eigen::Map<const Eigen::RowVectorXd>(ycol.data(), n);
  for (const auto& name : skel.latents()) {
    const int dim = skel.variable(name).dim;
    std::vector<std::string> cols;
    if (dim == 1) {
      cols.push_back(name);
    } else {
      for (int k = 1; k <= dim; ++k) cols.push_back(name + "_" + std::to_string(k));
    }
    const bool present = std::all_of(cols.begin(), cols.end(), [&](const auto& c) { return t.find(c) >= 0; });
    if (!present) continue;
    Eigen::MatrixXd m(dim, n);
    for (int k = 0; k < dim; ++k) {
      const auto& col = t.column(cols[static_cast<std::size_t>(k)]);
      for (Eigen::Index i = 0; i < n; ++i) m(k, i) = col[static_cast<std::size_t>(i)];
    }
    ds.latents[name] = std::move(m);
  }
  return ds;
}

/// Training data in model units.
struct ModelData {
  NodeStates inputs;
  Eigen::MatrixXd y;  // 1 x n
  NodeStates observed;
  Eigen::Index n = 0;
};

inline ModelData to_model_units(const StructuralModel& model, const Dataset& d) {
  ModelData md;
  md.inputs = model.split_inputs(d.x);
  md.y = model.output_scaler.apply(d.y);
  for (const auto& [name, m] : d.latents) {
    auto it = model.latent_scalers.find(name);
    md.observed[name] = it == model.latent_scalers.end() ? m : it->second.apply(m);
  }
  md.n = d.size();
  return md;
}

namespace detail {

inline bool all_finite(const std::vector<double>& v) {
  return std::all_of(v.begin(), v.end(), [](double a) { return std::isfinite(a); });
}

inline std::span<double> node_slice(const StructuralModel& m, const std::string& node, std::vector<double>& g) {
  return {g.data() + m.param_offset(node), m.mechanism(node).param_count()};
}

/// Loss of one node against a target with every parent clamped:
/// mean_i ||f_j(pa_i) - t_i||^2, scaled by `weight`.
inline double node_loss(const StructuralModel& m, const std::string& node, const NodeStates& clamped,
                        const Eigen::MatrixXd& target, double weight, std::vector<double>* grad_params,
                        NodeStates* grad_states) {
  const Eigen::Index n = target.cols();
  const Eigen::MatrixXd pa = m.gather_parents(node, clamped, n);
  const auto& mech = m.mechanism(node);
  const Eigen::MatrixXd err = mech.forward(pa) - target;
  const double loss = weight * err.squaredNorm() / static_cast<double>(n);
  if (grad_params || grad_states) {
    const Eigen::MatrixXd g_out = (2.0 * weight / static_cast<double>(n)) * err;
    std::vector<double> scratch;
    std::span<double> slice;
    if (grad_params) {
      slice = node_slice(m, node, *grad_params);
    } else {
      scratch.assign(mech.param_count(), 0.0);
      slice = scratch;
    }
    const Eigen::MatrixXd g_in = mech.backward(pa, g_out, slice);
    if (grad_states) {
      m.scatter_parents(node, g_in, *grad_states);
      if (auto it = grad_states->find(node); it != grad_states->end()) it->second -= g_out;
    }
  }
  return loss;
}

}  // namespace detail

/// Pure forward-pass MSE (standardised units), optionally with its parameter gradient.
inline double forward_loss(const StructuralModel& m, const ModelData& d, std::vector<double>* grad) {
  const NodeStates states = m.forward_states(d.inputs);
  const auto& obj = m.objective();
  const Eigen::MatrixXd err = states.at(obj) - d.y;
  const double loss = err.squaredNorm() / static_cast<double>(d.n);
  if (grad) {
    NodeStates gs;
    for (const auto& node : m.topo_order()) gs[node] = Eigen::MatrixXd::Zero(states.at(node).rows(), d.n);
    gs[obj] = (2.0 / static_cast<double>(d.n)) * err;
    const auto& order = m.topo_order();
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      const Eigen::MatrixXd pa = m.gather_parents(*it, states, d.n);
      const Eigen::MatrixXd g_in = m.mechanism(*it).backward(pa, gs.at(*it), detail::node_slice(m, *it, *grad));
      m.scatter_parents(*it, g_in, gs);
    }
  }
  return loss;
}

/// All latent states per training sample, in model units.
using LatentAssignment = NodeStates;

inline NodeStates clamped_states(const ModelData& d, const LatentAssignment& z) {
  NodeStates s = d.inputs;
  for (const auto& [k, v] : z) s[k] = v;
  return s;
}

/// Objective fit with every latent clamped plus lambda times mechanism consistency.
/// `grad` receives d/dZ for the latents it contains.
inline double e_loss(const StructuralModel& m, const LatentAssignment& z, const ModelData& d, double lambda,
                     NodeStates* grad) {
  const NodeStates s = clamped_states(d, z);
  double loss = detail::node_loss(m, m.objective(), s, d.y, 1.0, nullptr, grad);
  for (const auto& node : m.skeleton().latents()) loss += detail::node_loss(m, node, s, z.at(node), lambda, nullptr, grad);
  return loss;
}

/// Per-node consistency (latents and objective, all clamped) plus gamma times the
/// pure forward MSE; gradient with respect to the flat parameter vector.
inline double m_loss(const StructuralModel& m, const LatentAssignment& z, const ModelData& d, double gamma,
                     std::vector<double>* grad) {
  const NodeStates s = clamped_states(d, z);
  double loss = detail::node_loss(m, m.objective(), s, d.y, 1.0, grad, nullptr);
  for (const auto& node : m.skeleton().latents()) loss += detail::node_loss(m, node, s, z.at(node), 1.0, grad, nullptr);
  if (gamma > 0.0) {
    std::vector<double> g;
    if (grad) g.assign(grad->size(), 0.0);
    loss += gamma * forward_loss(m, d, grad ? &g : nullptr);
    if (grad) {
      for (std::size_t i = 0; i < g.size(); ++i) (*grad)[i] += gamma * g[i];
    }
  }
  return loss;
}

/// Mechanism-consistency part of e_loss, unweighted.
inline double consistency_loss(const StructuralModel& m, const LatentAssignment& z, const ModelData& d) {
  const NodeStates s = clamped_states(d, z);
  double loss = 0.0;
  for (const auto& node : m.skeleton().latents()) loss += detail::node_loss(m, node, s, z.at(node), 1.0, nullptr, nullptr);
  return loss;
}

struct DescentOptions {
  int max_steps = 1000;
  double learning_rate = 0.1;
  int check_every = 10;
  int check_patience = 20;
  double min_learning_rate = 1e-14;
};

struct DescentReport {
  double initial_loss = 0.0;
  double final_loss = 0.0;
  double best_val = std::numeric_limits<double>::infinity();
  int steps = 0;
  int best_step = 0;
  bool stopped_early = false;
  bool diverged = false;
  int restarts = 0;
};

/// Full-batch gradient descent. A step that does not lower the loss (or makes it
/// non-finite) is rejected and the step size halved; accepted steps let it grow
/// back towards the configured rate. With `val`, returns the best-validation
/// checkpoint seen at check points.
inline DescentReport descend(std::vector<double>& params,
                             const std::function<double(const std::vector<double>&, std::vector<double>*)>& loss_grad,
                             const std::function<double(const std::vector<double>&)>& val, const DescentOptions& opt) {
  DescentReport rep;
  std::vector<double> g(params.size(), 0.0);
  double loss = loss_grad(params, &g);
  rep.initial_loss = loss;
  if (!std::isfinite(loss) || !detail::all_finite(g)) {
    rep.diverged = true;
    rep.final_loss = loss;
    return rep;
  }
  std::vector<double> best = params;
  if (val) rep.best_val = val(params);
  int stall = 0;
  double lr = opt.learning_rate;
  std::vector<double> trial(params.size());
  for (int step = 1; step <= opt.max_steps; ++step) {
    bool accepted = false;
    double trial_loss = loss;
    while (lr >= opt.min_learning_rate) {
      for (std::size_t i = 0; i < params.size(); ++i) trial[i] = params[i] - lr * g[i];
      trial_loss = loss_grad(trial, nullptr);
      if (std::isfinite(trial_loss) && trial_loss <= loss) {
        accepted = true;
        break;
      }
      lr *= 0.5;
    }
    if (!accepted) break;
    params.swap(trial);
    std::fill(g.begin(), g.end(), 0.0);
    loss = loss_grad(params, &g);
    rep.steps = step;
    lr = std::min(lr * 1.2, opt.learning_rate);
    if (!detail::all_finite(g)) {
      rep.diverged = true;
      break;
    }
    if (val && step % opt.check_every == 0) {
      const double v = val(params);
      if (v < rep.best_val) {
        rep.best_val = v;
        rep.best_step = step;
        best = params;
        stall = 0;
      } else if (++stall >= opt.check_patience) {
        rep.stopped_early = true;
        break;
      }
    }
  }
  if (val) {
    const double v = val(params);
    if (v < rep.best_val) {
      rep.best_val = v;
      rep.best_step = rep.steps;
      best = params;
    }
    params = best;
    rep.final_loss = loss_grad(params, nullptr);
  } else {
    rep.final_loss = loss;
  }
  return rep;
}

namespace detail {

/// Runs descent over the model parameters, restarting with a halved rate when
/// the loss is non-finite (up to three restarts).
inline DescentReport fit_params(StructuralModel& model,
                                const std::function<double(const StructuralModel&, std::vector<double>*)>& loss,
                                const ModelData& val, DescentOptions opt, const char* what) {
  const std::vector<double> start = model.flat_params();
  StructuralModel work = model;
  auto lg = [&](const std::vector<double>& p, std::vector<double>* g) {
    work.set_flat_params(p);
    return loss(work, g);
  };
  auto vf = [&](const std::vector<double>& p) {
    work.set_flat_params(p);
    return forward_loss(work, val, nullptr);
  };
  for (int attempt = 0; attempt <= 3; ++attempt) {
    std::vector<double> p = start;
    DescentReport rep = descend(p, lg, vf, opt);
    rep.restarts = attempt;
    if (!rep.diverged) {
      model.set_flat_params(p);
      return rep;
    }
    spdlog::debug("{}: non-finite loss, restarting with learning rate {}", what, opt.learning_rate * 0.5);
    opt.learning_rate *= 0.5;
  }
  throw TrainingDiverged(std::string(what) + ": loss stayed non-finite after 3 restarts");
}

inline DescentOptions options_for(const TrainConfig& cfg, int steps) {
  DescentOptions o;
  o.max_steps = steps;
  o.learning_rate = cfg.learning_rate;
  o.check_every = cfg.check_every;
  o.check_patience = cfg.check_patience;
  return o;
}

}  // namespace detail

/// End-to-end fit through the pure forward pass, early-stopped on validation.
inline StructuralModel stage0_fit(StructuralModel model, const ModelData& train, const ModelData& val,
                                  const TrainConfig& cfg, DescentReport* report = nullptr) {
  if (train.n == 0 || val.n == 0) throw InsufficientData("stage-0 fit needs non-empty train and validation sets");
  auto rep = detail::fit_params(
      model, [&](const StructuralModel& m, std::vector<double>* g) { return forward_loss(m, train, g); }, val,
      detail::options_for(cfg, cfg.stage0_steps), "stage-0 fit");
  if (report) *report = rep;
  return model;
}

/// Latents from a forward pass, with observed latents taking their data values.
inline LatentAssignment init_latents(const StructuralModel& m, const ModelData& d) {
  const NodeStates s = m.forward_states(d.inputs, &d.observed);
  LatentAssignment z;
  for (const auto& node : m.skeleton().latents()) z[node] = s.at(node);
  return z;
}

/// K_E descent steps on the free latents with parameters fixed.
inline LatentAssignment e_step(const StructuralModel& m, LatentAssignment z, const ModelData& d, double lambda,
                               int k_e, double step_size = 0.5) {
  if (k_e <= 0) return z;
  std::vector<std::string> free;
  for (const auto& node : m.skeleton().latents()) {
    if (!d.observed.count(node)) free.push_back(node);
  }
  if (free.empty()) return z;
  double loss = e_loss(m, z, d, lambda, nullptr);
  if (!std::isfinite(loss)) return z;
  double lr = step_size * static_cast<double>(d.n);
  for (int k = 0; k < k_e; ++k) {
    NodeStates g;
    for (const auto& node : free) g[node] = Eigen::MatrixXd::Zero(z.at(node).rows(), d.n);
    e_loss(m, z, d, lambda, &g);
    bool accepted = false;
    while (lr > 1e-14 * static_cast<double>(d.n)) {
      LatentAssignment trial = z;
      for (const auto& node : free) trial[node] -= lr * g.at(node);
      const double l = e_loss(m, trial, d, lambda, nullptr);
      if (std::isfinite(l) && l <= loss) {
        z = std::move(trial);
        loss = l;
        accepted = true;
        break;
      }
      lr *= 0.5;
    }
    if (!accepted) break;
    lr = std::min(lr * 1.2, step_size * static_cast<double>(d.n));
  }
  return z;
}

/// Refits all mechanisms on fixed latents, early-stopped on validation.
inline StructuralModel m_step(StructuralModel model, const LatentAssignment& z, const ModelData& train,
                              const ModelData& val, double gamma, const TrainConfig& cfg,
                              DescentReport* report = nullptr) {
  auto rep = detail::fit_params(
      model, [&](const StructuralModel& m, std::vector<double>* g) { return m_loss(m, z, train, gamma, g); }, val,
      detail::options_for(cfg, cfg.m_steps), "M-step");
  if (report) *report = rep;
  return model;
}

/// Residual scale of every mechanism on the training set, used for sampling.
inline void estimate_noise(StructuralModel& m, const LatentAssignment& z, const ModelData& d) {
  const NodeStates s = clamped_states(d, z);
  for (const auto& node : m.topo_order()) {
    const Eigen::MatrixXd target = node == m.objective() ? d.y : z.at(node);
    const Eigen::MatrixXd err = m.mechanism(node).forward(m.gather_parents(node, s, d.n)) - target;
    auto& sd = m.noise_std(node);
    for (Eigen::Index r = 0; r < err.rows(); ++r) {
      sd[static_cast<std::size_t>(r)] = d.n > 1 ? std::sqrt(err.row(r).squaredNorm() / static_cast<double>(d.n - 1)) : 0.0;
    }
  }
}

struct DataSplit {
  std::vector<Eigen::Index> train, val, test;
};

/// Shuffled split by ratio; every part gets at least one sample.
inline DataSplit split_indices(Eigen::Index n, const TrainConfig& cfg, std::uint64_t seed) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng = Rng(seed).split("split");
  std::shuffle(idx.begin(), idx.end(), rng);
  auto n_val = std::max<Eigen::Index>(1, std::llround(cfg.val_ratio * static_cast<double>(n)));
  auto n_test = std::max<Eigen::Index>(1, std::llround(cfg.test_ratio * static_cast<double>(n)));
  const auto n_train = n - n_val - n_test;
  if (n_train < 1) throw InsufficientData("too few samples to split");
  DataSplit s;
  s.train.assign(idx.begin(), idx.begin() + n_train);
  s.val.assign(idx.begin() + n_train, idx.begin() + n_train + n_val);
  s.test.assign(idx.begin() + n_train + n_val, idx.end());
  return s;
}

/// Fresh model with scalers fitted on `train` and parameters drawn from `rng`.
inline StructuralModel make_initial_model(const CausalSkeleton& skel, const Dataset& train, const TrainConfig& cfg,
                                          Rng& rng) {
  StructuralModel m(skel, cfg.mechanism_template());
  if (!m.objective_reachable()) throw UnreachableObjective("objective is not reachable from any input");
  m.input_scaler = AffineScaler::fit(train.x);
  m.output_scaler = AffineScaler::fit(train.y);
  for (const auto& [name, v] : train.latents) m.latent_scalers[name] = AffineScaler::fit(v);
  m.initialize(rng);
  Domain dom;
  for (Eigen::Index r = 0; r < train.x.rows(); ++r) dom.bounds.push_back({train.x.row(r).minCoeff(), train.x.row(r).maxCoeff()});
  m.domain = dom;
  return m;
}

/// Raw-unit MSE of the pure forward pass.
inline double raw_mse(const StructuralModel& m, const Dataset& d) {
  return (m.predict(d.x) - d.y).squaredNorm() / static_cast<double>(d.size());
}

struct StartSummary {
  double val_mse = 0.0;   // best validation checkpoint, model units
  double test_mse = 0.0;  // raw units
  int rounds_run = 0;
};

struct LearnResult {
  StructuralModel model;
  std::vector<StartSummary> starts;
  std::size_t best_start = 0;
};

/// Stage-0 plus alternating E/M rounds per start; keeps the start with the
/// lowest test MSE.
inline LearnResult learn_oar(const Dataset& data, const CausalSkeleton& skel, const TrainConfig& cfg,
                             std::uint64_t seed) {
  cfg.validate();
  if (!skel.objective_reachable()) throw UnreachableObjective("objective is not reachable from any input");
  if (static_cast<std::size_t>(data.size()) < cfg.min_samples) {
    throw InsufficientData("need at least " + std::to_string(cfg.min_samples) + " samples, got " +
                           std::to_string(data.size()));
  }
  const DataSplit split = split_indices(data.size(), cfg, seed);
  const Dataset train_raw = data.subset(split.train);
  const Dataset val_raw = data.subset(split.val);
  const Dataset test_raw = data.subset(split.test);

  LearnResult result;
  double best_test = std::numeric_limits<double>::infinity();
  for (int s = 0; s < cfg.starts; ++s) {
    Rng rng = Rng(seed).split("start").split(static_cast<std::uint64_t>(s));
    StructuralModel model = make_initial_model(skel, train_raw, cfg, rng);
    const ModelData train = to_model_units(model, train_raw);
    const ModelData val = to_model_units(model, val_raw);

    model = stage0_fit(std::move(model), train, val, cfg);
    LatentAssignment z = init_latents(model, train);
    StructuralModel best = model;
    LatentAssignment best_z = z;
    double best_val = forward_loss(model, val, nullptr);
    int stall = 0, rounds = 0;
    for (int r = 0; r < cfg.rounds; ++r) {
      ++rounds;
      z = e_step(model, std::move(z), train, cfg.lambda, cfg.e_steps, cfg.e_learning_rate);
      model = m_step(std::move(model), z, train, val, cfg.gamma, cfg);
      const double v = forward_loss(model, val, nullptr);
      if (v < best_val) {
        best_val = v;
        best = model;
        best_z = z;
        stall = 0;
      } else if (++stall >= cfg.patience) {
        break;
      }
    }
    estimate_noise(best, best_z, train);
    best.mse_test = raw_mse(best, test_raw);
    spdlog::debug("learn_oar start {}: val {:.6g}, test {:.6g}, rounds {}", s, best_val, best.mse_test, rounds);
    result.starts.push_back({best_val, best.mse_test, rounds});
    if (best.mse_test < best_test) {
      best_test = best.mse_test;
      result.model = std::move(best);
      result.best_start = static_cast<std::size_t>(s);
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr int kModelSchemaVersion = 1;

inline nlohmann::json to_json(const AffineScaler& s) { return {{"mean", s.mean}, {"scale", s.scale}}; }
inline AffineScaler scaler_from_json(const nlohmann::json& j) {
  return {j.at("mean").get<std::vector<double>>(), j.at("scale").get<std::vector<double>>()};
}

inline nlohmann::json to_json(const Domain& d) {
  nlohmann::json lo = nlohmann::json::array(), hi = nlohmann::json::array(), integral = nlohmann::json::array();
  for (std::size_t i = 0; i < d.dimension(); ++i) {
    lo.push_back(d.bounds[i].lo);
    hi.push_back(d.bounds[i].hi);
    integral.push_back(d.is_integral(i));
  }
  return {{"lower", lo}, {"upper", hi}, {"integral", integral}};
}
inline Domain domain_from_json(const nlohmann::json& j) {
  const auto lo = j.at("lower").get<std::vector<double>>();
  const auto hi = j.at("upper").get<std::vector<double>>();
  if (lo.size() != hi.size()) throw SchemaError("domain bounds differ in length");
  Domain d;
  for (std::size_t i = 0; i < lo.size(); ++i) {
    if (!(lo[i] <= hi[i])) throw SchemaError("domain lower bound exceeds upper bound");
    d.bounds.push_back({lo[i], hi[i]});
  }
  if (j.contains("integral")) d.integral = j.at("integral").get<std::vector<bool>>();
  return d;
}

inline nlohmann::json to_json(const StructuralModel& m) {
  nlohmann::json mech = nlohmann::json::object(), noise = nlohmann::json::object();
  for (const auto& node : m.topo_order()) {
    mech[node] = m.mechanism(node).params();
    noise[node] = m.noise_std(node);
  }
  const auto& spec = m.mechanism(m.objective()).spec();
  nlohmann::json latent_scalers = nlohmann::json::object();
  for (const auto& [k, v] : m.latent_scalers) latent_scalers[k] = to_json(v);
  return {{"schema_version", kModelSchemaVersion},
          {"skeleton", to_json(m.skeleton())},
          {"mechanism", {{"family", to_string(spec.family)},
                         {"hidden_sizes", spec.hidden_sizes},
                         {"activation", to_string(spec.activation)}}},
          {"input_scaler", to_json(m.input_scaler)},
          {"output_scaler", to_json(m.output_scaler)},
          {"latent_scalers", latent_scalers},
          {"domain", to_json(m.domain)},
          {"params", mech},
          {"noise_std", noise},
          {"mse_test", m.mse_test}};
}

inline StructuralModel model_from_json(const nlohmann::json& j) {
  try {
    const int version = j.at("schema_version").get<int>();
    if (version != kModelSchemaVersion) throw SchemaError("unsupported model schema_version " + std::to_string(version));
    MechanismSpec tmpl;
    const auto& mj = j.at("mechanism");
    tmpl.family = parse_family(mj.at("family").get<std::string>());
    tmpl.hidden_sizes = mj.at("hidden_sizes").get<std::vector<int>>();
    tmpl.activation = parse_activation(mj.at("activation").get<std::string>());
    StructuralModel m(skeleton_from_json(j.at("skeleton")), tmpl);
    m.input_scaler = scaler_from_json(j.at("input_scaler"));
    m.output_scaler = scaler_from_json(j.at("output_scaler"));
    if (j.contains("latent_scalers")) {
      for (const auto& [k, v] : j.at("latent_scalers").items()) m.latent_scalers[k] = scaler_from_json(v);
    }
    m.domain = domain_from_json(j.at("domain"));
    for (const auto& node : m.topo_order()) {
      auto p = j.at("params").at(node).get<std::vector<double>>();
      if (p.size() != m.mechanism(node).param_count()) throw SchemaError("parameter count mismatch for " + node);
      m.mechanism(node).params() = std::move(p);
      auto sd = j.at("noise_std").at(node).get<std::vector<double>>();
      if (sd.size() != m.noise_std(node).size()) throw SchemaError("noise_std size mismatch for " + node);
      m.noise_std(node) = std::move(sd);
    }
    m.mse_test = j.at("mse_test").get<double>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("malformed model checkpoint: ") + e.what());
  }
}

}  // namespace simopt
