#pragma once

#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "simopt/mechanism.hpp"
#include "simopt/skeleton.hpp"
#include "simopt/system.hpp"

namespace simopt {

/// Node name -> state matrix (dim x samples).
using NodeStates = std::map<std::string, Eigen::MatrixXd>;

/// Per-component affine standardisation: z = (v - mean) / scale.
struct AffineScaler {
  std::vector<double> mean;
  std::vector<double> scale;

  static AffineScaler identity(std::size_t n) { return {std::vector<double>(n, 0.0), std::vector<double>(n, 1.0)}; }

  static AffineScaler fit(const Eigen::MatrixXd& values) {
    AffineScaler s;
    for (Eigen::Index r = 0; r < values.rows(); ++r) {
      const double m = values.row(r).mean();
      double var = values.cols() > 1 ? (values.row(r).array() - m).square().sum() / (values.cols() - 1) : 0.0;
      const double sd = std::sqrt(var);
      s.mean.push_back(m);
      s.scale.push_back(sd > 1e-12 ? sd : 1.0);
    }
    return s;
  }

  Eigen::MatrixXd apply(const Eigen::MatrixXd& v) const {
    Eigen::MatrixXd out = v;
    for (Eigen::Index r = 0; r < v.rows(); ++r) out.row(r) = (v.row(r).array() - mean[r]) / scale[r];
    return out;
  }
  Eigen::MatrixXd invert(const Eigen::MatrixXd& v) const {
    Eigen::MatrixXd out = v;
    for (Eigen::Index r = 0; r < v.rows(); ++r) out.row(r) = v.row(r).array() * scale[r] + mean[r];
    return out;
  }
};

struct ForwardResult {
  double y = 0.0;
  std::map<std::string, std::vector<double>> states;
};

/// Structural replica: one mechanism per latent/objective node of a skeleton.
///
/// Internally everything runs in standardised units. `input_scaler` maps the
/// raw decision vector, `output_scaler` the objective; latent states live in
/// their own learned units (standardised when the latent is observed).
class StructuralModel {
 public:
  StructuralModel() = default;

  StructuralModel(CausalSkeleton skeleton, const MechanismSpec& family_template)
      : skeleton_(std::move(skeleton)) {
    if (!skeleton_.is_valid()) throw InvalidInput("skeleton is not a valid DAG");
    objective_ = skeleton_.objective();
    reachable_ = skeleton_.objective_reachable();
    for (const auto& name : skeleton_.topological_order()) {
      const auto& var = skeleton_.variable(name);
      if (var.kind == VariableKind::Input) continue;
      topo_order_.push_back(name);
      MechanismSpec spec = family_template;
      spec.node = name;
      spec.input_dim = 0;
      for (const auto& p : skeleton_.parents(name)) spec.input_dim += skeleton_.variable(p).dim;
      spec.output_dim = var.kind == VariableKind::Objective ? 1 : var.dim;
      mechanisms_.emplace(name, Mechanism(spec));
      noise_std_[name] = std::vector<double>(static_cast<std::size_t>(spec.output_dim), 0.0);
    }
    input_dim_ = 0;
    for (const auto& x : skeleton_.inputs()) input_dim_ += skeleton_.variable(x).dim;
    input_scaler = AffineScaler::identity(static_cast<std::size_t>(input_dim_));
    output_scaler = AffineScaler::identity(1);
  }

  const CausalSkeleton& skeleton() const { return skeleton_; }
  const std::vector<std::string>& topo_order() const { return topo_order_; }
  const std::string& objective() const { return objective_; }
  int input_dim() const { return input_dim_; }
  bool objective_reachable() const { return reachable_; }

  Mechanism& mechanism(const std::string& node) { return mechanisms_.at(node); }
  const Mechanism& mechanism(const std::string& node) const { return mechanisms_.at(node); }
  std::vector<double>& noise_std(const std::string& node) { return noise_std_.at(node); }
  const std::vector<double>& noise_std(const std::string& node) const { return noise_std_.at(node); }

  void initialize(Rng& rng) {
    for (const auto& node : topo_order_) {
      Rng r = rng.split(node);
      mechanisms_.at(node).initialize(r);
    }
  }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& node : topo_order_) n += mechanisms_.at(node).param_count();
    return n;
  }

  /// All parameters, concatenated in topological order.
  std::vector<double> flat_params() const {
    std::vector<double> out;
    out.reserve(param_count());
    for (const auto& node : topo_order_) {
      const auto& p = mechanisms_.at(node).params();
      out.insert(out.end(), p.begin(), p.end());
    }
    return out;
  }
  void set_flat_params(std::span<const double> flat) {
    if (flat.size() != param_count()) throw InvalidInput("parameter vector has wrong length");
    std::size_t off = 0;
    for (const auto& node : topo_order_) {
      auto& p = mechanisms_.at(node).params();
      std::copy(flat.begin() + off, flat.begin() + off + p.size(), p.begin());
      off += p.size();
    }
  }
  /// Offset of a node's block inside the flat parameter vector.
  std::size_t param_offset(const std::string& node) const {
    std::size_t off = 0;
    for (const auto& n : topo_order_) {
      if (n == node) return off;
      off += mechanisms_.at(n).param_count();
    }
    throw UnknownVariable(node);
  }

  /// Concatenated parent states of `node`.
  Eigen::MatrixXd gather_parents(const std::string& node, const NodeStates& states, Eigen::Index n) const {
    const auto& spec = mechanisms_.at(node).spec();
    Eigen::MatrixXd in(spec.input_dim, n);
    Eigen::Index row = 0;
    for (const auto& p : skeleton_.parents(node)) {
      const auto& s = states.at(p);
      in.middleRows(row, s.rows()) = s;
      row += s.rows();
    }
    return in;
  }

  /// Splits the gradient w.r.t. a concatenated parent input back to parents.
  void scatter_parents(const std::string& node, const Eigen::MatrixXd& grad_in, NodeStates& grads) const {
    Eigen::Index row = 0;
    for (const auto& p : skeleton_.parents(node)) {
      const auto d = skeleton_.variable(p).dim;
      auto it = grads.find(p);
      if (it != grads.end()) it->second += grad_in.middleRows(row, d);
      row += d;
    }
  }

  /// Standardised input states, one entry per input node, from raw decision columns.
  NodeStates split_inputs(const Eigen::MatrixXd& raw_x) const {
    if (raw_x.rows() != input_dim_) throw InvalidInput("decision vector has wrong dimension");
    const Eigen::MatrixXd xs = input_scaler.apply(raw_x);
    NodeStates out;
    Eigen::Index row = 0;
    for (const auto& name : skeleton_.inputs()) {
      const auto d = skeleton_.variable(name).dim;
      out[name] = xs.middleRows(row, d);
      row += d;
    }
    return out;
  }

  /// Batch forward in standardised units. Clamped nodes take the supplied
  /// state instead of their mechanism output.
  NodeStates forward_states(const NodeStates& inputs, const NodeStates* clamp = nullptr) const {
    if (!reachable_) throw UnreachableObjective("no input reaches '" + objective_ + "'");
    NodeStates states = inputs;
    const Eigen::Index n = inputs.empty() ? 0 : inputs.begin()->second.cols();
    for (const auto& node : topo_order_) {
      if (clamp) {
        if (auto it = clamp->find(node); it != clamp->end()) {
          states[node] = it->second;
          continue;
        }
      }
      states[node] = mechanisms_.at(node).forward(gather_parents(node, states, n));
    }
    return states;
  }

  /// Single-point forward on the raw decision vector; returns the raw objective.
  ForwardResult forward(std::span<const double> x,
                        const std::map<std::string, std::vector<double>>* clamp = nullptr) const {
    Eigen::MatrixXd raw = Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
    NodeStates clamp_states;
    if (clamp) {
      for (const auto& [node, v] : *clamp) {
        clamp_states[node] = Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
      }
    }
    const auto states = forward_states(split_inputs(raw), clamp ? &clamp_states : nullptr);
    ForwardResult r;
    r.y = output_scaler.invert(states.at(objective_))(0, 0);
    for (const auto& node : topo_order_) {
      if (node == objective_) continue;
      const auto& s = states.at(node);
      r.states[node] = std::vector<double>(s.data(), s.data() + s.size());
    }
    return r;
  }

  /// Batch prediction of the raw objective (one column per point).
  Eigen::RowVectorXd predict(const Eigen::MatrixXd& raw_x) const {
    const auto states = forward_states(split_inputs(raw_x));
    return output_scaler.invert(states.at(objective_)).row(0);
  }

  /// One stochastic draw: every node adds Gaussian noise of its residual scale.
  double sample(std::span<const double> x, Rng& rng) const {
    Eigen::MatrixXd raw = Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
    NodeStates states = split_inputs(raw);
    for (const auto& node : topo_order_) {
      Eigen::MatrixXd s = mechanisms_.at(node).forward(gather_parents(node, states, 1));
      const auto& sd = noise_std_.at(node);
      for (Eigen::Index r = 0; r < s.rows(); ++r) {
        if (sd[static_cast<std::size_t>(r)] > 0.0) s(r, 0) += rng.normal(0.0, sd[static_cast<std::size_t>(r)]);
      }
      states[node] = std::move(s);
    }
    return output_scaler.invert(states.at(objective_))(0, 0);
  }

  AffineScaler input_scaler;
  AffineScaler output_scaler;
  /// Scalers of latents that were observed in the training data.
  std::map<std::string, AffineScaler> latent_scalers;
  /// Decision box the replica is meant to be queried on.
  Domain domain;
  double mse_test = 0.0;

 private:
  CausalSkeleton skeleton_;
  std::string objective_;
  bool reachable_ = false;
  int input_dim_ = 0;
  std::vector<std::string> topo_order_;
  std::map<std::string, Mechanism> mechanisms_;
  std::map<std::string, std::vector<double>> noise_std_;
};

/// A learned replica seen as a stochastic system over the input box.
class ReplicaSystem final : public StochasticSystem {
 public:
  ReplicaSystem(std::shared_ptr<const StructuralModel> model, Domain domain)
      : model_(std::move(model)), domain_(std::move(domain)) {}
  const Domain& domain() const override { return domain_; }
  double evaluate(std::span<const double> x, Rng& rng) const override { return model_->sample(x, rng); }

 private:
  std::shared_ptr<const StructuralModel> model_;
  Domain domain_;
};

}  // namespace simopt
