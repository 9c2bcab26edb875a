#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "simopt/errors.hpp"
#include "simopt/rng.hpp"

namespace simopt {

enum class MechanismFamily { FeedForward, Linear };
enum class Activation { Tanh, Relu };

inline std::string to_string(MechanismFamily f) { return f == MechanismFamily::Linear ? "linear" : "feed-forward-net"; }
inline std::string to_string(Activation a) { return a == Activation::Relu ? "relu" : "tanh"; }
inline MechanismFamily parse_family(const std::string& s) {
  if (s == "linear") return MechanismFamily::Linear;
  if (s == "feed-forward-net" || s == "mlp") return MechanismFamily::FeedForward;
  throw InvalidInput("unknown mechanism family '" + s + "'");
}
inline Activation parse_activation(const std::string& s) {
  if (s == "tanh") return Activation::Tanh;
  if (s == "relu") return Activation::Relu;
  throw InvalidInput("unknown activation '" + s + "'");
}

struct MechanismSpec {
  std::string node;
  MechanismFamily family = MechanismFamily::FeedForward;
  std::vector<int> hidden_sizes{16};
  Activation activation = Activation::Tanh;
  int input_dim = 0;   // sum of parent dims
  int output_dim = 1;  // the node's dim
};

/// Per-node map f_j from the concatenated parent state to the node state.
/// Works on batches: columns are samples.
class Mechanism {
 public:
  Mechanism() = default;
  explicit Mechanism(MechanismSpec spec) : spec_(std::move(spec)) {
    sizes_.push_back(spec_.input_dim);
    if (spec_.family == MechanismFamily::FeedForward) {
      for (int h : spec_.hidden_sizes) sizes_.push_back(h);
    }
    sizes_.push_back(spec_.output_dim);
    std::size_t n = 0;
    for (std::size_t l = 1; l < sizes_.size(); ++l) n += static_cast<std::size_t>(sizes_[l] * (sizes_[l - 1] + 1));
    params_.assign(n, 0.0);
  }

  const MechanismSpec& spec() const { return spec_; }
  std::size_t param_count() const { return params_.size(); }
  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }

  /// Scaled uniform initialisation.
  void initialize(Rng& rng) {
    std::size_t off = 0;
    for (std::size_t l = 1; l < sizes_.size(); ++l) {
      const int in = sizes_[l - 1], out = sizes_[l];
      const double limit = std::sqrt(6.0 / std::max(1, in + out));
      for (int k = 0; k < out * in; ++k) params_[off++] = rng.uniform(-limit, limit);
      for (int k = 0; k < out; ++k) params_[off++] = 0.0;
    }
  }

  Eigen::MatrixXd forward(const Eigen::MatrixXd& in) const {
    Eigen::MatrixXd a = in;
    std::size_t off = 0;
    for (std::size_t l = 1; l < sizes_.size(); ++l) {
      Eigen::MatrixXd z = layer(l, off, a);
      a = l + 1 < sizes_.size() ? activate(z) : z;
    }
    return a;
  }

  /// Adds d/dθ of sum(grad_out ∘ f(in)) into `grad_params`; returns d/d(in).
  Eigen::MatrixXd backward(const Eigen::MatrixXd& in, const Eigen::MatrixXd& grad_out,
                           std::span<double> grad_params) const {
    // Forward pass keeping every activation.
    std::vector<Eigen::MatrixXd> acts{in};
    std::vector<std::size_t> offsets;
    std::size_t off = 0;
    for (std::size_t l = 1; l < sizes_.size(); ++l) {
      offsets.push_back(off);
      Eigen::MatrixXd z = layer(l, off, acts.back());
      acts.push_back(l + 1 < sizes_.size() ? activate(z) : z);
    }
    Eigen::MatrixXd delta = grad_out;
    for (std::size_t l = sizes_.size() - 1; l >= 1; --l) {
      const int rows = sizes_[l], cols = sizes_[l - 1];
      const std::size_t o = offsets[l - 1];
      Eigen::Map<Eigen::MatrixXd> gw(grad_params.data() + o, rows, cols);
      Eigen::Map<Eigen::VectorXd> gb(grad_params.data() + o + rows * cols, rows);
      gw.noalias() += delta * acts[l - 1].transpose();
      gb += delta.rowwise().sum();
      Eigen::Map<const Eigen::MatrixXd> w(params_.data() + o, rows, cols);
      Eigen::MatrixXd prev = w.transpose() * delta;
      if (l - 1 >= 1) prev = prev.cwiseProduct(activation_derivative(acts[l - 1]));
      delta = std::move(prev);
    }
    return delta;
  }

 private:
  Eigen::MatrixXd layer(std::size_t l, std::size_t& off, const Eigen::MatrixXd& a) const {
    const int rows = sizes_[l], cols = sizes_[l - 1];
    Eigen::Map<const Eigen::MatrixXd> w(params_.data() + off, rows, cols);
    Eigen::Map<const Eigen::VectorXd> b(params_.data() + off + rows * cols, rows);
    off += static_cast<std::size_t>(rows * (cols + 1));
    Eigen::MatrixXd z = w * a;
    z.colwise() += b;
    return z;
  }

  Eigen::MatrixXd activate(const Eigen::MatrixXd& z) const {
    if (spec_.activation == Activation::Relu) return z.cwiseMax(0.0);
    return z.array().tanh().matrix();
  }

  // In terms of the activation output a = act(z).
  Eigen::MatrixXd activation_derivative(const Eigen::MatrixXd& a) const {
    if (spec_.activation == Activation::Relu) return (a.array() > 0.0).cast<double>().matrix();
    return (1.0 - a.array().square()).matrix();
  }

  MechanismSpec spec_;
  std::vector<int> sizes_;
  std::vector<double> params_;
};

}  // namespace simopt
