#pragma once

#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "simopt/errors.hpp"
#include "simopt/rng.hpp"

namespace simopt {

/// Matérn-5/2 ARD hyperparameters.
struct GpHyper {
  std::vector<double> lengthscales;
  double signal_var = 1.0;
  double noise_var = 1e-4;
};

struct GpFitOptions {
  bool fit_hyper = true;
  int restarts = 20;
  int max_evals_per_start = 40;
  // Search box for the log-parameters.
  double min_lengthscale = 0.01, max_lengthscale = 10.0;
  double min_signal = 0.05, max_signal = 20.0;
  double min_noise = 1e-6, max_noise = 1.0;
};

inline double matern52(double r) {
  const double s = std::sqrt(5.0) * r;
  return (1.0 + s + s * s / 3.0) * std::exp(-s);
}

/// Kernel matrix between the rows of A and the rows of B.
inline Eigen::MatrixXd matern52_kernel(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B, const GpHyper& h) {
  Eigen::MatrixXd K(A.rows(), B.rows());
  const auto d = A.cols();
  for (Eigen::Index i = 0; i < A.rows(); ++i) {
    for (Eigen::Index j = 0; j < B.rows(); ++j) {
      double r2 = 0.0;
      for (Eigen::Index k = 0; k < d; ++k) {
        const double t = (A(i, k) - B(j, k)) / h.lengthscales[static_cast<std::size_t>(k)];
        r2 += t * t;
      }
      K(i, j) = h.signal_var * matern52(std::sqrt(r2));
    }
  }
  return K;
}

/// Cholesky of K + noise I with jitter escalation 1e-10 .. 1e-4.
inline Eigen::LLT<Eigen::MatrixXd> robust_cholesky(const Eigen::MatrixXd& K, double noise_var, double* jitter_used) {
  const Eigen::Index n = K.rows();
  Eigen::MatrixXd A = K;
  A.diagonal().array() += noise_var;
  Eigen::LLT<Eigen::MatrixXd> llt(A);
  if (llt.info() == Eigen::Success) {
    if (jitter_used) *jitter_used = 0.0;
    return llt;
  }
  for (double jitter = 1e-10; jitter <= 1e-4 * 1.0001; jitter *= 10.0) {
    Eigen::MatrixXd B = A;
    B.diagonal().array() += jitter;
    llt.compute(B);
    if (llt.info() == Eigen::Success) {
      if (jitter_used) *jitter_used = jitter;
      return llt;
    }
  }
  throw IllConditioned("kernel matrix of " + std::to_string(n) + " points is not positive definite even with jitter 1e-4");
}

struct GpPrediction {
  Eigen::VectorXd mean;
  Eigen::VectorXd sd;
};

/// Gaussian-process surrogate with standardised targets. Means and standard
/// deviations come back in the original y units.
class GaussianProcess {
 public:
  GaussianProcess() = default;

  /// Fit on rows of `X`. With `opt.fit_hyper`, maximises the log marginal
  /// likelihood by multi-start coordinate search starting from `init`.
  static GaussianProcess fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const GpHyper& init,
                             const GpFitOptions& opt = {}, Rng* rng = nullptr) {
    if (X.rows() != y.size()) throw InvalidInput("GP inputs and targets differ in count");
    GaussianProcess gp;
    gp.X_ = X;
    gp.dim_ = X.cols();
    const auto n = y.size();
    gp.y_mean_ = n > 0 ? y.mean() : 0.0;
    double sd = n > 1 ? std::sqrt((y.array() - gp.y_mean_).square().sum() / static_cast<double>(n - 1)) : 1.0;
    gp.y_scale_ = sd > 1e-12 ? sd : 1.0;
    gp.ys_ = n > 0 ? Eigen::VectorXd((y.array() - gp.y_mean_) / gp.y_scale_) : Eigen::VectorXd();
    gp.hyper_ = init;
    if (gp.hyper_.lengthscales.size() != static_cast<std::size_t>(gp.dim_)) {
      gp.hyper_.lengthscales.assign(static_cast<std::size_t>(gp.dim_), init.lengthscales.empty() ? 0.3 : init.lengthscales[0]);
    }
    if (opt.fit_hyper && n >= 2 && rng) gp.hyper_ = gp.maximise_likelihood(opt, *rng);
    gp.factorise();
    return gp;
  }

  const GpHyper& hyper() const { return hyper_; }
  Eigen::Index size() const { return X_.rows(); }
  double jitter() const { return jitter_; }

  /// Log marginal likelihood of the standardised targets.
  double log_marginal_likelihood(const GpHyper& h) const {
    const auto n = ys_.size();
    if (n == 0) return 0.0;
    const Eigen::MatrixXd K = matern52_kernel(X_, X_, h);
    Eigen::MatrixXd A = K;
    A.diagonal().array() += h.noise_var;
    Eigen::LLT<Eigen::MatrixXd> llt(A);
    if (llt.info() != Eigen::Success) return -std::numeric_limits<double>::infinity();
    const Eigen::VectorXd alpha = llt.solve(ys_);
    const Eigen::MatrixXd L = llt.matrixL();
    return -0.5 * ys_.dot(alpha) - L.diagonal().array().log().sum() -
           0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi);
  }

  /// Posterior of the latent function at the rows of Q.
  GpPrediction predict(const Eigen::MatrixXd& Q) const {
    GpPrediction p;
    const auto m = Q.rows();
    p.mean.resize(m);
    p.sd.resize(m);
    if (X_.rows() == 0) {
      p.mean.setConstant(y_mean_);
      p.sd.setConstant(std::sqrt(hyper_.signal_var) * y_scale_);
      return p;
    }
    const Eigen::MatrixXd Ks = matern52_kernel(X_, Q, hyper_);  // n x m
    const Eigen::VectorXd mu = Ks.transpose() * alpha_;
    const Eigen::MatrixXd V = llt_.matrixL().solve(Ks);
    for (Eigen::Index j = 0; j < m; ++j) {
      const double var = hyper_.signal_var - V.col(j).squaredNorm();
      p.mean(j) = mu(j) * y_scale_ + y_mean_;
      p.sd(j) = std::sqrt(std::max(0.0, var)) * y_scale_;
    }
    return p;
  }

  std::pair<double, double> posterior(std::span<const double> x) const {
    Eigen::MatrixXd q = Eigen::Map<const Eigen::RowVectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
    const auto p = predict(q);
    return {p.mean(0), p.sd(0)};
  }

  /// Full posterior covariance at the rows of Q (original units).
  Eigen::MatrixXd posterior_cov(const Eigen::MatrixXd& Q) const {
    Eigen::MatrixXd Kqq = matern52_kernel(Q, Q, hyper_);
    if (X_.rows() > 0) {
      const Eigen::MatrixXd V = llt_.matrixL().solve(matern52_kernel(X_, Q, hyper_));
      Kqq -= V.transpose() * V;
    }
    return Kqq * (y_scale_ * y_scale_);
  }

  double y_mean() const { return y_mean_; }
  double y_scale() const { return y_scale_; }

 private:
  void factorise() {
    if (X_.rows() == 0) return;
    llt_ = robust_cholesky(matern52_kernel(X_, X_, hyper_), hyper_.noise_var, &jitter_);
    alpha_ = llt_.solve(ys_);
  }

  GpHyper maximise_likelihood(const GpFitOptions& opt, Rng& rng) const {
    const auto d = static_cast<std::size_t>(dim_);
    const std::size_t np = d + 2;
    std::vector<double> lo(np), hi(np);
    for (std::size_t i = 0; i < d; ++i) {
      lo[i] = std::log(opt.min_lengthscale);
      hi[i] = std::log(opt.max_lengthscale);
    }
    lo[d] = std::log(opt.min_signal);
    hi[d] = std::log(opt.max_signal);
    lo[d + 1] = std::log(opt.min_noise);
    hi[d + 1] = std::log(opt.max_noise);

    auto to_hyper = [&](const std::vector<double>& t) {
      GpHyper h;
      for (std::size_t i = 0; i < d; ++i) h.lengthscales.push_back(std::exp(t[i]));
      h.signal_var = std::exp(t[d]);
      h.noise_var = std::exp(t[d + 1]);
      return h;
    };
    auto clampv = [&](std::vector<double>& t) {
      for (std::size_t i = 0; i < np; ++i) t[i] = std::clamp(t[i], lo[i], hi[i]);
    };

    std::vector<double> start(np);
    for (std::size_t i = 0; i < d; ++i) start[i] = std::log(hyper_.lengthscales[i]);
    start[d] = std::log(hyper_.signal_var);
    start[d + 1] = std::log(hyper_.noise_var);
    clampv(start);

    std::vector<double> best_t = start;
    double best = log_marginal_likelihood(to_hyper(start));
    for (int s = 0; s < opt.restarts; ++s) {
      std::vector<double> t(np);
      if (s == 0) {
        t = start;
      } else {
        for (std::size_t i = 0; i < np; ++i) t[i] = rng.uniform(lo[i], hi[i]);
      }
      double f = log_marginal_likelihood(to_hyper(t));
      int evals = 1;
      double step = 1.0;
      while (step > 0.05 && evals < opt.max_evals_per_start) {
        bool improved = false;
        for (std::size_t i = 0; i < np && evals < opt.max_evals_per_start; ++i) {
          for (double dir : {1.0, -1.0}) {
            std::vector<double> c = t;
            c[i] += dir * step;
            clampv(c);
            if (c[i] == t[i]) continue;
            const double fc = log_marginal_likelihood(to_hyper(c));
            ++evals;
            if (fc > f) {
              t = std::move(c);
              f = fc;
              improved = true;
              break;
            }
          }
        }
        if (!improved) step *= 0.5;
      }
      if (f > best) {
        best = f;
        best_t = t;
      }
    }
    return to_hyper(best_t);
  }

  Eigen::MatrixXd X_;
  Eigen::VectorXd ys_;
  Eigen::Index dim_ = 0;
  double y_mean_ = 0.0;
  double y_scale_ = 1.0;
  GpHyper hyper_;
  Eigen::LLT<Eigen::MatrixXd> llt_;
  Eigen::VectorXd alpha_;
  double jitter_ = 0.0;
};

// ---------------------------------------------------------------------------
// Acquisition functions (minimisation)

enum class AcquisitionKind { EI, UCB, PI };

struct AcquisitionParams {
  double xi = 0.01;   // improvement margin for EI / PI
  double kappa = 2.0; // exploration weight for UCB
};

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }
inline double normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); }

inline double expected_improvement(double mu, double sigma, double best, double xi) {
  const double imp = best - mu - xi;
  if (sigma <= 0.0) return std::max(imp, 0.0);
  const double z = imp / sigma;
  return imp * normal_cdf(z) + sigma * normal_pdf(z);
}

inline double probability_of_improvement(double mu, double sigma, double best, double xi) {
  const double imp = best - mu - xi;
  if (sigma <= 0.0) return imp > 0.0 ? 1.0 : 0.0;
  return normal_cdf(imp / sigma);
}

/// Negated lower confidence bound, so larger is better.
inline double ucb_score(double mu, double sigma, double kappa) { return -(mu - kappa * sigma); }

inline double acquisition(double mu, double sigma, double best, AcquisitionKind kind, const AcquisitionParams& p) {
  sigma = std::max(0.0, sigma);
  switch (kind) {
    case AcquisitionKind::EI:
      return expected_improvement(mu, sigma, best, p.xi);
    case AcquisitionKind::PI:
      return probability_of_improvement(mu, sigma, best, p.xi);
    case AcquisitionKind::UCB:
      return ucb_score(mu, sigma, p.kappa);
  }
  return 0.0;
}

}  // namespace simopt
