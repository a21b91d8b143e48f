#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "panda/common.hpp"

namespace panda {

enum class Family { Gaussian, Bernoulli, Poisson, Exponential, NegBinomial };

// Family plus its nuisance parameter. Links are fixed per family:
// identity, logit, log, log, log (NegBinomial models the mean, r known).
struct NodeFamily {
  Family family = Family::Gaussian;
  double nb_r = 1.0;

  static NodeFamily gaussian() { return {Family::Gaussian, 0.0}; }
  static NodeFamily bernoulli() { return {Family::Bernoulli, 0.0}; }
  static NodeFamily poisson() { return {Family::Poisson, 0.0}; }
  static NodeFamily exponential() { return {Family::Exponential, 0.0}; }
  static NodeFamily negbinomial(double r) {
    if (!(r >= 1)) throw ValidationError("negbinomial r must be >= 1");
    return {Family::NegBinomial, r};
  }
};

inline const char* family_name(Family f) {
  switch (f) {
    case Family::Gaussian: return "gaussian";
    case Family::Bernoulli: return "bernoulli";
    case Family::Poisson: return "poisson";
    case Family::Exponential: return "exponential";
    case Family::NegBinomial: return "negbinomial";
  }
  return "?";
}

namespace detail {

inline double softplus(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

// log(e^eta + r), stable for large |eta|
inline double log_exp_plus(double eta, double r) {
  return eta > 0 ? eta + std::log1p(r * std::exp(-eta))
                 : std::log(r) + std::log1p(std::exp(eta) / r);
}

inline double sigmoid(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

}  // namespace detail

inline double obs_mean(const NodeFamily& f, double eta) {
  switch (f.family) {
    case Family::Gaussian: return eta;
    case Family::Bernoulli: return detail::sigmoid(eta);
    default: return std::exp(eta);
  }
}

// Per-observation negative log-likelihood at linear predictor eta.
// Gaussian uses unit dispersion and drops the 2*pi constant.
inline double obs_nll(const NodeFamily& f, double y, double eta) {
  switch (f.family) {
    case Family::Gaussian: {
      double r = y - eta;
      return 0.5 * r * r;
    }
    case Family::Bernoulli:
      return detail::softplus(eta) - y * eta;
    case Family::Poisson:
      return std::exp(eta) - y * eta + std::lgamma(y + 1.0);
    case Family::Exponential:
      return eta + y * std::exp(-eta);
    case Family::NegBinomial:
      return (y + f.nb_r) * detail::log_exp_plus(eta, f.nb_r) - y * eta -
             f.nb_r * std::log(f.nb_r);
  }
  return 0.0;
}

// d/d eta of obs_nll
inline double obs_score(const NodeFamily& f, double y, double eta) {
  switch (f.family) {
    case Family::Gaussian: return eta - y;
    case Family::Bernoulli: return detail::sigmoid(eta) - y;
    case Family::Poisson: return std::exp(eta) - y;
    case Family::Exponential: return 1.0 - y * std::exp(-eta);
    case Family::NegBinomial: {
      double mu = std::exp(eta);
      return (y + f.nb_r) * mu / (mu + f.nb_r) - y;
    }
  }
  return 0.0;
}

// Observed information, d2/d eta2 of obs_nll. Nonnegative for every family here.
inline double obs_info(const NodeFamily& f, double y, double eta) {
  switch (f.family) {
    case Family::Gaussian: return 1.0;
    case Family::Bernoulli: {
      double p = detail::sigmoid(eta);
      return p * (1.0 - p);
    }
    case Family::Poisson: return std::exp(eta);
    case Family::Exponential: return y * std::exp(-eta);
    case Family::NegBinomial: {
      double mu = std::exp(eta);
      double d = mu + f.nb_r;
      return (y + f.nb_r) * mu * f.nb_r / (d * d);
    }
  }
  return 0.0;
}

// Expected information E[obs_info] under the model at eta.
inline double obs_expinfo(const NodeFamily& f, double eta) {
  switch (f.family) {
    case Family::Gaussian: return 1.0;
    case Family::Bernoulli: {
      double p = detail::sigmoid(eta);
      return p * (1.0 - p);
    }
    case Family::Poisson: return std::exp(eta);
    case Family::Exponential: return 1.0;
    case Family::NegBinomial: {
      double mu = std::exp(eta);
      return mu * f.nb_r / (mu + f.nb_r);
    }
  }
  return 0.0;
}

inline void validate_response(const NodeFamily& f, const Eigen::VectorXd& y) {
  for (int i = 0; i < y.size(); ++i) {
    double v = y(i);
    if (!std::isfinite(v)) throw ValidationError("non-finite response at row " + std::to_string(i));
    switch (f.family) {
      case Family::Gaussian: break;
      case Family::Bernoulli:
        if (v != 0.0 && v != 1.0)
          throw ValidationError("bernoulli response must be 0/1 at row " + std::to_string(i));
        break;
      case Family::Poisson:
      case Family::NegBinomial:
        if (v < 0.0)
          throw ValidationError("count response must be nonnegative at row " + std::to_string(i));
        break;
      case Family::Exponential:
        if (v <= 0.0)
          throw ValidationError("exponential response must be positive at row " + std::to_string(i));
        break;
    }
  }
}

// Observed rows plus synthetic noise rows sharing one constant pseudo-response.
struct AugmentedDesign {
  Eigen::MatrixXd X;   // n x q observed covariates
  Eigen::VectorXd y;   // n observed responses
  Eigen::MatrixXd E;   // n_e x q noise rows (0 x q allowed)
  double y_aug = 0.0;  // pseudo-response attached to every noise row

  void validate() const {
    if (X.rows() != y.size()) throw ValidationError("design rows and response length differ");
    if (E.size() > 0 && E.cols() != X.cols())
      throw ValidationError("noise block column count differs from design");
    if (X.rows() + E.rows() < X.cols())
      throw ValidationError("augmented design needs at least as many rows as columns");
  }
};

inline double augmented_nll(const NodeFamily& f, const AugmentedDesign& d,
                            const Eigen::VectorXd& theta) {
  double s = 0.0;
  Eigen::VectorXd eta = d.X * theta;
  for (int i = 0; i < eta.size(); ++i) s += obs_nll(f, d.y(i), eta(i));
  if (d.E.rows() > 0) {
    Eigen::VectorXd etae = d.E * theta;
    for (int i = 0; i < etae.size(); ++i) s += obs_nll(f, d.y_aug, etae(i));
  }
  return s;
}

inline double neg_log_likelihood(const NodeFamily& f, const Eigen::MatrixXd& X,
                                 const Eigen::VectorXd& y, const Eigen::VectorXd& theta) {
  if (X.rows() != y.size()) throw ValidationError("design rows and response length differ");
  if (X.cols() != theta.size()) throw ValidationError("design cols and theta length differ");
  double s = 0.0;
  Eigen::VectorXd eta = X * theta;
  for (int i = 0; i < eta.size(); ++i) s += obs_nll(f, y(i), eta(i));
  return s;
}

// Normal equations (x'x + e'e) theta = x'y + e' y_aug via a positive-definite
// factorization, with a pivoted least-squares fallback on rank deficiency.
inline Eigen::VectorXd fit_ols(const AugmentedDesign& d) {
  d.validate();
  const int n = static_cast<int>(d.X.rows());
  const int ne = static_cast<int>(d.E.rows());
  const int q = static_cast<int>(d.X.cols());
  Eigen::MatrixXd S = d.X.transpose() * d.X;
  Eigen::VectorXd b = d.X.transpose() * d.y;
  if (ne > 0) {
    S.noalias() += d.E.transpose() * d.E;
    b.noalias() += d.E.transpose() * Eigen::VectorXd::Constant(ne, d.y_aug);
  }
  Eigen::LLT<Eigen::MatrixXd> llt(S);
  if (llt.info() == Eigen::Success) return llt.solve(b);
  Eigen::MatrixXd Z(n + ne, q);
  Z.topRows(n) = d.X;
  if (ne > 0) Z.bottomRows(ne) = d.E;
  Eigen::VectorXd w(n + ne);
  w.head(n) = d.y;
  if (ne > 0) w.tail(ne).setConstant(d.y_aug);
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Z);
  if (qr.rank() < q) throw NumericalError("rank-deficient augmented design");
  return qr.solve(w);
}

struct FitOptions {
  int max_iter = 100;
  double tol = 1e-8;  // on the score norm relative to 1 + |loss|
  int max_halvings = 20;
  std::optional<Eigen::VectorXd> init;
};

struct FitResult {
  Eigen::VectorXd theta;
  bool converged = false;
  int iters = 0;
  double nll = 0.0;              // augmented NLL at theta
  std::vector<double> nll_path;  // NLL after each accepted step
};

// Damped Newton with observed information (equals IRLS for these families).
// Gaussian routes to fit_ols so both paths give identical output.
inline FitResult fit_glm(const NodeFamily& f, const AugmentedDesign& d,
                         const FitOptions& opt = {}) {
  d.validate();
  validate_response(f, d.y);
  if (f.family == Family::Gaussian) {
    FitResult res;
    res.theta = fit_ols(d);
    res.converged = true;
    res.nll = augmented_nll(f, d, res.theta);
    res.nll_path = {res.nll};
    return res;
  }
  const int q = static_cast<int>(d.X.cols());
  Eigen::VectorXd theta =
      opt.init ? *opt.init : Eigen::VectorXd::Zero(q);
  if (theta.size() != q) throw ValidationError("fit_glm init has wrong length");
  double nll = augmented_nll(f, d, theta);
  if (!std::isfinite(nll)) throw NumericalError("fit_glm: non-finite loss at start");
  std::vector<double> path{nll};

  Eigen::VectorXd g(q);
  Eigen::MatrixXd H(q, q);
  for (int it = 1; it <= opt.max_iter; ++it) {
    Eigen::VectorXd eta = d.X * theta;
    Eigen::VectorXd sc(eta.size()), wi(eta.size());
    for (int i = 0; i < eta.size(); ++i) {
      sc(i) = obs_score(f, d.y(i), eta(i));
      wi(i) = obs_info(f, d.y(i), eta(i));
    }
    g.noalias() = d.X.transpose() * sc;
    H.noalias() = d.X.transpose() * wi.asDiagonal() * d.X;
    if (d.E.rows() > 0) {
      Eigen::VectorXd etae = d.E * theta;
      Eigen::VectorXd sce(etae.size()), wie(etae.size());
      for (int i = 0; i < etae.size(); ++i) {
        sce(i) = obs_score(f, d.y_aug, etae(i));
        wie(i) = obs_info(f, d.y_aug, etae(i));
      }
      g.noalias() += d.E.transpose() * sce;
      H.noalias() += d.E.transpose() * wie.asDiagonal() * d.E;
    }
    if (!g.allFinite() || !H.allFinite())
      throw FitDivergence("fit_glm: non-finite score or information", theta);

    if (g.norm() <= opt.tol * (1.0 + std::abs(nll))) {
      return {theta, true, it - 1, nll, std::move(path)};
    }

    Eigen::VectorXd step = H.ldlt().solve(-g);
    double scale = 1.0;
    Eigen::VectorXd cand;
    double cand_nll = 0.0;
    bool ok = false;
    for (int h = 0; h <= opt.max_halvings; ++h) {
      cand = theta + scale * step;
      cand_nll = augmented_nll(f, d, cand);
      if (std::isfinite(cand_nll) && cand_nll <= nll) {
        ok = true;
        break;
      }
      scale *= 0.5;
    }
    if (!ok) {
      cand = theta + scale * step;  // smallest step; next pass re-evaluates
      cand_nll = augmented_nll(f, d, cand);
      if (!std::isfinite(cand_nll)) throw FitDivergence("fit_glm: step failure", theta);
    }
    theta = cand;
    nll = cand_nll;
    path.push_back(nll);
  }
  throw FitDivergence("fit_glm: no convergence in " + std::to_string(opt.max_iter) + " iterations",
                      theta);
}

}  // namespace panda
