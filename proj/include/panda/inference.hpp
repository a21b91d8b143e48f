#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "panda/common.hpp"
#include "panda/engine.hpp"
#include "panda/glm.hpp"
#include "panda/ngd.hpp"
#include "panda/normal.hpp"

// Asymptotic inference for noise-regularized GLM coefficients: augmented
// information, per-iteration sandwich covariance, between-iteration variance,
// and normal-quantile confidence intervals built from banked snapshots.

namespace panda {

struct InferenceReport {
  Eigen::VectorXd theta_bar;       // mean over the banked snapshots
  Eigen::MatrixXd sigma_bar;       // mean per-iteration sandwich covariance
  Eigen::MatrixXd lambda_between;  // sample covariance across snapshots
  Eigen::MatrixXd total;           // sigma_bar + (1 + 1/r) * lambda_between
  Eigen::VectorXd se;              // sqrt of total's diagonal
  std::vector<std::pair<double, double>> intervals;
  double df_nu = 0.0;  // effective degrees of freedom (linear case)
  double level = 0.95;
};

namespace detail {

// covariance matrix of one noise row: diagonal kinds fill the diagonal,
// fused-ridge scatters its per-group blocks
inline Eigen::MatrixXd noise_row_cov(const NoiseSpec& spec, const NoiseModel& nm, int q) {
  Eigen::MatrixXd C = Eigen::MatrixXd::Zero(q, q);
  if (nm.diagonal) {
    C.diagonal() = nm.var;
  } else {
    for (std::size_t l = 0; l < spec.groups.size(); ++l) {
      const auto& g = spec.groups[l];
      const auto& B = nm.group_cov[l];
      for (std::size_t a = 0; a < g.size(); ++a)
        for (std::size_t b = 0; b < g.size(); ++b)
          C(g[a], g[b]) = B(a, b);
    }
  }
  return C;
}

inline Eigen::MatrixXd weighted_gram(const Eigen::MatrixXd& X, const Eigen::VectorXd& w) {
  return X.transpose() * w.asDiagonal() * X;
}

}  // namespace detail

// Expected augmented information at theta: the observed-data block X'WX with
// the family's expected weights plus the noise-block expectation
// n_e * w(theta0) * Cov(noise row). With an intercept the noise rows carry a
// leading one, adding n_e * w(theta0) at (0,0); theta0 is 0 otherwise.
inline Eigen::MatrixXd fisher_augmented(const NodeFamily& f, const Eigen::MatrixXd& X,
                                        const NoiseSpec& spec,
                                        const Eigen::VectorXd& theta, int n_e,
                                        bool intercept = false) {
  const int q = static_cast<int>(X.cols());
  if (theta.size() != q) throw ValidationError("theta length differs from column count");
  if (!theta.allFinite()) throw ValidationError("theta must be finite");
  if (n_e < 0) throw ValidationError("n_e must be >= 0");
  const int qs = intercept ? q - 1 : q;
  if (qs < 1) throw ValidationError("no penalized columns");

  Eigen::VectorXd eta = X * theta;
  Eigen::VectorXd w(eta.size());
  for (int i = 0; i < eta.size(); ++i) w(i) = obs_expinfo(f, eta(i));
  Eigen::MatrixXd I = detail::weighted_gram(X, w);

  if (n_e > 0) {
    spec.validate(qs);
    Eigen::VectorXd slopes = intercept ? Eigen::VectorXd(theta.tail(qs)) : theta;
    NoiseModel nm = noise_variance(spec, slopes, n_e);
    Eigen::MatrixXd C = detail::noise_row_cov(spec, nm, qs);
    const double theta0 = intercept ? theta(0) : 0.0;
    const double w0 = obs_expinfo(f, theta0);
    if (intercept) {
      I(0, 0) += n_e * w0;
      I.bottomRightCorner(qs, qs) += n_e * w0 * C;
    } else {
      I += n_e * w0 * C;
    }
  }
  return I;
}

// Empirical variant: the exact Hessian of the augmented negative
// log-likelihood at theta, using the realized noise block.
inline Eigen::MatrixXd fisher_augmented(const NodeFamily& f, const AugmentedDesign& d,
                                        const Eigen::VectorXd& theta) {
  d.validate();
  if (theta.size() != d.X.cols())
    throw ValidationError("theta length differs from column count");
  if (!theta.allFinite()) throw ValidationError("theta must be finite");

  Eigen::VectorXd eta = d.X * theta;
  Eigen::VectorXd w(eta.size());
  for (int i = 0; i < eta.size(); ++i) w(i) = obs_info(f, d.y(i), eta(i));
  Eigen::MatrixXd I = detail::weighted_gram(d.X, w);

  if (d.E.rows() > 0) {
    Eigen::VectorXd etae = d.E * theta;
    Eigen::VectorXd we(etae.size());
    for (int i = 0; i < etae.size(); ++i) we(i) = obs_info(f, d.y_aug, etae(i));
    I += detail::weighted_gram(d.E, we);
  }
  return I;
}

// Per-iteration sandwich covariance M^-1 I_x M^-1 with M the expected
// augmented information and I_x the observed-data information, both at theta.
// sigma2 scales the result (Gaussian residual variance; 1 otherwise).
inline Eigen::MatrixXd sandwich_covariance(const NodeFamily& f, const Eigen::MatrixXd& X,
                                           const NoiseSpec& spec,
                                           const Eigen::VectorXd& theta, int n_e,
                                           double sigma2 = 1.0, bool intercept = false) {
  if (!(sigma2 > 0)) throw ValidationError("sigma2 must be > 0");
  Eigen::MatrixXd M = fisher_augmented(f, X, spec, theta, n_e, intercept);

  Eigen::VectorXd eta = X * theta;
  Eigen::VectorXd w(eta.size());
  for (int i = 0; i < eta.size(); ++i) w(i) = obs_expinfo(f, eta(i));
  Eigen::MatrixXd Ix = detail::weighted_gram(X, w);

  Eigen::LLT<Eigen::MatrixXd> llt(M);
  if (llt.info() != Eigen::Success)
    throw NumericalError("augmented information not positive definite");
  Eigen::MatrixXd A = llt.solve(Ix);             // M^-1 I_x
  Eigen::MatrixXd S = llt.solve(A.transpose());  // M^-1 I_x M^-1
  Eigen::MatrixXd sym = 0.5 * sigma2 * (S + S.transpose());
  return sym;
}

struct LinearSigma2 {
  double sigma2 = 0.0;
  double nu = 0.0;
};

// Residual-variance estimate for the linear model with effective degrees of
// freedom nu = trace(X M^-1 X').
inline LinearSigma2 linear_sigma2(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                  const Eigen::VectorXd& theta, const Eigen::MatrixXd& M) {
  const int n = static_cast<int>(X.rows());
  if (y.size() != n) throw ValidationError("design rows and response length differ");
  if (theta.size() != X.cols())
    throw ValidationError("theta length differs from column count");
  if (M.rows() != X.cols() || M.cols() != X.cols())
    throw ValidationError("M dimension differs from column count");

  Eigen::LDLT<Eigen::MatrixXd> ldlt(M);
  LinearSigma2 out;
  out.nu = ldlt.solve(X.transpose() * X).trace();
  if (!(n - out.nu > 0)) throw NumericalError("effective dof reaches sample size");
  out.sigma2 = (y - X * theta).squaredNorm() / (n - out.nu);
  return out;
}

// Intervals from r post-convergence snapshots and their per-iteration
// covariances: total = mean covariance + (1 + 1/r) * between-snapshot sample
// covariance; interval k is theta_bar_k +- z_{(1+level)/2} * sqrt(total_kk).
inline InferenceReport confidence_intervals(const std::vector<Eigen::VectorXd>& snapshots,
                                            const std::vector<Eigen::MatrixXd>& covariances,
                                            double level) {
  const int r = static_cast<int>(snapshots.size());
  if (r < 2) throw ValidationError("need at least two snapshots");
  if (covariances.size() != snapshots.size())
    throw ValidationError("snapshot and covariance counts differ");
  if (!(level > 0 && level < 1)) throw ValidationError("level must be in (0,1)");
  const int q = static_cast<int>(snapshots[0].size());
  for (const auto& s : snapshots)
    if (s.size() != q) throw ValidationError("snapshot lengths differ");
  for (const auto& c : covariances)
    if (c.rows() != q || c.cols() != q) throw ValidationError("covariance size mismatch");

  InferenceReport rep;
  rep.level = level;
  rep.theta_bar = Eigen::VectorXd::Zero(q);
  for (const auto& s : snapshots) rep.theta_bar += s;
  rep.theta_bar /= r;

  rep.sigma_bar = Eigen::MatrixXd::Zero(q, q);
  for (const auto& c : covariances) rep.sigma_bar += c;
  rep.sigma_bar /= r;

  rep.lambda_between = Eigen::MatrixXd::Zero(q, q);
  for (const auto& s : snapshots) {
    Eigen::VectorXd d = s - rep.theta_bar;
    rep.lambda_between.noalias() += d * d.transpose();
  }
  rep.lambda_between /= (r - 1);

  rep.total = rep.sigma_bar + (1.0 + 1.0 / r) * rep.lambda_between;
  const double z = normal_quantile(0.5 * (1.0 + level));
  rep.se.resize(q);
  rep.intervals.resize(q);
  for (int k = 0; k < q; ++k) {
    rep.se(k) = std::sqrt(std::max(rep.total(k, k), 0.0));
    rep.intervals[k] = {rep.theta_bar(k) - z * rep.se(k),
                        rep.theta_bar(k) + z * rep.se(k)};
  }
  return rep;
}

// Full pipeline for a finished single-regression run: per-snapshot sandwich
// covariances at the banked raw fits, then interval assembly.
inline InferenceReport run_inference(const GlmEstimate& est, const NodeFamily& family,
                                     const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                     const NoiseSpec& spec, const PandaConfig& cfg,
                                     double level = 0.95) {
  const int n = static_cast<int>(X.rows());
  const int qs = static_cast<int>(X.cols());
  const bool icpt = est.intercept;
  Eigen::MatrixXd Xd(n, qs + (icpt ? 1 : 0));
  if (icpt) {
    Xd.col(0).setOnes();
    Xd.rightCols(qs) = X;
  } else {
    Xd = X;
  }

  NoiseSpec nspec = spec;
  if (nspec.kind == Noise::AdaptiveLasso && nspec.consistent.size() == 0) {
    const bool gauss = family.family == Family::Gaussian;
    Eigen::VectorXd pt = detail::adaptive_pilot(family, Xd, y, gauss ? 0.0 : y.mean(),
                                                cfg.init_ridge, icpt ? 1 : 0);
    nspec.consistent = icpt ? Eigen::VectorXd(pt.tail(qs)) : pt;
  }

  const double sigma2 = family.family == Family::Gaussian ? est.sigma2 : 1.0;
  std::vector<Eigen::MatrixXd> covs;
  covs.reserve(est.snapshots.size());
  for (const auto& snap : est.snapshots)
    covs.push_back(
        sandwich_covariance(family, Xd, nspec, snap, cfg.n_e, sigma2, icpt));

  InferenceReport rep = confidence_intervals(est.snapshots, covs, level);
  rep.df_nu = est.nu;
  return rep;
}

}  // namespace panda
