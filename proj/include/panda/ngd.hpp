#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "panda/common.hpp"
#include "panda/rng.hpp"

namespace panda {

enum class Noise { Bridge, ElasticNet, AdaptiveLasso, Scad, GroupLasso, FusedRidge };

inline const char* noise_name(Noise k) {
  switch (k) {
    case Noise::Bridge: return "bridge";
    case Noise::ElasticNet: return "elastic_net";
    case Noise::AdaptiveLasso: return "adaptive_lasso";
    case Noise::Scad: return "scad";
    case Noise::GroupLasso: return "group_lasso";
    case Noise::FusedRidge: return "fused_ridge";
  }
  return "?";
}

// Which penalty the noise variance encodes, and with what parameters.
// gamma doubles as the Bridge exponent and the AdaptiveLasso weight exponent.
struct NoiseSpec {
  Noise kind = Noise::Bridge;
  double lambda = 1.0;
  double gamma = 1.0;
  double sigma2 = 0.0;                     // ElasticNet ridge part
  double a = 3.7;                          // Scad shoulder
  Eigen::VectorXd consistent;              // AdaptiveLasso pilot estimate
  std::vector<std::vector<int>> groups;    // GroupLasso / FusedRidge partition
  bool group_size_factor = true;           // multiply group variance by sqrt(group size)
  double theta_floor = kThetaFloor;
  double var_cap = kVarCap;

  static NoiseSpec bridge(double lambda, double gamma) {
    NoiseSpec s;
    s.kind = Noise::Bridge;
    s.lambda = lambda;
    s.gamma = gamma;
    return s;
  }
  static NoiseSpec lasso(double lambda) { return bridge(lambda, 1.0); }
  static NoiseSpec ridge(double lambda) { return bridge(lambda, 0.0); }
  static NoiseSpec elastic_net(double lambda, double sigma2) {
    NoiseSpec s;
    s.kind = Noise::ElasticNet;
    s.lambda = lambda;
    s.sigma2 = sigma2;
    return s;
  }
  static NoiseSpec adaptive_lasso(double lambda, double gamma, Eigen::VectorXd pilot) {
    NoiseSpec s;
    s.kind = Noise::AdaptiveLasso;
    s.lambda = lambda;
    s.gamma = gamma;
    s.consistent = std::move(pilot);
    return s;
  }
  static NoiseSpec scad(double lambda, double a = 3.7) {
    NoiseSpec s;
    s.kind = Noise::Scad;
    s.lambda = lambda;
    s.a = a;
    return s;
  }
  static NoiseSpec group_lasso(double lambda, std::vector<std::vector<int>> groups,
                               bool size_factor = true) {
    NoiseSpec s;
    s.kind = Noise::GroupLasso;
    s.lambda = lambda;
    s.groups = std::move(groups);
    s.group_size_factor = size_factor;
    return s;
  }
  static NoiseSpec fused_ridge(double lambda, std::vector<std::vector<int>> groups) {
    NoiseSpec s;
    s.kind = Noise::FusedRidge;
    s.lambda = lambda;
    s.groups = std::move(groups);
    return s;
  }

  void validate(int q) const {
    if (!(lambda > 0) || !std::isfinite(lambda)) throw ValidationError("lambda must be > 0");
    if (!(theta_floor > 0)) throw ValidationError("theta_floor must be > 0");
    if (!(var_cap > 0)) throw ValidationError("var_cap must be > 0");
    switch (kind) {
      case Noise::Bridge:
        if (!(gamma >= 0 && gamma < 2)) throw ValidationError("bridge gamma must be in [0,2)");
        break;
      case Noise::ElasticNet:
        if (!(sigma2 >= 0)) throw ValidationError("elastic_net sigma2 must be >= 0");
        break;
      case Noise::AdaptiveLasso:
        if (!(gamma >= 0)) throw ValidationError("adaptive_lasso gamma must be >= 0");
        if (consistent.size() != q)
          throw ValidationError("adaptive_lasso pilot length differs from coefficient count");
        break;
      case Noise::Scad:
        if (!(a > 2)) throw ValidationError("scad a must be > 2");
        break;
      case Noise::GroupLasso:
      case Noise::FusedRidge: {
        std::vector<char> seen(q, 0);
        for (const auto& g : groups) {
          if (g.empty()) throw ValidationError("empty coefficient group");
          for (int k : g) {
            if (k < 0 || k >= q) throw ValidationError("group index out of range");
            if (seen[k]) throw ValidationError("coefficient appears in two groups");
            seen[k] = 1;
          }
        }
        for (int k = 0; k < q; ++k)
          if (!seen[k]) throw ValidationError("coefficient missing from group partition");
        break;
      }
    }
  }
};

// Per-coefficient variances, or per-group covariance blocks for FusedRidge.
struct NoiseModel {
  Eigen::VectorXd var;
  std::vector<Eigen::MatrixXd> group_cov;  // aligned with spec.groups
  bool diagonal = true;

  double max_var() const {
    double m = 0.0;
    if (diagonal) {
      for (int k = 0; k < var.size(); ++k) m = std::max(m, var(k));
    } else {
      for (const auto& c : group_cov)
        for (int i = 0; i < c.rows(); ++i) m = std::max(m, c(i, i));
    }
    return m;
  }
};

namespace detail {

// Circular first-difference factor: row s of T' gives theta_s - theta_{s+1 mod q}.
inline Eigen::MatrixXd fused_factor(int q) {
  Eigen::MatrixXd T = Eigen::MatrixXd::Zero(q, q);
  if (q == 1) return T;  // a singleton group has no differences to fuse
  for (int s = 0; s < q; ++s) T(s, s) = 1.0;
  for (int s = 0; s + 1 < q; ++s) T(s + 1, s) = -1.0;
  T(0, q - 1) = -1.0;
  return T;
}

inline double scad_variance(double t, double lambda, double a, double n_e) {
  const double b1 = lambda * n_e;
  const double b2 = a * b1;
  if (t < b1) return lambda / t;
  if (t <= b2) {
    double v = (a * lambda / t - lambda * lambda * n_e / (2.0 * t * t) - 1.0 / (2.0 * n_e)) /
               (a - 1.0);
    return std::max(v, 0.0);
  }
  return (a + 1.0) * lambda * lambda * n_e / (2.0 * t * t);
}

}  // namespace detail

inline NoiseModel noise_variance(const NoiseSpec& s, const Eigen::VectorXd& theta, double n_e) {
  const int q = static_cast<int>(theta.size());
  s.validate(q);
  NoiseModel m;
  auto cap = [&](double v) { return std::min(v, s.var_cap); };
  auto mag = [&](double t) { return std::max(std::abs(t), s.theta_floor); };
  switch (s.kind) {
    case Noise::Bridge: {
      m.var.resize(q);
      for (int k = 0; k < q; ++k) m.var(k) = cap(s.lambda * std::pow(mag(theta(k)), -s.gamma));
      break;
    }
    case Noise::ElasticNet: {
      m.var.resize(q);
      for (int k = 0; k < q; ++k) m.var(k) = cap(s.lambda / mag(theta(k)) + s.sigma2);
      break;
    }
    case Noise::AdaptiveLasso: {
      m.var.resize(q);
      for (int k = 0; k < q; ++k)
        m.var(k) = cap(s.lambda / mag(theta(k)) * std::pow(mag(s.consistent(k)), -s.gamma));
      break;
    }
    case Noise::Scad: {
      if (!(n_e > 0)) throw ValidationError("scad variance needs n_e > 0");
      m.var.resize(q);
      for (int k = 0; k < q; ++k)
        m.var(k) = cap(detail::scad_variance(mag(theta(k)), s.lambda, s.a, n_e));
      break;
    }
    case Noise::GroupLasso: {
      m.var.resize(q);
      for (const auto& g : s.groups) {
        double nrm = 0.0;
        for (int k : g) nrm += theta(k) * theta(k);
        nrm = std::max(std::sqrt(nrm), s.theta_floor);
        double v = s.lambda / nrm;
        if (s.group_size_factor) v *= std::sqrt(static_cast<double>(g.size()));
        v = cap(v);
        for (int k : g) m.var(k) = v;
      }
      break;
    }
    case Noise::FusedRidge: {
      m.diagonal = false;
      for (const auto& g : s.groups) {
        Eigen::MatrixXd T = detail::fused_factor(static_cast<int>(g.size()));
        m.group_cov.push_back(s.lambda * T * T.transpose());
      }
      break;
    }
  }
  return m;
}

inline Eigen::MatrixXd sample_diag_noise(const Eigen::VectorXd& var, int n_e, Rng& rng) {
  Eigen::MatrixXd E = rnorm_mat(rng, n_e, static_cast<int>(var.size()));
  for (int k = 0; k < var.size(); ++k) E.col(k) *= std::sqrt(var(k));
  return E;
}

inline Eigen::MatrixXd sample_noise(const NoiseSpec& s, const Eigen::VectorXd& theta, int n_e,
                                    Rng& rng) {
  if (n_e < 0) throw ValidationError("n_e must be nonnegative");
  const int q = static_cast<int>(theta.size());
  NoiseModel m = noise_variance(s, theta, static_cast<double>(n_e));
  if (m.diagonal) return sample_diag_noise(m.var, n_e, rng);
  Eigen::MatrixXd E = Eigen::MatrixXd::Zero(n_e, q);
  const double sl = std::sqrt(s.lambda);
  for (const auto& g : s.groups) {
    const int gq = static_cast<int>(g.size());
    Eigen::MatrixXd T = detail::fused_factor(gq);
    Eigen::MatrixXd Z = rnorm_mat(rng, n_e, gq);
    Eigen::MatrixXd B = sl * Z * T.transpose();  // rows ~ N(0, lambda T T')
    for (int c = 0; c < gq; ++c) E.col(g[c]) = B.col(c);
  }
  return E;
}

// Prop 1 closed forms for E over noise of sum_i (e_i' theta)^2.
inline double expected_penalty(const NoiseSpec& s, const Eigen::VectorXd& theta, double n_e) {
  const int q = static_cast<int>(theta.size());
  s.validate(q);
  const double ln = s.lambda * n_e;
  double p = 0.0;
  switch (s.kind) {
    case Noise::Bridge:
      for (int k = 0; k < q; ++k) p += std::pow(std::abs(theta(k)), 2.0 - s.gamma);
      return ln * p;
    case Noise::ElasticNet: {
      double l1 = 0.0, l2 = 0.0;
      for (int k = 0; k < q; ++k) {
        l1 += std::abs(theta(k));
        l2 += theta(k) * theta(k);
      }
      return ln * l1 + s.sigma2 * n_e * l2;
    }
    case Noise::AdaptiveLasso: {
      for (int k = 0; k < q; ++k)
        p += std::abs(theta(k)) *
             std::pow(std::max(std::abs(s.consistent(k)), s.theta_floor), -s.gamma);
      return ln * p;
    }
    case Noise::Scad: {
      for (int k = 0; k < q; ++k) {
        double t = std::abs(theta(k));
        if (t < ln)
          p += ln * t;
        else if (t <= s.a * ln)
          p += (2.0 * s.a * ln * t - ln * ln - t * t) / (2.0 * (s.a - 1.0));
        else
          p += (s.a + 1.0) * ln * ln / 2.0;
      }
      return p;
    }
    case Noise::GroupLasso: {
      for (const auto& g : s.groups) {
        double nrm = 0.0;
        for (int k : g) nrm += theta(k) * theta(k);
        nrm = std::sqrt(nrm);
        p += (s.group_size_factor ? std::sqrt(static_cast<double>(g.size())) : 1.0) * nrm;
      }
      return ln * p;
    }
    case Noise::FusedRidge: {
      for (const auto& g : s.groups) {
        const int gq = static_cast<int>(g.size());
        Eigen::MatrixXd T = detail::fused_factor(gq);
        Eigen::VectorXd th(gq);
        for (int c = 0; c < gq; ++c) th(c) = theta(g[c]);
        p += (T.transpose() * th).squaredNorm();
      }
      return ln * p;
    }
  }
  return p;
}

}  // namespace panda
