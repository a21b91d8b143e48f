#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "panda/common.hpp"
#include "panda/engine.hpp"
#include "panda/ngd.hpp"
#include "panda/rng.hpp"

// Gaussian-graph estimators beyond neighborhood selection: partial-correlation
// regressions, Cholesky-factor regressions, columnwise precision solves, and
// the closed-form ridge update. All of them expect the caller to have prepared
// (typically standardized) columns; none transforms the data.

namespace panda {

namespace detail {

class MatWindow {
 public:
  MatWindow() = default;
  explicit MatWindow(int m) : m_(m) {}
  void push(Eigen::MatrixXd v) {
    buf_.push_back(std::move(v));
    if (static_cast<int>(buf_.size()) > m_) buf_.pop_front();
  }
  Eigen::MatrixXd average() const {
    Eigen::MatrixXd s = Eigen::MatrixXd::Zero(buf_.back().rows(), buf_.back().cols());
    for (const auto& v : buf_) s += v;
    return s / static_cast<double>(buf_.size());
  }

 private:
  int m_ = 1;
  std::deque<Eigen::MatrixXd> buf_;
};

inline void check_graph_input(const Eigen::MatrixXd& x, int n_e) {
  if (x.cols() < 2) throw ValidationError("graph fit needs at least two nodes");
  if (x.rows() < 2) throw ValidationError("graph fit needs at least two rows");
  if (!x.allFinite()) throw ValidationError("data contains non-finite values");
  if (static_cast<int>(x.rows()) + n_e <= x.cols())
    throw ValidationError("need n + n_e > p");
}

// leave-one-out Gram blocks for regressing node j on the remaining columns
inline GaussianNode loo_node(const Eigen::MatrixXd& G, int j) {
  const int p = static_cast<int>(G.rows());
  GaussianNode nd;
  nd.Gj.resize(p - 1, p - 1);
  nd.gj.resize(p - 1);
  int a = 0;
  for (int k = 0; k < p; ++k) {
    if (k == j) continue;
    int b = 0;
    for (int l = 0; l < p; ++l) {
      if (l == j) continue;
      nd.Gj(a, b) = G(k, l);
      ++b;
    }
    nd.gj(a) = G(k, j);
    ++a;
  }
  nd.yy = G(j, j);
  return nd;
}

// variants use the relative-change rule; the z-test calibration is specific
// to the neighborhood-selection loss
inline Convergence variant_criterion(const PandaConfig& cfg) {
  return cfg.criterion == Convergence::ZTest ? Convergence::RelChange : cfg.criterion;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Partial-correlation regressions (sparse partial correlation estimation).
// Noise variance for pair (j,k): lambda |rho_jk|^-gamma * omega_jj / omega_kk.
// ---------------------------------------------------------------------------

struct SpaceEstimate {
  Eigen::MatrixXd rho;         // symmetric partial correlations, unit diagonal
  Eigen::VectorXd omega_diag;  // precision diagonal (inverse residual variances)
  Eigen::MatrixXi adjacency;
  FitTrace trace;
};

inline SpaceEstimate run_panda_space(const Eigen::MatrixXd& x, const NoiseSpec& spec,
                                     const PandaConfig& cfg) {
  cfg.validate();
  detail::check_graph_input(x, cfg.n_e);
  if (spec.kind != Noise::Bridge)
    throw ValidationError("partial-correlation fit takes bridge-type noise");
  const int n = static_cast<int>(x.rows());
  const int p = static_cast<int>(x.cols());
  spec.validate(p - 1);

  const Eigen::MatrixXd G = x.transpose() * x;
  std::vector<detail::GaussianNode> nodes(p);
  for (int j = 0; j < p; ++j) nodes[j] = detail::loo_node(G, j);

  // start from a ridge-regularized precision: diagonal and partial correlations
  Eigen::MatrixXd S = G / static_cast<double>(n);
  S.diagonal().array() += cfg.init_ridge;
  Eigen::MatrixXd Om0 = S.llt().solve(Eigen::MatrixXd::Identity(p, p));
  Eigen::VectorXd omega_bar = Om0.diagonal();
  Eigen::MatrixXd rho_bar = Eigen::MatrixXd::Identity(p, p);
  for (int j = 0; j < p; ++j)
    for (int k = 0; k < p; ++k)
      if (k != j) rho_bar(j, k) = -Om0(j, k) / std::sqrt(Om0(j, j) * Om0(k, k));

  const Convergence crit = detail::variant_criterion(cfg);
  detail::MatWindow hist(cfg.m);
  detail::ScalarWindow loss_win(cfg.m);
  FitTrace trace;
  std::vector<Eigen::MatrixXd> banked;
  double prev_lbar = std::numeric_limits<double>::quiet_NaN();
  bool converged = false;
  int banked_left = -1;

  std::vector<Eigen::MatrixXd> EE(p);
  std::vector<Eigen::VectorXd> beta(p);

  const int hard_cap = cfg.T + cfg.r + 1;
  for (int t = 1; t <= hard_cap; ++t) {
    const bool banking = banked_left >= 0;

    for (int j = 0; j < p; ++j) {
      Rng rng = make_stream(cfg.seed, static_cast<std::uint64_t>(t),
                            static_cast<std::uint64_t>(j));
      Eigen::VectorXd V(p - 1);
      int a = 0;
      for (int k = 0; k < p; ++k) {
        if (k == j) continue;
        double mag = std::max(std::abs(rho_bar(j, k)), spec.theta_floor);
        double v = spec.lambda * std::pow(mag, -spec.gamma) * omega_bar(j) / omega_bar(k);
        V(a++) = std::min(v, spec.var_cap);
      }
      Eigen::MatrixXd E = sample_diag_noise(V, cfg.n_e, rng);
      EE[j] = Eigen::MatrixXd::Zero(p - 1, p - 1);
      EE[j].selfadjointView<Eigen::Lower>().rankUpdate(E.transpose());
      EE[j] = EE[j].selfadjointView<Eigen::Lower>();
      beta[j] = (nodes[j].Gj + EE[j]).ldlt().solve(nodes[j].gj);
    }

    // refresh residual variances from this round's raw fits, then recover the
    // symmetrized partial correlations from the two slopes of each pair
    Eigen::VectorXd omega_new(p);
    for (int j = 0; j < p; ++j) {
      double s2 = nodes[j].sse(beta[j]) / n;
      if (!(s2 > 0)) throw NumericalError("nonpositive residual variance at node " +
                                          std::to_string(j));
      omega_new(j) = 1.0 / s2;
    }
    Eigen::MatrixXd rho_hat = Eigen::MatrixXd::Identity(p, p);
    for (int j = 0; j < p; ++j) {
      for (int k = j + 1; k < p; ++k) {
        double bjk = beta[j](k - 1);  // k > j, so k sits one slot down
        double bkj = beta[k](j);      // j < k keeps its own index
        double r = 0.5 * (bjk * std::sqrt(omega_new(j) / omega_new(k)) +
                          bkj * std::sqrt(omega_new(k) / omega_new(j)));
        r = std::clamp(r, -1.0, 1.0);
        rho_hat(j, k) = rho_hat(k, j) = r;
      }
    }
    hist.push(rho_hat);
    rho_bar = hist.average();
    omega_bar = omega_new;

    double loss = 0.0, loss_aug = 0.0;
    for (int j = 0; j < p; ++j) {
      Eigen::VectorXd bb(p - 1);
      int a = 0;
      for (int k = 0; k < p; ++k) {
        if (k == j) continue;
        bb(a++) = rho_bar(j, k) * std::sqrt(omega_bar(k) / omega_bar(j));
      }
      double sse = nodes[j].sse(bb);
      loss += sse;
      loss_aug += sse + bb.dot(EE[j] * bb);
    }
    loss_win.push(loss);
    double lbar = loss_win.average();

    IterRecord rec;
    rec.iter = t;
    rec.loss = loss;
    rec.loss_aug = loss_aug;
    if (banking) {
      banked.push_back(rho_bar);
      --banked_left;
    } else {
      bool conv_now = crit == Convergence::RelChange && t >= 2 &&
                      rel_change_converged(prev_lbar, lbar, cfg.rel_tau);
      if (conv_now) {
        converged = true;
        trace.convergence_iter = t;
        banked_left = cfg.r;
      } else if (t >= cfg.T) {
        banked_left = cfg.r;
      }
      rec.converged = conv_now;
    }
    prev_lbar = lbar;
    trace.iters.push_back(rec);
    if (banked_left == 0) break;
  }
  trace.converged = converged;

  ThresholdResult th = hard_threshold(banked, cfg.tau0);
  SpaceEstimate est;
  est.rho = th.value;
  est.adjacency = Eigen::MatrixXi::Zero(p, p);
  for (int j = 0; j < p; ++j) {
    for (int k = 0; k < p; ++k) {
      if (k == j) continue;
      if (th.zeroed(j, k))
        est.rho(j, k) = 0.0;
      else if (est.rho(j, k) != 0.0)
        est.adjacency(j, k) = 1;
    }
  }
  est.omega_diag = omega_bar;
  est.trace = trace;
  return est;
}

// ---------------------------------------------------------------------------
// Cholesky-factor regressions: node j on columns 1..j-1 under a fixed order,
// yielding Omega = L' D^-1 L with L unit lower triangular.
// ---------------------------------------------------------------------------

struct LdlEstimate {
  Eigen::MatrixXd L;  // unit lower triangular
  Eigen::VectorXd D;  // residual variances per node
  Eigen::MatrixXd omega;
  Eigen::MatrixXi adjacency;
  FitTrace trace;
};

inline LdlEstimate run_panda_cd(const Eigen::MatrixXd& x, const NoiseSpec& spec,
                                const PandaConfig& cfg,
                                const std::vector<int>& order = {}) {
  cfg.validate();
  detail::check_graph_input(x, cfg.n_e);
  if (spec.kind != Noise::Bridge)
    throw ValidationError("Cholesky-factor fit takes bridge-type noise");
  const int n = static_cast<int>(x.rows());
  const int p = static_cast<int>(x.cols());
  spec.validate(p - 1);

  Eigen::MatrixXd xp;
  if (!order.empty()) {
    if (static_cast<int>(order.size()) != p)
      throw ValidationError("order must list every column once");
    std::vector<char> seen(p, 0);
    for (int k : order) {
      if (k < 0 || k >= p || seen[k]) throw ValidationError("order is not a permutation");
      seen[k] = 1;
    }
    xp.resize(n, p);
    for (int i = 0; i < p; ++i) xp.col(i) = x.col(order[i]);
  } else {
    xp = x;
  }

  const Eigen::MatrixXd G = xp.transpose() * xp;
  std::vector<detail::GaussianNode> nodes(p);  // node j regressed on 0..j-1
  for (int j = 1; j < p; ++j) {
    nodes[j].Gj = G.topLeftCorner(j, j);
    nodes[j].gj = G.block(0, j, j, 1);
    nodes[j].yy = G(j, j);
  }

  // ridge starts, one history slot per outer iteration (inner alternations
  // overwrite the current slot)
  std::vector<std::vector<Eigen::VectorXd>> raw(p);
  std::vector<Eigen::VectorXd> theta_bar(p);
  for (int j = 1; j < p; ++j) {
    Eigen::MatrixXd R = nodes[j].Gj;
    R.diagonal().array() += cfg.init_ridge;
    theta_bar[j] = R.ldlt().solve(nodes[j].gj);
  }

  const Convergence crit = detail::variant_criterion(cfg);
  detail::ScalarWindow loss_win(cfg.m);
  FitTrace trace;
  std::vector<std::vector<Eigen::VectorXd>> banked_theta;  // per iteration, per node
  std::vector<Eigen::VectorXd> banked_d;
  double prev_lbar = std::numeric_limits<double>::quiet_NaN();
  bool converged = false;
  int banked_left = -1;

  const int hard_cap = cfg.T + cfg.r + 1;
  for (int t = 1; t <= hard_cap; ++t) {
    const bool banking = banked_left >= 0;
    double loss = 0.0, loss_aug = 0.0;
    Eigen::VectorXd dvec = Eigen::VectorXd::Zero(p);
    dvec(0) = G(0, 0) / n;

    for (int j = 1; j < p; ++j) {
      raw[j].emplace_back();
      double nu = 0.0;
      Eigen::MatrixXd EE;
      for (int k = 0; k < cfg.cd_k; ++k) {
        Rng rng = make_stream(cfg.seed, static_cast<std::uint64_t>(t),
                              static_cast<std::uint64_t>(j) *
                                      static_cast<std::uint64_t>(cfg.cd_k + 1) +
                                  static_cast<std::uint64_t>(k));
        NoiseModel nm = noise_variance(spec, theta_bar[j], cfg.n_e);
        Eigen::MatrixXd E = nm.diagonal ? sample_diag_noise(nm.var, cfg.n_e, rng)
                                        : sample_noise(spec, theta_bar[j], cfg.n_e, rng);
        EE = Eigen::MatrixXd::Zero(j, j);
        EE.selfadjointView<Eigen::Lower>().rankUpdate(E.transpose());
        EE = EE.selfadjointView<Eigen::Lower>();
        bool last = k == cfg.cd_k - 1;
        raw[j].back() = nodes[j].solve(EE, banking && last ? &nu : nullptr);
        theta_bar[j] = moving_average(raw[j], cfg.m);
      }
      double sse = nodes[j].sse(theta_bar[j]);
      loss += sse;
      loss_aug += sse + theta_bar[j].dot(EE * theta_bar[j]);
      if (banking) {
        if (!(n - nu > 0))
          throw NumericalError("nonpositive residual dof at node " + std::to_string(j));
        dvec(j) = sse / (n - nu);
      } else {
        dvec(j) = sse / n;
      }
    }

    loss_win.push(loss);
    double lbar = loss_win.average();
    IterRecord rec;
    rec.iter = t;
    rec.loss = loss;
    rec.loss_aug = loss_aug;
    if (banking) {
      banked_theta.push_back(theta_bar);
      banked_d.push_back(dvec);
      --banked_left;
    } else {
      bool conv_now = crit == Convergence::RelChange && t >= 2 &&
                      rel_change_converged(prev_lbar, lbar, cfg.rel_tau);
      if (conv_now) {
        converged = true;
        trace.convergence_iter = t;
        banked_left = cfg.r;
      } else if (t >= cfg.T) {
        banked_left = cfg.r;
      }
      rec.converged = conv_now;
    }
    prev_lbar = lbar;
    trace.iters.push_back(rec);
    if (banked_left == 0) break;
  }
  trace.converged = converged;

  // factor entries: straddle rule per coefficient, retained value is the mean
  // over the banked averaged estimates; D is the banked mean as well
  const int nb = static_cast<int>(banked_theta.size());
  LdlEstimate est;
  est.L = Eigen::MatrixXd::Identity(p, p);
  est.adjacency = Eigen::MatrixXi::Zero(p, p);
  for (int j = 1; j < p; ++j) {
    for (int k = 0; k < j; ++k) {
      double mx = -std::numeric_limits<double>::infinity();
      double mn = std::numeric_limits<double>::infinity();
      double mean = 0.0;
      for (const auto& it : banked_theta) {
        double v = it[j](k);
        mx = std::max(mx, v);
        mn = std::min(mn, v);
        mean += v;
      }
      mean /= nb;
      double prod = mx * mn;
      bool zero = prod < 0.0 && std::abs(prod) < cfg.tau0;
      if (!zero && mean != 0.0) {
        est.L(j, k) = -mean;
        est.adjacency(j, k) = est.adjacency(k, j) = 1;
      }
    }
  }
  est.D = Eigen::VectorXd::Zero(p);
  for (const auto& d : banked_d) est.D += d;
  est.D /= nb;
  est.omega = est.L.transpose() * est.D.cwiseInverse().asDiagonal() * est.L;
  est.trace = trace;

  if (!order.empty()) {
    // map back to the original column order: row/col i of the permuted fit
    // describes original column order[i]
    Eigen::MatrixXd om = est.omega;
    Eigen::MatrixXi ad = est.adjacency;
    for (int i = 0; i < p; ++i)
      for (int k = 0; k < p; ++k) {
        est.omega(order[i], order[k]) = om(i, k);
        est.adjacency(order[i], order[k]) = ad(i, k);
      }
  }
  return est;
}

// ---------------------------------------------------------------------------
// Columnwise precision solves: each row of Omega from a scaled augmented
// covariance, theta_j = Sigma~^-1 1_j.
// ---------------------------------------------------------------------------

struct ScioEstimate {
  Eigen::MatrixXd omega;
  Eigen::MatrixXi adjacency;
  FitTrace trace;
  // worst-case |Sigma theta - 1_j| across all iterations and columns; the
  // columnwise solves are exact linear systems, so this stays at solver noise
  double max_identity_resid = 0.0;
};

inline ScioEstimate run_panda_scio(const Eigen::MatrixXd& x, const NoiseSpec& spec,
                                   const PandaConfig& cfg) {
  cfg.validate();
  detail::check_graph_input(x, cfg.n_e);
  if (spec.kind != Noise::Bridge)
    throw ValidationError("columnwise precision fit takes bridge-type noise");
  if (cfg.n_e < 1) throw ValidationError("columnwise precision fit needs n_e >= 1");
  const int n = static_cast<int>(x.rows());
  const int p = static_cast<int>(x.cols());
  spec.validate(p);

  const Eigen::MatrixXd S = x.transpose() * x / static_cast<double>(n);
  Eigen::MatrixXd Sr = S;
  Sr.diagonal().array() += cfg.init_ridge;
  Eigen::MatrixXd theta_bar = Sr.llt().solve(Eigen::MatrixXd::Identity(p, p));

  const Convergence crit = detail::variant_criterion(cfg);
  detail::MatWindow hist(cfg.m);
  detail::ScalarWindow loss_win(cfg.m);
  FitTrace trace;
  std::vector<Eigen::MatrixXd> banked;
  double prev_lbar = std::numeric_limits<double>::quiet_NaN();
  bool converged = false;
  int banked_left = -1;

  double max_resid = 0.0;
  const int hard_cap = cfg.T + cfg.r + 1;
  for (int t = 1; t <= hard_cap; ++t) {
    const bool banking = banked_left >= 0;
    Eigen::MatrixXd theta_hat(p, p);
    double loss_aug = 0.0;

    for (int j = 0; j < p; ++j) {
      Rng rng = make_stream(cfg.seed, static_cast<std::uint64_t>(t),
                            static_cast<std::uint64_t>(j));
      Eigen::VectorXd V(p);
      for (int k = 0; k < p; ++k) {
        if (k == j) {
          V(k) = 0.0;  // no penalty on the diagonal entry
          continue;
        }
        double mag = std::max(std::abs(theta_bar(j, k)), cfg.tau1);
        V(k) = std::min(spec.lambda * std::pow(mag, -spec.gamma), spec.var_cap);
      }
      Eigen::MatrixXd E(cfg.n_e, p);
      for (int k = 0; k < p; ++k) {
        if (V(k) == 0.0) {
          E.col(k).setZero();
        } else {
          double sd = std::sqrt(V(k));
          for (int i = 0; i < cfg.n_e; ++i) E(i, k) = sd * rnorm(rng);
        }
      }
      // augmented covariance of the scaled stack [sqrt((n+n_e)/n) x;
      // sqrt(2(n+n_e)/n_e) e] divided by n+n_e, which reduces to S + 2 e'e/n_e
      Eigen::MatrixXd Sig = Eigen::MatrixXd::Zero(p, p);
      Sig.selfadjointView<Eigen::Lower>().rankUpdate(E.transpose(),
                                                     2.0 / static_cast<double>(cfg.n_e));
      Sig = Sig.selfadjointView<Eigen::Lower>();
      Sig += S;
      Eigen::VectorXd rhs = Eigen::VectorXd::Zero(p);
      rhs(j) = 1.0;
      Eigen::VectorXd th = Sig.ldlt().solve(rhs);
      double resid = (Sig * th - rhs).lpNorm<Eigen::Infinity>();
      double scale = std::max(1.0, Sig.lpNorm<Eigen::Infinity>() *
                                       th.lpNorm<Eigen::Infinity>());
      if (!(resid <= 1e-6 * scale))
        throw NumericalError("singular augmented covariance at row " + std::to_string(j));
      max_resid = std::max(max_resid, resid);
      theta_hat.row(j) = th.transpose();
      loss_aug += 0.5 * th.dot(Sig * th) - th(j);
    }

    hist.push(theta_hat);
    theta_bar = hist.average();

    double loss = 0.0;
    for (int j = 0; j < p; ++j) {
      Eigen::VectorXd tb = theta_bar.row(j).transpose();
      loss += 0.5 * tb.dot(S * tb) - tb(j);
    }
    loss_win.push(loss);
    double lbar = loss_win.average();

    IterRecord rec;
    rec.iter = t;
    rec.loss = loss;
    rec.loss_aug = loss_aug;
    if (banking) {
      banked.push_back(theta_bar);
      --banked_left;
    } else {
      bool conv_now = crit == Convergence::RelChange && t >= 2 &&
                      rel_change_converged(prev_lbar, lbar, cfg.rel_tau);
      if (conv_now) {
        converged = true;
        trace.convergence_iter = t;
        banked_left = cfg.r;
      } else if (t >= cfg.T) {
        banked_left = cfg.r;
      }
      rec.converged = conv_now;
    }
    prev_lbar = lbar;
    trace.iters.push_back(rec);
    if (banked_left == 0) break;
  }
  trace.converged = converged;

  ThresholdResult th = hard_threshold(banked, cfg.tau0);
  SymmetrizeResult sym = symmetrize(th, cfg.sym);
  ScioEstimate est;
  est.omega = sym.theta;
  est.adjacency = sym.adjacency;
  est.trace = trace;
  est.max_identity_resid = max_resid;
  return est;
}

// ---------------------------------------------------------------------------
// Closed-form ridge update: noise rows drawn N_p(0, lambda * Omega), precision
// re-solved as the inverse augmented covariance. No sparsification.
// ---------------------------------------------------------------------------

struct GridgeEstimate {
  Eigen::MatrixXd omega;
  FitTrace trace;
};

inline GridgeEstimate run_panda_gridge(const Eigen::MatrixXd& x, double lambda,
                                       const PandaConfig& cfg) {
  cfg.validate();
  detail::check_graph_input(x, cfg.n_e);
  if (!(lambda >= 0)) throw ValidationError("lambda must be >= 0");
  if (lambda > 0 && cfg.n_e < 1)
    throw ValidationError("ridge precision fit needs n_e >= 1 when lambda > 0");
  const int n = static_cast<int>(x.rows());
  const int p = static_cast<int>(x.cols());

  const Eigen::MatrixXd S = x.transpose() * x / static_cast<double>(n);
  Eigen::MatrixXd Sr = S;
  Sr.diagonal().array() += cfg.init_ridge;
  Eigen::MatrixXd omega_bar = Sr.llt().solve(Eigen::MatrixXd::Identity(p, p));

  const Convergence crit = detail::variant_criterion(cfg);
  detail::MatWindow hist(cfg.m);
  detail::ScalarWindow loss_win(cfg.m);
  FitTrace trace;
  std::vector<Eigen::MatrixXd> banked;
  double prev_lbar = std::numeric_limits<double>::quiet_NaN();
  bool converged = false;
  int banked_left = -1;

  const int hard_cap = cfg.T + cfg.r + 1;
  for (int t = 1; t <= hard_cap; ++t) {
    const bool banking = banked_left >= 0;
    Rng rng = make_stream(cfg.seed, static_cast<std::uint64_t>(t), 0);

    Eigen::MatrixXd Saug = S;
    if (lambda > 0) {
      Eigen::LLT<Eigen::MatrixXd> chol(lambda * omega_bar);
      if (chol.info() != Eigen::Success)
        throw NumericalError("noise covariance not positive definite");
      Eigen::MatrixXd Z = rnorm_mat(rng, cfg.n_e, p);
      Eigen::MatrixXd E = Z * chol.matrixL().transpose();
      Saug += E.transpose() * E / static_cast<double>(cfg.n_e);
    }
    Eigen::LLT<Eigen::MatrixXd> slt(Saug);
    if (slt.info() != Eigen::Success)
      throw NumericalError("augmented covariance not positive definite");
    Eigen::MatrixXd om = slt.solve(Eigen::MatrixXd::Identity(p, p));
    om = 0.5 * (om + om.transpose());

    hist.push(om);
    omega_bar = hist.average();

    Eigen::LLT<Eigen::MatrixXd> olt(omega_bar);
    if (olt.info() != Eigen::Success)
      throw NumericalError("averaged precision not positive definite");
    double logdet = 0.0;
    for (int k = 0; k < p; ++k)
      logdet += 2.0 * std::log(olt.matrixL()(k, k));
    double loss = 0.5 * n * (-logdet + (S * omega_bar).trace());
    double loss_aug = 0.5 * n * (-logdet + (Saug * omega_bar).trace());
    loss_win.push(loss);
    double lbar = loss_win.average();

    IterRecord rec;
    rec.iter = t;
    rec.loss = loss;
    rec.loss_aug = loss_aug;
    if (banking) {
      banked.push_back(omega_bar);
      --banked_left;
    } else {
      bool conv_now = crit == Convergence::RelChange && t >= 2 &&
                      rel_change_converged(prev_lbar, lbar, cfg.rel_tau);
      if (conv_now) {
        converged = true;
        trace.convergence_iter = t;
        banked_left = cfg.r;
      } else if (t >= cfg.T) {
        banked_left = cfg.r;
      }
      rec.converged = conv_now;
    }
    prev_lbar = lbar;
    trace.iters.push_back(rec);
    if (banked_left == 0) break;
  }
  trace.converged = converged;

  GridgeEstimate est;
  est.omega = Eigen::MatrixXd::Zero(p, p);
  for (const auto& B : banked) est.omega += B;
  est.omega /= static_cast<double>(banked.size());
  est.trace = trace;
  return est;
}

}  // namespace panda
