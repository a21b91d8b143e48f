#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "panda/common.hpp"
#include "panda/glm.hpp"
#include "panda/ngd.hpp"
#include "panda/normal.hpp"
#include "panda/rng.hpp"

namespace panda {

enum class Convergence { Off, RelChange, ZTest };
enum class Symmetrize { Intersection, Union };

struct PandaConfig {
  int T = 70;          // iteration budget before banking
  int n_e = 2000;      // noise rows per regression
  int m = 1;           // moving-average window
  double tau0 = 1e-6;  // hard-threshold level
  int r = 100;         // banked iterations after convergence
  std::uint64_t seed = 1;
  Convergence criterion = Convergence::RelChange;
  double rel_tau = 1e-2;
  double alpha = 0.05;  // z-test level
  Symmetrize sym = Symmetrize::Intersection;
  int multi_start = 1;
  double init_ridge = 0.1;  // ridge for the iteration-0 estimate
  double tau1 = 1e-6;       // magnitude floor used by the closed-form variant
  int cd_k = 5;             // inner alternations per node (Cholesky-factor variant)
  bool intercept = false;   // single-regression mode only

  void validate() const {
    if (T < 1) throw ValidationError("T must be >= 1");
    if (n_e < 0) throw ValidationError("n_e must be >= 0");
    if (m < 1) throw ValidationError("m must be >= 1");
    if (T < m) throw ValidationError("T must be >= m");
    if (r < 1) throw ValidationError("r must be >= 1");
    if (!(tau0 > 0)) throw ValidationError("tau0 must be > 0");
    if (!(rel_tau > 0)) throw ValidationError("rel_tau must be > 0");
    if (!(alpha > 0 && alpha < 1)) throw ValidationError("alpha must be in (0,1)");
    if (multi_start < 1) throw ValidationError("multi_start must be >= 1");
    if (!(tau1 > 0)) throw ValidationError("tau1 must be > 0");
    if (cd_k < 1) throw ValidationError("cd_k must be >= 1");
    if (!(init_ridge >= 0)) throw ValidationError("init_ridge must be >= 0");
  }
};

struct IterRecord {
  int iter = 0;
  double loss = 0.0;      // original-data loss at the averaged estimate
  double loss_aug = 0.0;  // loss including the noise block
  double z = std::numeric_limits<double>::quiet_NaN();
  bool has_z = false;
  bool converged = false;
};

struct FitTrace {
  std::vector<IterRecord> iters;
  bool converged = false;
  int convergence_iter = -1;
  bool regularity_warning = false;  // n_e * max noise variance exceeded sqrt(n)
};

struct GraphEstimate {
  Eigen::MatrixXd theta;      // retained coefficients; diagonal carries intercepts
  Eigen::MatrixXi adjacency;  // symmetric 0/1, zero diagonal
  Eigen::MatrixXd precision;  // all-Gaussian runs only
  Eigen::VectorXd sigma2;     // all-Gaussian runs only
  bool has_precision = false;
  FitTrace trace;
};

// history carries estimates oldest-first; returns the mean of the last
// min(m, history length) entries, so early iterations average what exists.
inline Eigen::VectorXd moving_average(const std::vector<Eigen::VectorXd>& history, int m) {
  if (history.empty()) throw ValidationError("moving_average needs at least one estimate");
  if (m < 1) throw ValidationError("moving_average window must be >= 1");
  const int t = static_cast<int>(history.size());
  const int w = std::min(m, t);
  Eigen::VectorXd s = Eigen::VectorXd::Zero(history[0].size());
  for (int l = t - w; l < t; ++l) s += history[l];
  return s / static_cast<double>(w);
}

namespace detail {

// Fixed-capacity buffer of the last <= m estimates; average() is their mean.
class Window {
 public:
  Window() = default;
  explicit Window(int m) : m_(m) {}
  void push(Eigen::VectorXd v) {
    buf_.push_back(std::move(v));
    if (static_cast<int>(buf_.size()) > m_) buf_.pop_front();
  }
  Eigen::VectorXd average() const {
    Eigen::VectorXd s = Eigen::VectorXd::Zero(buf_.back().size());
    for (const auto& v : buf_) s += v;
    return s / static_cast<double>(buf_.size());
  }

 private:
  int m_ = 1;
  std::deque<Eigen::VectorXd> buf_;
};

class ScalarWindow {
 public:
  ScalarWindow() = default;
  explicit ScalarWindow(int m) : m_(m) {}
  void push(double v) {
    buf_.push_back(v);
    if (static_cast<int>(buf_.size()) > m_) buf_.pop_front();
  }
  double average() const {
    double s = 0.0;
    for (double v : buf_) s += v;
    return s / static_cast<double>(buf_.size());
  }

 private:
  int m_ = 1;
  std::deque<double> buf_;
};

}  // namespace detail

inline bool rel_change_converged(double prev, double cur, double tau) {
  if (prev == 0.0) return cur == 0.0;
  return std::abs(cur - prev) / std::abs(prev) < tau;
}

// kappa constant of the convergence z-test, by outcome family at intercept theta0.
inline double kappa_const(const NodeFamily& f, double theta0) {
  switch (f.family) {
    case Family::Gaussian: return 8.0;
    case Family::Bernoulli: {
      double e2 = std::exp(2.0 * theta0);
      double d = 1.0 + e2;
      return 2.0 * e2 / (d * d * d * d);
    }
    case Family::Poisson: return 2.0 * std::exp(2.0 * theta0);
    case Family::Exponential: return 2.0;
    case Family::NegBinomial: {
      double e = std::exp(theta0);
      double d = f.nb_r + e;
      return 2.0 * f.nb_r * f.nb_r * e * e / (d * d);
    }
  }
  return 0.0;
}

// C1^2 with C1 = (lambda n_e / 2) sqrt(sum_j kappa_j S_j^2),
// S_j = sum_k |theta_jk|^(2-gamma) over node j's slope coefficients.
inline double c1_squared(double lambda, double n_e, const std::vector<double>& kappa,
                         const std::vector<double>& bridge_sum) {
  if (kappa.size() != bridge_sum.size()) throw ValidationError("c1_squared input size mismatch");
  double s = 0.0;
  for (std::size_t j = 0; j < kappa.size(); ++j)
    s += kappa[j] * bridge_sum[j] * bridge_sum[j];
  return 0.25 * lambda * lambda * n_e * n_e * s;
}

inline double ztest_stat(double d, double c1sq_prev, double c1sq_cur, double n_e) {
  double denom = std::sqrt((c1sq_prev + c1sq_cur) / n_e);
  if (denom == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return d / denom;
}

struct ThresholdResult {
  Eigen::MatrixXd value;   // final banked estimate per ordered pair
  Eigen::MatrixXi zeroed;  // straddle rule verdict per ordered pair
};

// banked holds the r coefficient snapshots oldest-first. An ordered pair is
// zeroed when its banked sequence changes sign and |max * min| stays below tau0.
inline ThresholdResult hard_threshold(const std::vector<Eigen::MatrixXd>& banked, double tau0) {
  if (banked.empty()) throw ValidationError("hard_threshold needs banked estimates");
  const int p = static_cast<int>(banked.back().rows());
  ThresholdResult res;
  res.value = banked.back();
  res.zeroed = Eigen::MatrixXi::Zero(p, p);
  for (int j = 0; j < p; ++j) {
    for (int k = 0; k < p; ++k) {
      if (j == k) continue;
      double mx = -std::numeric_limits<double>::infinity();
      double mn = std::numeric_limits<double>::infinity();
      for (const auto& B : banked) {
        mx = std::max(mx, B(j, k));
        mn = std::min(mn, B(j, k));
      }
      double prod = mx * mn;
      if (prod < 0.0 && std::abs(prod) < tau0) res.zeroed(j, k) = 1;
    }
  }
  return res;
}

struct SymmetrizeResult {
  Eigen::MatrixXd theta;
  Eigen::MatrixXi adjacency;
};

// Intersection: the edge is absent only when BOTH directions were zeroed
// (intersection of the zero decisions; keeps more edges). Union: absent when
// either direction was zeroed. The retained value is the smaller-magnitude
// final banked estimate among the surviving directions.
inline SymmetrizeResult symmetrize(const ThresholdResult& th, Symmetrize mode) {
  const int p = static_cast<int>(th.value.rows());
  SymmetrizeResult res;
  res.theta = Eigen::MatrixXd::Zero(p, p);
  res.adjacency = Eigen::MatrixXi::Zero(p, p);
  for (int j = 0; j < p; ++j) res.theta(j, j) = th.value(j, j);
  for (int j = 0; j < p; ++j) {
    for (int k = j + 1; k < p; ++k) {
      bool keep_jk = th.zeroed(j, k) == 0;
      bool keep_kj = th.zeroed(k, j) == 0;
      bool keep = mode == Symmetrize::Intersection ? (keep_jk || keep_kj)
                                                   : (keep_jk && keep_kj);
      if (!keep) continue;
      double a = th.value(j, k), b = th.value(k, j);
      double v;
      if (keep_jk && keep_kj)
        v = std::abs(a) <= std::abs(b) ? a : b;
      else
        v = keep_jk ? a : b;
      res.theta(j, k) = res.theta(k, j) = v;
      res.adjacency(j, k) = res.adjacency(k, j) = 1;
    }
  }
  return res;
}

namespace detail {

inline void standardize_columns(Eigen::MatrixXd& X) {
  const int n = static_cast<int>(X.rows());
  if (n < 2) throw ValidationError("need at least two rows to standardize");
  for (int k = 0; k < X.cols(); ++k) {
    double mu = X.col(k).mean();
    X.col(k).array() -= mu;
    double sd = std::sqrt(X.col(k).squaredNorm() / (n - 1));
    if (!(sd > 0)) throw ValidationError("constant column " + std::to_string(k));
    X.col(k) /= sd;
  }
}

inline double bridge_sum(const Eigen::VectorXd& theta, double gamma) {
  double s = 0.0;
  for (int k = 0; k < theta.size(); ++k) s += std::pow(std::abs(theta(k)), 2.0 - gamma);
  return s;
}

// One Gaussian node regression: solve (G_jj + E'E) theta = g_j by LDLT on the
// separated blocks (the stacked least-squares solve agrees to machine precision).
struct GaussianNode {
  Eigen::MatrixXd Gj;  // q x q observed Gram for this node's covariates
  Eigen::VectorXd gj;  // covariate' outcome
  double yy = 0.0;     // outcome squared norm

  Eigen::VectorXd solve(const Eigen::MatrixXd& EE, double* nu) const {
    Eigen::LDLT<Eigen::MatrixXd> ldlt(Gj + EE);
    if (nu) *nu = ldlt.solve(Gj).trace();
    return ldlt.solve(gj);
  }
  double sse(const Eigen::VectorXd& theta) const {
    return yy - 2.0 * theta.dot(gj) + theta.dot(Gj * theta);
  }
};

// Pilot estimate for adaptive weights: the plain fit when rows allow one,
// otherwise (or when that fit diverges) a ridge fit on columns >= first_pen.
inline Eigen::VectorXd adaptive_pilot(const NodeFamily& f, const Eigen::MatrixXd& X,
                                      const Eigen::VectorXd& y, double y_aug,
                                      double ridge, int first_pen) {
  const int n = static_cast<int>(X.rows());
  const int q = static_cast<int>(X.cols());
  AugmentedDesign d;
  d.X = X;
  d.y = y;
  d.y_aug = y_aug;
  if (n > q) {
    d.E = Eigen::MatrixXd::Zero(0, q);
    try {
      return f.family == Family::Gaussian ? fit_ols(d) : fit_glm(f, d).theta;
    } catch (const NumericalError&) {
      // fall through to the ridge fit
    }
  }
  d.E = Eigen::MatrixXd::Zero(q - first_pen, q);
  for (int k = first_pen; k < q; ++k) d.E(k - first_pen, k) = std::sqrt(ridge);
  return f.family == Family::Gaussian ? fit_ols(d) : fit_glm(f, d).theta;
}

}  // namespace detail

// Neighborhood-selection run over all nodes of one data matrix. All-Gaussian
// input follows the linear algorithm (standardized columns, no intercept) and
// assembles a precision matrix; any non-Gaussian node switches the run to the
// mixed-graph algorithm (centered covariates, intercepts, GLM node fits).
inline GraphEstimate run_panda_ns(const Eigen::MatrixXd& data,
                                  const std::vector<NodeFamily>& families,
                                  const NoiseSpec& spec, const PandaConfig& cfg) {
  cfg.validate();
  const int n = static_cast<int>(data.rows());
  const int p = static_cast<int>(data.cols());
  if (p < 2) throw ValidationError("graph fit needs at least two nodes");
  if (static_cast<int>(families.size()) != p)
    throw ValidationError("family list length differs from node count");
  if (!data.allFinite()) throw ValidationError("data contains non-finite values");
  if (n + cfg.n_e <= p) throw ValidationError("need n + n_e > p");

  bool all_gauss = true;
  for (const auto& f : families) all_gauss = all_gauss && f.family == Family::Gaussian;

  // data preparation shared by every start
  Eigen::MatrixXd X = data;
  Eigen::VectorXd col_mean = X.colwise().mean();
  std::vector<detail::GaussianNode> gnodes;
  Eigen::MatrixXd Xc;  // centered covariate matrix for the mixed path
  if (all_gauss) {
    detail::standardize_columns(X);
    Eigen::MatrixXd G = X.transpose() * X;
    gnodes.resize(p);
    for (int j = 0; j < p; ++j) {
      auto& nd = gnodes[j];
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
    }
  } else {
    Xc = X.rowwise() - col_mean.transpose();
  }

  // design block for node j on the mixed path: intercept column + the others
  auto mixed_design = [&](int j) {
    Eigen::MatrixXd D(n, p);
    D.col(0).setOnes();
    int a = 1;
    for (int k = 0; k < p; ++k) {
      if (k == j) continue;
      D.col(a++) = Xc.col(k);
    }
    return D;
  };

  // per-node noise specs; empty adaptive weights get filled from pilot fits
  std::vector<NoiseSpec> nspec(p, spec);
  if (spec.kind == Noise::AdaptiveLasso && spec.consistent.size() == 0) {
    for (int j = 0; j < p; ++j) {
      if (all_gauss) {
        Eigen::MatrixXd D(n, p - 1);
        int a = 0;
        for (int k = 0; k < p; ++k) {
          if (k == j) continue;
          D.col(a++) = X.col(k);
        }
        nspec[j].consistent =
            detail::adaptive_pilot(families[j], D, X.col(j), 0.0, cfg.init_ridge, 0);
      } else {
        bool gauss_node = families[j].family == Family::Gaussian;
        Eigen::VectorXd yj =
            gauss_node ? Eigen::VectorXd(Xc.col(j)) : Eigen::VectorXd(X.col(j));
        Eigen::VectorXd th =
            detail::adaptive_pilot(families[j], mixed_design(j), yj,
                                   gauss_node ? 0.0 : col_mean(j), cfg.init_ridge, 1);
        nspec[j].consistent = th.tail(p - 1);
      }
    }
  }
  for (const auto& s : nspec) s.validate(p - 1);

  const bool bridge_like = spec.kind == Noise::Bridge;
  Convergence crit = cfg.criterion;
  if (crit == Convergence::ZTest && !bridge_like) crit = Convergence::RelChange;
  const double zq = crit == Convergence::ZTest
                        ? normal_quantile(1.0 - cfg.alpha / 2.0)
                        : 0.0;
  const double reg_limit = std::sqrt(static_cast<double>(n));

  GraphEstimate best;
  double best_loss = std::numeric_limits<double>::infinity();

  for (int start = 0; start < cfg.multi_start; ++start) {
    // iteration-0 estimate: ridge fit, perturbed on extra starts
    std::vector<Eigen::VectorXd> theta_bar(p);
    for (int j = 0; j < p; ++j) {
      if (all_gauss) {
        Eigen::MatrixXd R = gnodes[j].Gj;
        R.diagonal().array() += cfg.init_ridge;
        theta_bar[j] = R.ldlt().solve(gnodes[j].gj);
      } else {
        AugmentedDesign d;
        d.X = mixed_design(j);
        bool gauss_node = families[j].family == Family::Gaussian;
        d.y = gauss_node ? Eigen::VectorXd(Xc.col(j)) : Eigen::VectorXd(X.col(j));
        d.y_aug = gauss_node ? 0.0 : col_mean(j);
        d.E = Eigen::MatrixXd::Zero(p - 1, p);
        for (int k = 0; k < p - 1; ++k) d.E(k, k + 1) = std::sqrt(cfg.init_ridge);
        try {
          theta_bar[j] = fit_glm(families[j], d).theta;
        } catch (const FitDivergence& e) {
          throw FitDivergence("node " + std::to_string(j) + ": " + e.what(),
                              e.last_iterate);
        }
      }
      if (start > 0) {
        Rng pr = make_stream(cfg.seed, 900000000ULL + static_cast<std::uint64_t>(start), j);
        theta_bar[j] += 0.1 * rnorm_vec(pr, static_cast<int>(theta_bar[j].size()));
      }
    }

    std::vector<detail::Window> hist(p);
    for (int j = 0; j < p; ++j) hist[j] = detail::Window(cfg.m);
    detail::ScalarWindow loss_win(cfg.m);

    FitTrace trace;
    std::vector<Eigen::MatrixXd> banked;
    std::vector<Eigen::VectorXd> banked_sigma2;
    double prev_lbar = std::numeric_limits<double>::quiet_NaN();
    double prev_aug = std::numeric_limits<double>::quiet_NaN();
    double prev_c1sq = std::numeric_limits<double>::quiet_NaN();
    bool converged = false;
    int banked_left = -1;  // countdown once converged (or budget exhausted)
    double final_loss = std::numeric_limits<double>::infinity();

    const int hard_cap = cfg.T + cfg.r + 1;
    for (int t = 1; t <= hard_cap; ++t) {
      const bool banking = banked_left >= 0;
      double loss_orig = 0.0, loss_aug = 0.0;
      Eigen::MatrixXd snap = Eigen::MatrixXd::Zero(p, p);
      Eigen::VectorXd sig2 = Eigen::VectorXd::Zero(p);
      std::vector<double> kap(p), bsum(p);

      for (int j = 0; j < p; ++j) {
        Rng rng = make_stream(cfg.seed, static_cast<std::uint64_t>(t) +
                                            static_cast<std::uint64_t>(start) * 1000000ULL,
                              static_cast<std::uint64_t>(j));
        if (all_gauss) {
          const Eigen::VectorXd& tb = theta_bar[j];
          NoiseModel nm = noise_variance(nspec[j], tb, cfg.n_e);
          if (cfg.n_e * nm.max_var() >= reg_limit) trace.regularity_warning = true;
          Eigen::MatrixXd E = nm.diagonal ? sample_diag_noise(nm.var, cfg.n_e, rng)
                                          : sample_noise(nspec[j], tb, cfg.n_e, rng);
          Eigen::MatrixXd EE = Eigen::MatrixXd::Zero(p - 1, p - 1);
          EE.selfadjointView<Eigen::Lower>().rankUpdate(E.transpose());
          EE = EE.selfadjointView<Eigen::Lower>();
          double nu = 0.0;
          Eigen::VectorXd th = gnodes[j].solve(EE, banking ? &nu : nullptr);
          hist[j].push(th);
          Eigen::VectorXd tb_new = hist[j].average();
          theta_bar[j] = tb_new;
          double sse = gnodes[j].sse(tb_new);
          loss_orig += sse;
          loss_aug += sse + tb_new.dot(EE * tb_new);
          if (banking) {
            if (!(n - nu > 0)) throw NumericalError("nonpositive residual dof at node " +
                                                    std::to_string(j));
            sig2(j) = sse / (n - nu);
          }
          kap[j] = 8.0;
          bsum[j] = detail::bridge_sum(tb_new, spec.gamma);
          int a = 0;
          for (int k = 0; k < p; ++k) {
            if (k == j) continue;
            snap(j, k) = tb_new(a++);
          }
        } else {
          const Eigen::VectorXd& tb = theta_bar[j];
          Eigen::VectorXd slopes = tb.tail(p - 1);
          NoiseModel nm = noise_variance(nspec[j], slopes, cfg.n_e);
          if (cfg.n_e * nm.max_var() >= reg_limit) trace.regularity_warning = true;
          Eigen::MatrixXd Es = nm.diagonal
                                   ? sample_diag_noise(nm.var, cfg.n_e, rng)
                                   : sample_noise(nspec[j], slopes, cfg.n_e, rng);
          AugmentedDesign d;
          d.X = mixed_design(j);
          bool gauss_node = families[j].family == Family::Gaussian;
          d.y = gauss_node ? Eigen::VectorXd(Xc.col(j)) : Eigen::VectorXd(X.col(j));
          d.y_aug = gauss_node ? 0.0 : col_mean(j);
          d.E.resize(cfg.n_e, p);
          d.E.col(0).setOnes();
          d.E.rightCols(p - 1) = Es;
          FitOptions fo;
          fo.init = tb;
          Eigen::VectorXd th;
          try {
            th = fit_glm(families[j], d, fo).theta;
          } catch (const FitDivergence& e) {
            throw FitDivergence("node " + std::to_string(j) + ": " + e.what(),
                                e.last_iterate);
          }
          hist[j].push(th);
          Eigen::VectorXd tb_new = hist[j].average();
          theta_bar[j] = tb_new;
          double lo = gauss_node
                          ? 2.0 * neg_log_likelihood(families[j], d.X, d.y, tb_new)
                          : neg_log_likelihood(families[j], d.X, d.y, tb_new);
          double le = 0.0;
          Eigen::VectorXd etae = d.E * tb_new;
          for (int i = 0; i < etae.size(); ++i) le += obs_nll(families[j], d.y_aug, etae(i));
          if (gauss_node) le *= 2.0;
          loss_orig += lo;
          loss_aug += lo + le;
          kap[j] = kappa_const(families[j], tb_new(0));
          bsum[j] = detail::bridge_sum(tb_new.tail(p - 1), spec.gamma);
          snap(j, j) = tb_new(0);
          int a = 1;
          for (int k = 0; k < p; ++k) {
            if (k == j) continue;
            snap(j, k) = tb_new(a++);
          }
        }
      }

      loss_win.push(loss_orig);
      double lbar = loss_win.average();
      double c1sq = bridge_like ? c1_squared(spec.lambda, cfg.n_e, kap, bsum) : 0.0;

      IterRecord rec;
      rec.iter = t;
      rec.loss = loss_orig;
      rec.loss_aug = loss_aug;

      if (banking) {
        banked.push_back(snap);
        banked_sigma2.push_back(sig2);
        --banked_left;
      } else {
        bool conv_now = false;
        if (crit == Convergence::RelChange && t >= 2) {
          conv_now = rel_change_converged(prev_lbar, lbar, cfg.rel_tau);
        } else if (crit == Convergence::ZTest && t >= 2) {
          double d = loss_aug - prev_aug;
          double z = ztest_stat(d, prev_c1sq, c1sq, cfg.n_e);
          if (std::isfinite(z)) {
            rec.z = z;
            rec.has_z = true;
            conv_now = std::abs(z) <= zq;
          } else {
            // degenerate C1 (all-zero estimate): decide by relative change
            conv_now = rel_change_converged(prev_lbar, lbar, cfg.rel_tau);
          }
        }
        if (conv_now) {
          converged = true;
          trace.convergence_iter = t;
          banked_left = cfg.r;
        } else if (t >= cfg.T) {
          banked_left = cfg.r;  // budget exhausted; bank anyway
        }
        rec.converged = conv_now;
      }
      prev_lbar = lbar;
      prev_aug = loss_aug;
      prev_c1sq = c1sq;
      trace.iters.push_back(rec);
      final_loss = loss_orig;
      if (banked_left == 0) break;
    }
    trace.converged = converged;

    ThresholdResult th = hard_threshold(banked, cfg.tau0);
    SymmetrizeResult sym = symmetrize(th, cfg.sym);

    GraphEstimate est;
    est.theta = sym.theta;
    est.adjacency = sym.adjacency;
    est.trace = trace;
    if (all_gauss) {
      est.has_precision = true;
      est.sigma2 = banked_sigma2.back();
      Eigen::MatrixXd Om = Eigen::MatrixXd::Zero(p, p);
      for (int j = 0; j < p; ++j) {
        double wjj = 1.0 / est.sigma2(j);
        Om(j, j) = wjj;
        for (int k = 0; k < p; ++k)
          if (k != j) Om(k, j) = -sym.theta(j, k) * wjj;
      }
      est.precision = 0.5 * (Om + Om.transpose());
    }

    if (final_loss < best_loss) {
      best_loss = final_loss;
      best = std::move(est);
    }
  }
  return best;
}

struct GlmEstimate {
  Eigen::VectorXd theta;                   // final averaged estimate, zeroed entries set to 0
  Eigen::VectorXd theta_unzeroed;          // final averaged estimate before zeroing
  Eigen::VectorXi zeroed;
  std::vector<Eigen::VectorXd> snapshots;  // banked per-iteration raw fits
  std::vector<Eigen::VectorXd> banked_ma;  // banked averaged fits
  FitTrace trace;
  double sigma2 = 1.0;  // Gaussian residual variance at the final estimate
  double nu = 0.0;      // effective degrees of freedom of the final fit
  bool intercept = false;
};

// Single-regression run. With cfg.intercept an unpenalized intercept column is
// prepended (noise rows carry 1 there). Coefficient zeroing uses the straddle
// rule per coordinate; no symmetrization applies.
inline GlmEstimate run_panda_glm(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                 const NodeFamily& family, const NoiseSpec& spec,
                                 const PandaConfig& cfg) {
  cfg.validate();
  const int n = static_cast<int>(X.rows());
  const int qs = static_cast<int>(X.cols());
  if (n != y.size()) throw ValidationError("design rows and response length differ");
  if (!X.allFinite()) throw ValidationError("design contains non-finite values");
  validate_response(family, y);
  const bool gauss = family.family == Family::Gaussian;
  const bool icpt = cfg.intercept;
  const int q = qs + (icpt ? 1 : 0);
  if (n + cfg.n_e <= q) throw ValidationError("need n + n_e > q");

  Eigen::MatrixXd Xd(n, q);
  if (icpt) {
    Xd.col(0).setOnes();
    Xd.rightCols(qs) = X;
  } else {
    Xd = X;
  }
  Eigen::MatrixXd G = Xd.transpose() * Xd;
  Eigen::VectorXd gy = Xd.transpose() * y;
  const double yy = y.squaredNorm();
  const double y_aug = gauss ? 0.0 : y.mean();  // pseudo-response on noise rows

  // empty adaptive weights get filled from a pilot fit
  NoiseSpec nspec = spec;
  if (nspec.kind == Noise::AdaptiveLasso && nspec.consistent.size() == 0) {
    Eigen::VectorXd pt =
        detail::adaptive_pilot(family, Xd, y, y_aug, cfg.init_ridge, icpt ? 1 : 0);
    nspec.consistent = icpt ? Eigen::VectorXd(pt.tail(qs)) : pt;
  }
  nspec.validate(qs);

  const bool bridge_like = nspec.kind == Noise::Bridge;
  Convergence crit = cfg.criterion;
  if (crit == Convergence::ZTest && !bridge_like) crit = Convergence::RelChange;
  const double zq =
      crit == Convergence::ZTest ? normal_quantile(1.0 - cfg.alpha / 2.0) : 0.0;
  const double reg_limit = std::sqrt(static_cast<double>(n));

  // ridge start
  Eigen::VectorXd theta_bar;
  {
    AugmentedDesign d;
    d.X = Xd;
    d.y = y;
    d.y_aug = y_aug;
    d.E = Eigen::MatrixXd::Zero(qs, q);
    for (int k = 0; k < qs; ++k) d.E(k, (icpt ? 1 : 0) + k) = std::sqrt(cfg.init_ridge);
    theta_bar = gauss ? fit_ols(d) : fit_glm(family, d).theta;
  }

  detail::Window hist(cfg.m);
  detail::ScalarWindow loss_win(cfg.m);
  FitTrace trace;
  GlmEstimate out;
  out.intercept = icpt;
  double prev_lbar = std::numeric_limits<double>::quiet_NaN();
  double prev_aug = std::numeric_limits<double>::quiet_NaN();
  double prev_c1sq = std::numeric_limits<double>::quiet_NaN();
  bool converged = false;
  int banked_left = -1;
  double last_nu = 0.0, last_sse = 0.0;

  const int hard_cap = cfg.T + cfg.r + 1;
  for (int t = 1; t <= hard_cap; ++t) {
    const bool banking = banked_left >= 0;
    Rng rng = make_stream(cfg.seed, static_cast<std::uint64_t>(t), 0);
    Eigen::VectorXd slopes = icpt ? Eigen::VectorXd(theta_bar.tail(qs)) : theta_bar;
    NoiseModel nm = noise_variance(nspec, slopes, cfg.n_e);
    if (cfg.n_e * nm.max_var() >= reg_limit) trace.regularity_warning = true;
    Eigen::MatrixXd Es = nm.diagonal ? sample_diag_noise(nm.var, cfg.n_e, rng)
                                     : sample_noise(nspec, slopes, cfg.n_e, rng);
    Eigen::MatrixXd E(cfg.n_e, q);
    if (icpt) {
      E.col(0).setOnes();
      E.rightCols(qs) = Es;
    } else {
      E = Es;
    }

    Eigen::VectorXd th;
    double nu = 0.0;
    if (gauss) {
      Eigen::MatrixXd EE = Eigen::MatrixXd::Zero(q, q);
      EE.selfadjointView<Eigen::Lower>().rankUpdate(E.transpose());
      EE = EE.selfadjointView<Eigen::Lower>();
      Eigen::LDLT<Eigen::MatrixXd> ldlt(G + EE);
      th = ldlt.solve(gy);
      nu = ldlt.solve(G).trace();
    } else {
      AugmentedDesign d;
      d.X = Xd;
      d.y = y;
      d.E = E;
      d.y_aug = y_aug;
      FitOptions fo;
      fo.init = theta_bar;
      th = fit_glm(family, d, fo).theta;
    }
    hist.push(th);
    theta_bar = hist.average();

    double lo, le = 0.0;
    if (gauss) {
      lo = yy - 2.0 * theta_bar.dot(gy) + theta_bar.dot(G * theta_bar);
      Eigen::VectorXd etae = E * theta_bar;
      le = etae.squaredNorm();
      last_sse = lo;
      last_nu = nu;
    } else {
      lo = neg_log_likelihood(family, Xd, y, theta_bar);
      Eigen::VectorXd etae = E * theta_bar;
      for (int i = 0; i < etae.size(); ++i) le += obs_nll(family, y_aug, etae(i));
    }
    loss_win.push(lo);
    double lbar = loss_win.average();
    double c1sq = 0.0;
    if (bridge_like) {
      Eigen::VectorXd sl = icpt ? Eigen::VectorXd(theta_bar.tail(qs)) : theta_bar;
      double theta0 = icpt ? theta_bar(0) : 0.0;
      c1sq = c1_squared(nspec.lambda, cfg.n_e, {kappa_const(family, theta0)},
                        {detail::bridge_sum(sl, nspec.gamma)});
    }

    IterRecord rec;
    rec.iter = t;
    rec.loss = lo;
    rec.loss_aug = lo + le;

    if (banking) {
      out.snapshots.push_back(th);
      out.banked_ma.push_back(theta_bar);
      --banked_left;
    } else {
      bool conv_now = false;
      if (crit == Convergence::RelChange && t >= 2) {
        conv_now = rel_change_converged(prev_lbar, lbar, cfg.rel_tau);
      } else if (crit == Convergence::ZTest && t >= 2) {
        double dz = rec.loss_aug - prev_aug;
        double z = ztest_stat(dz, prev_c1sq, c1sq, cfg.n_e);
        if (std::isfinite(z)) {
          rec.z = z;
          rec.has_z = true;
          conv_now = std::abs(z) <= zq;
        } else {
          // degenerate C1 (all-zero estimate): decide by relative change
          conv_now = rel_change_converged(prev_lbar, lbar, cfg.rel_tau);
        }
      }
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
    prev_aug = rec.loss_aug;
    prev_c1sq = c1sq;
    trace.iters.push_back(rec);
    if (banked_left == 0) break;
  }
  trace.converged = converged;
  out.trace = trace;

  // per-coordinate straddle rule on the banked averaged estimates
  out.theta_unzeroed = out.banked_ma.back();
  out.zeroed = Eigen::VectorXi::Zero(q);
  const int k0 = icpt ? 1 : 0;  // intercept exempt from zeroing
  for (int k = k0; k < q; ++k) {
    double mx = -std::numeric_limits<double>::infinity();
    double mn = std::numeric_limits<double>::infinity();
    for (const auto& v : out.banked_ma) {
      mx = std::max(mx, v(k));
      mn = std::min(mn, v(k));
    }
    double prod = mx * mn;
    if (prod < 0.0 && std::abs(prod) < cfg.tau0) out.zeroed(k) = 1;
  }
  out.theta = out.theta_unzeroed;
  for (int k = 0; k < q; ++k)
    if (out.zeroed(k)) out.theta(k) = 0.0;

  if (gauss) {
    out.nu = last_nu;
    if (!(n - last_nu > 0)) throw NumericalError("nonpositive residual dof");
    out.sigma2 = last_sse / (n - last_nu);
  }
  return out;
}

}  // namespace panda
