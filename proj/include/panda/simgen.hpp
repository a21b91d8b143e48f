#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "panda/common.hpp"
#include "panda/engine.hpp"
#include "panda/glm.hpp"
#include "panda/inference.hpp"
#include "panda/ngd.hpp"
#include "panda/rng.hpp"

// Synthetic graphs and data plus evaluation: adjacency generators, precision
// construction, Gaussian and Gibbs samplers, ROC metrics, and the
// coverage-probability experiment driver.

namespace panda {

enum class Graph { ScaleFree, Lattice, Hub };

struct AdjacencySpec {
  Graph kind = Graph::ScaleFree;
  int p = 50;
  int attachment_m = 2;  // scale-free: edges added per new node
  int bandwidth = 1;     // lattice: band half-width
  int n_hubs = 1;        // hub: number of centers
  int target_edges = 0;  // optional: random-delete down to this count (0 = off)
  std::uint64_t seed = 1;

  void validate() const {
    if (p < 2) throw ValidationError("p must be >= 2");
    switch (kind) {
      case Graph::ScaleFree:
        if (attachment_m < 1) throw ValidationError("attachment_m must be >= 1");
        if (p < attachment_m + 1)
          throw ValidationError("p must exceed attachment_m");
        break;
      case Graph::Lattice:
        if (bandwidth < 1 || bandwidth > p - 1)
          throw ValidationError("bandwidth must be in [1, p-1]");
        break;
      case Graph::Hub:
        if (n_hubs < 1 || n_hubs >= p)
          throw ValidationError("n_hubs must be in [1, p-1]");
        break;
    }
    if (target_edges < 0) throw ValidationError("target_edges must be >= 0");
  }
};

inline int edge_count(const Eigen::MatrixXi& A) {
  int c = 0;
  for (int j = 0; j < A.rows(); ++j)
    for (int k = j + 1; k < A.cols(); ++k)
      if (A(j, k) != 0) ++c;
  return c;
}

inline Eigen::MatrixXi gen_adjacency(const AdjacencySpec& spec) {
  spec.validate();
  const int p = spec.p;
  Eigen::MatrixXi A = Eigen::MatrixXi::Zero(p, p);
  Rng rng = make_stream(spec.seed);
  auto add_edge = [&](int a, int b) { A(a, b) = A(b, a) = 1; };

  switch (spec.kind) {
    case Graph::ScaleFree: {
      // preferential attachment from a complete seed of attachment_m+1 nodes
      const int m = spec.attachment_m;
      const int m0 = m + 1;
      std::vector<double> deg(p, 0.0);
      for (int a = 0; a < m0; ++a)
        for (int b = a + 1; b < m0; ++b) {
          add_edge(a, b);
          deg[a] += 1.0;
          deg[b] += 1.0;
        }
      for (int i = m0; i < p; ++i) {
        std::vector<double> w(deg.begin(), deg.begin() + i);
        for (int pick = 0; pick < m; ++pick) {
          double total = 0.0;
          for (double x : w) total += x;
          std::uniform_real_distribution<double> u(0.0, total);
          double t = u(rng);
          int chosen = 0;
          for (int a = 0; a < i; ++a) {
            t -= w[a];
            if (t < 0.0) {
              chosen = a;
              break;
            }
          }
          add_edge(i, chosen);
          deg[chosen] += 1.0;
          deg[i] += 1.0;
          w[chosen] = 0.0;  // distinct targets
        }
      }
      break;
    }
    case Graph::Lattice: {
      for (int d = 1; d <= spec.bandwidth; ++d)
        for (int j = 0; j + d < p; ++j) add_edge(j, j + d);
      break;
    }
    case Graph::Hub: {
      // hubs are the first n_hubs nodes; the rest split into contiguous
      // blocks, one per hub, every non-hub wired to its own hub only
      const int h = spec.n_hubs;
      const int rest = p - h;
      int pos = h;
      for (int b = 0; b < h; ++b) {
        int size = rest / h + (b < rest % h ? 1 : 0);
        for (int k = 0; k < size; ++k) add_edge(b, pos++);
      }
      break;
    }
  }

  if (spec.target_edges > 0) {
    std::vector<std::pair<int, int>> edges;
    for (int j = 0; j < p; ++j)
      for (int k = j + 1; k < p; ++k)
        if (A(j, k)) edges.emplace_back(j, k);
    if (spec.target_edges > static_cast<int>(edges.size()))
      throw ValidationError("target_edges exceeds generated edge count");
    while (static_cast<int>(edges.size()) > spec.target_edges) {
      std::uniform_int_distribution<std::size_t> u(0, edges.size() - 1);
      std::size_t idx = u(rng);
      auto [a, b] = edges[idx];
      A(a, b) = A(b, a) = 0;
      edges[idx] = edges.back();
      edges.pop_back();
    }
  }
  return A;
}

// Precision matrix over an adjacency: fixed-magnitude off-diagonals with
// random signs, diagonal = absolute row sum * (1 + diag_dominance); strictly
// diagonally dominant, hence positive definite. Empty rows get 1.
inline Eigen::MatrixXd gen_precision(const Eigen::MatrixXi& A, double diag_dominance = 0.2,
                                     double weight = 0.4, std::uint64_t seed = 1) {
  const int p = static_cast<int>(A.rows());
  if (A.cols() != p) throw ValidationError("adjacency must be square");
  if (!(diag_dominance > 0)) throw ValidationError("diag_dominance must be > 0");
  if (!(weight > 0)) throw ValidationError("weight must be > 0");
  for (int j = 0; j < p; ++j) {
    if (A(j, j) != 0) throw ValidationError("adjacency diagonal must be zero");
    for (int k = 0; k < p; ++k)
      if (A(j, k) != A(k, j)) throw ValidationError("adjacency must be symmetric");
  }
  Rng rng = make_stream(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Eigen::MatrixXd Om = Eigen::MatrixXd::Zero(p, p);
  for (int j = 0; j < p; ++j)
    for (int k = j + 1; k < p; ++k)
      if (A(j, k)) Om(j, k) = Om(k, j) = (u(rng) < 0.5 ? -weight : weight);
  for (int j = 0; j < p; ++j) {
    double s = 0.0;
    for (int k = 0; k < p; ++k)
      if (k != j) s += std::abs(Om(j, k));
    Om(j, j) = s > 0 ? s * (1.0 + diag_dominance) : 1.0;
  }
  return Om;
}

// n draws from N_p(0, Omega^-1) via the Cholesky factor of Omega.
inline Eigen::MatrixXd sample_ggm(const Eigen::MatrixXd& Om, int n, std::uint64_t seed) {
  const int p = static_cast<int>(Om.rows());
  if (Om.cols() != p) throw ValidationError("precision must be square");
  if (n < 1) throw ValidationError("n must be >= 1");
  Eigen::LLT<Eigen::MatrixXd> llt(Om);
  if (llt.info() != Eigen::Success)
    throw NumericalError("precision not positive definite");
  Rng rng = make_stream(seed);
  Eigen::MatrixXd Z = rnorm_mat(rng, n, p);
  // x = U^-1 z with Omega = U'U gives Cov(x) = Omega^-1
  return llt.matrixU().solve(Z.transpose()).transpose();
}

// Systematic-scan Gibbs sampler from the node conditionals of a pairwise
// graphical model: eta_j = Theta(j,j) + sum_k Theta(j,k) x_k.
inline Eigen::MatrixXd sample_gibbs(const std::vector<NodeFamily>& families,
                                    const Eigen::MatrixXd& Theta, int n,
                                    int burnin = 1000, int thin = 10,
                                    std::uint64_t seed = 1) {
  const int p = static_cast<int>(Theta.rows());
  if (Theta.cols() != p) throw ValidationError("Theta must be square");
  if (static_cast<int>(families.size()) != p)
    throw ValidationError("family list length differs from node count");
  if (n < 1) throw ValidationError("n must be >= 1");
  if (burnin < 0 || thin < 1) throw ValidationError("burnin >= 0 and thin >= 1 required");
  for (int j = 0; j < p; ++j)
    for (int k = j + 1; k < p; ++k)
      if (Theta(j, k) != Theta(k, j))
        throw ValidationError("Theta interactions must be symmetric");
  for (int j = 0; j < p; ++j) {
    if (families[j].family == Family::NegBinomial)
      throw ValidationError("negative binomial graph sampling not supported");
    if (families[j].family == Family::Poisson)
      for (int k = 0; k < p; ++k)
        if (k != j && Theta(j, k) > 0)
          throw ValidationError("Poisson interactions must be non-positive");
  }

  Rng rng = make_stream(seed);
  Eigen::VectorXd x = Eigen::VectorXd::Zero(p);
  for (int j = 0; j < p; ++j)
    if (families[j].family == Family::Exponential) x(j) = 1.0;

  Eigen::MatrixXd out(n, p);
  const long total = static_cast<long>(burnin) + static_cast<long>(n - 1) * thin + 1;
  int row = 0;
  for (long s = 0; s < total; ++s) {
    for (int j = 0; j < p; ++j) {
      double eta = Theta(j, j);
      for (int k = 0; k < p; ++k)
        if (k != j) eta += Theta(j, k) * x(k);
      switch (families[j].family) {
        case Family::Gaussian:
          x(j) = eta + rnorm(rng);
          break;
        case Family::Bernoulli: {
          std::bernoulli_distribution b(detail::sigmoid(eta));
          x(j) = b(rng) ? 1.0 : 0.0;
          break;
        }
        case Family::Poisson: {
          if (eta > 30.0) throw NumericalError("diverging Poisson conditional");
          std::poisson_distribution<long> po(std::exp(eta));
          x(j) = static_cast<double>(po(rng));
          break;
        }
        case Family::Exponential: {
          if (eta > 30.0) throw NumericalError("diverging Exponential conditional");
          std::exponential_distribution<double> ex(std::exp(-eta));
          x(j) = ex(rng);
          break;
        }
        case Family::NegBinomial:
          break;  // rejected above
      }
    }
    if (s >= burnin && (s - burnin) % thin == 0) out.row(row++) = x.transpose();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Edge-recovery metrics
// ---------------------------------------------------------------------------

struct RocResult {
  std::vector<double> grid;
  std::vector<std::pair<double, double>> points;  // (FPR, TPR), sorted by FPR
  double auc = 0.0;
};

inline RocResult roc_curve(const std::vector<double>& grid,
                           const std::vector<Eigen::MatrixXi>& fits,
                           const Eigen::MatrixXi& truth) {
  if (grid.size() < 2) throw ValidationError("need a grid of at least two points");
  if (fits.size() != grid.size())
    throw ValidationError("fit count differs from grid length");
  const int p = static_cast<int>(truth.rows());
  if (truth.cols() != p) throw ValidationError("truth must be square");
  long t_edges = 0, t_non = 0;
  for (int j = 0; j < p; ++j)
    for (int k = j + 1; k < p; ++k)
      (truth(j, k) != 0 ? t_edges : t_non)++;
  if (t_edges == 0) throw ValidationError("truth has no edges");

  RocResult res;
  res.grid = grid;
  for (const auto& A : fits) {
    if (A.rows() != p || A.cols() != p) throw ValidationError("fit size mismatch");
    long fp = 0, tp = 0;
    for (int j = 0; j < p; ++j)
      for (int k = j + 1; k < p; ++k) {
        if (A(j, k) == 0) continue;
        (truth(j, k) != 0 ? tp : fp)++;
      }
    double fpr = t_non > 0 ? static_cast<double>(fp) / t_non : 0.0;
    double tpr = static_cast<double>(tp) / t_edges;
    res.points.emplace_back(fpr, tpr);
  }
  std::sort(res.points.begin(), res.points.end());

  std::vector<std::pair<double, double>> path;
  path.emplace_back(0.0, 0.0);
  path.insert(path.end(), res.points.begin(), res.points.end());
  path.emplace_back(1.0, 1.0);
  std::sort(path.begin(), path.end());
  double auc = 0.0;
  for (std::size_t i = 0; i + 1 < path.size(); ++i)
    auc += (path[i + 1].first - path[i].first) *
           0.5 * (path[i].second + path[i + 1].second);
  res.auc = auc;
  return res;
}

inline RocResult roc_curve(const std::vector<double>& grid,
                           const std::vector<GraphEstimate>& fits,
                           const Eigen::MatrixXi& truth) {
  std::vector<Eigen::MatrixXi> adj;
  adj.reserve(fits.size());
  for (const auto& f : fits) adj.push_back(f.adjacency);
  return roc_curve(grid, adj, truth);
}

// ---------------------------------------------------------------------------
// Coverage-probability experiment
// ---------------------------------------------------------------------------

struct GlmScenario {
  NodeFamily family = NodeFamily::gaussian();
  int n = 100;
  Eigen::VectorXd beta;         // true slopes; length sets the column count
  double x_sd = 1.0;            // iid N(0, x_sd^2) covariates
  bool x_uniform = false;       // switch covariates to iid Unif(x_lo, x_hi)
  double x_lo = -1.0, x_hi = 1.0;
  double sigma = 1.0;           // Gaussian response noise sd
  double intercept_value = 0.0; // used when cfg.intercept is set
  std::uint64_t seed = 1;

  void validate() const {
    if (n < 2) throw ValidationError("n must be >= 2");
    if (beta.size() < 1) throw ValidationError("beta must be non-empty");
    if (!(x_sd > 0)) throw ValidationError("x_sd must be > 0");
    if (x_uniform && !(x_hi > x_lo)) throw ValidationError("need x_hi > x_lo");
    if (!(sigma > 0)) throw ValidationError("sigma must be > 0");
  }
};

// One simulated design/response pair under the scenario's data law.
inline std::pair<Eigen::MatrixXd, Eigen::VectorXd> gen_glm_data(const GlmScenario& sc,
                                                                bool intercept, Rng& rng) {
  const int q = static_cast<int>(sc.beta.size());
  Eigen::MatrixXd X(sc.n, q);
  if (sc.x_uniform) {
    std::uniform_real_distribution<double> u(sc.x_lo, sc.x_hi);
    for (int i = 0; i < sc.n; ++i)
      for (int k = 0; k < q; ++k) X(i, k) = u(rng);
  } else {
    X = sc.x_sd * rnorm_mat(rng, sc.n, q);
  }
  Eigen::VectorXd eta = X * sc.beta;
  if (intercept) eta.array() += sc.intercept_value;
  Eigen::VectorXd y(sc.n);
  for (int i = 0; i < sc.n; ++i) {
    switch (sc.family.family) {
      case Family::Gaussian:
        y(i) = eta(i) + sc.sigma * rnorm(rng);
        break;
      case Family::Bernoulli: {
        std::bernoulli_distribution b(detail::sigmoid(eta(i)));
        y(i) = b(rng) ? 1.0 : 0.0;
        break;
      }
      case Family::Poisson: {
        if (eta(i) > 30.0) throw NumericalError("diverging Poisson mean");
        std::poisson_distribution<long> po(std::exp(eta(i)));
        y(i) = static_cast<double>(po(rng));
        break;
      }
      case Family::Exponential: {
        if (eta(i) > 30.0) throw NumericalError("diverging Exponential mean");
        std::exponential_distribution<double> ex(std::exp(-eta(i)));
        y(i) = ex(rng);
        break;
      }
      case Family::NegBinomial: {
        if (eta(i) > 30.0) throw NumericalError("diverging mean");
        double mu = std::exp(eta(i));
        std::gamma_distribution<double> ga(sc.family.nb_r, mu / sc.family.nb_r);
        std::poisson_distribution<long> po(std::max(ga(rng), 1e-12));
        y(i) = static_cast<double>(po(rng));
        break;
      }
    }
  }
  return {std::move(X), std::move(y)};
}

struct CoverageResult {
  Eigen::VectorXd coverage;  // per fitted coefficient (intercept first if any)
  Eigen::VectorXd width;     // mean interval width
  std::vector<int> failed;   // replicate indices whose fit raised an error
  int completed = 0;
};

inline CoverageResult coverage_experiment(const GlmScenario& sc, const NoiseSpec& spec,
                                          int replicates, double level,
                                          const PandaConfig& cfg) {
  sc.validate();
  cfg.validate();
  if (replicates < 1) throw ValidationError("replicates must be >= 1");
  if (!(level > 0 && level < 1)) throw ValidationError("level must be in (0,1)");
  const int qs = static_cast<int>(sc.beta.size());
  const int q = qs + (cfg.intercept ? 1 : 0);
  Eigen::VectorXd truth(q);
  if (cfg.intercept) {
    truth(0) = sc.intercept_value;
    truth.tail(qs) = sc.beta;
  } else {
    truth = sc.beta;
  }

  CoverageResult out;
  out.coverage = Eigen::VectorXd::Zero(q);
  out.width = Eigen::VectorXd::Zero(q);
  for (int rep = 0; rep < replicates; ++rep) {
    Rng rng = make_stream(sc.seed, 700000000ULL + static_cast<std::uint64_t>(rep));
    auto [X, y] = gen_glm_data(sc, cfg.intercept, rng);
    PandaConfig c = cfg;
    c.seed = cfg.seed + 1000003ULL * static_cast<std::uint64_t>(rep + 1);
    try {
      GlmEstimate est = run_panda_glm(X, y, sc.family, spec, c);
      InferenceReport rep_inf = run_inference(est, sc.family, X, y, spec, c, level);
      for (int k = 0; k < q; ++k) {
        auto [lo, hi] = rep_inf.intervals[k];
        if (lo <= truth(k) && truth(k) <= hi) out.coverage(k) += 1.0;
        out.width(k) += hi - lo;
      }
      ++out.completed;
    } catch (const NumericalError&) {
      out.failed.push_back(rep);
    }
  }
  if (out.completed > 0) {
    out.coverage /= out.completed;
    out.width /= out.completed;
  }
  return out;
}

}  // namespace panda
