#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "panda/inference.hpp"

using namespace panda;

namespace {

// independent per-row negative log-likelihood, constants dropped
double row_nll(const NodeFamily& f, double y, double eta) {
  switch (f.family) {
    case Family::Gaussian: return 0.5 * (y - eta) * (y - eta);
    case Family::Bernoulli: return std::log1p(std::exp(eta)) - y * eta;
    case Family::Poisson: return std::exp(eta) - y * eta;
    case Family::Exponential: return eta + y * std::exp(-eta);
    case Family::NegBinomial:
      return (y + f.nb_r) * std::log(std::exp(eta) + f.nb_r) - y * eta;
  }
  return 0.0;
}

double total_nll(const NodeFamily& f, const AugmentedDesign& d, const Eigen::VectorXd& th) {
  double s = 0.0;
  Eigen::VectorXd eta = d.X * th;
  for (int i = 0; i < eta.size(); ++i) s += row_nll(f, d.y(i), eta(i));
  if (d.E.rows() > 0) {
    Eigen::VectorXd ee = d.E * th;
    for (int i = 0; i < ee.size(); ++i) s += row_nll(f, d.y_aug, ee(i));
  }
  return s;
}

Eigen::MatrixXd fd_hessian(const NodeFamily& f, const AugmentedDesign& d,
                           const Eigen::VectorXd& th, double h) {
  const int q = static_cast<int>(th.size());
  Eigen::MatrixXd H(q, q);
  auto at = [&](const Eigen::VectorXd& t) { return total_nll(f, d, t); };
  double g0 = at(th);
  for (int a = 0; a < q; ++a) {
    Eigen::VectorXd ta = th;
    ta(a) += h;
    Eigen::VectorXd tb = th;
    tb(a) -= h;
    H(a, a) = (at(ta) - 2.0 * g0 + at(tb)) / (h * h);
    for (int b = a + 1; b < q; ++b) {
      Eigen::VectorXd pp = th, pm = th, mp = th, mm = th;
      pp(a) += h; pp(b) += h;
      pm(a) += h; pm(b) -= h;
      mp(a) -= h; mp(b) += h;
      mm(a) -= h; mm(b) -= h;
      H(a, b) = H(b, a) = (at(pp) - at(pm) - at(mp) + at(mm)) / (4.0 * h * h);
    }
  }
  return H;
}

// second difference of a scalar curve, used to rebuild family weights
template <class F>
double fd2(F&& g, double x, double h) {
  return (g(x + h) - 2.0 * g(x) + g(x - h)) / (h * h);
}

AugmentedDesign toy_design(const NodeFamily& f, std::uint64_t seed) {
  Rng rng = make_stream(seed);
  AugmentedDesign d;
  d.X = 0.5 * rnorm_mat(rng, 5, 3);
  d.E = 0.3 * rnorm_mat(rng, 4, 3);
  d.y.resize(5);
  switch (f.family) {
    case Family::Gaussian:
      for (int i = 0; i < 5; ++i) d.y(i) = rnorm(rng);
      break;
    case Family::Bernoulli:
      d.y << 0, 1, 1, 0, 1;
      break;
    case Family::Poisson:
    case Family::NegBinomial:
      d.y << 0, 2, 1, 3, 1;
      break;
    case Family::Exponential:
      d.y << 0.4, 1.2, 0.7, 2.1, 0.3;
      break;
  }
  d.y_aug = d.y.mean();
  return d;
}

}  // namespace

TEST_CASE("expected information with zero noise is the raw gram matrix") {
  Rng rng = make_stream(101);
  Eigen::MatrixXd X = rnorm_mat(rng, 6, 3);
  Eigen::VectorXd th(3);
  th << 0.4, -1.0, 0.2;
  NoiseSpec spec = NoiseSpec::lasso(0.5);
  Eigen::MatrixXd I = fisher_augmented(NodeFamily::gaussian(), X, spec, th, 0);
  CHECK((I - X.transpose() * X).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("expected information adds a reciprocal-magnitude ridge under lasso noise") {
  Rng rng = make_stream(103);
  Eigen::MatrixXd X = rnorm_mat(rng, 6, 3);
  Eigen::VectorXd th(3);
  th << 0.5, -2.0, 1.0;
  const double lam = 0.3;
  const int n_e = 10;
  NoiseSpec spec = NoiseSpec::lasso(lam);
  Eigen::MatrixXd I = fisher_augmented(NodeFamily::gaussian(), X, spec, th, n_e);
  Eigen::MatrixXd want = X.transpose() * X;
  for (int k = 0; k < 3; ++k) want(k, k) += lam * n_e / std::abs(th(k));
  CHECK((I - want).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("empirical information matches a finite-difference hessian") {
  NodeFamily f = NodeFamily::poisson();
  Rng rng = make_stream(107);
  AugmentedDesign d;
  d.X = 0.4 * rnorm_mat(rng, 5, 2);
  d.E = 0.3 * rnorm_mat(rng, 4, 2);
  d.y.resize(5);
  d.y << 0, 1, 2, 1, 3;
  d.y_aug = d.y.mean();
  Eigen::VectorXd th(2);
  th << 0.3, -0.4;
  Eigen::MatrixXd I = fisher_augmented(f, d, th);
  Eigen::MatrixXd H = fd_hessian(f, d, th, 1e-5);
  CHECK((I - H).norm() / I.norm() < 1e-4);
}

TEST_CASE("empirical information matches finite differences for every family") {
  std::vector<NodeFamily> fams = {NodeFamily::gaussian(), NodeFamily::bernoulli(),
                                  NodeFamily::poisson(), NodeFamily::exponential(),
                                  NodeFamily::negbinomial(3.0)};
  Eigen::VectorXd th(3);
  th << 0.2, -0.5, 0.3;
  for (std::size_t k = 0; k < fams.size(); ++k) {
    AugmentedDesign d = toy_design(fams[k], 200 + k);
    Eigen::MatrixXd I = fisher_augmented(fams[k], d, th);
    Eigen::MatrixXd H = fd_hessian(fams[k], d, th, 1e-5);
    INFO("family " << family_name(fams[k].family));
    CHECK((I - H).norm() / I.norm() < 1e-3);
  }
}

TEST_CASE("sandwich with zero noise is the classical least-squares covariance") {
  Rng rng = make_stream(113);
  Eigen::MatrixXd X = rnorm_mat(rng, 12, 3);
  Eigen::VectorXd th(3);
  th << 1.0, 0.5, -0.2;
  const double s2 = 2.5;
  NoiseSpec spec = NoiseSpec::lasso(0.5);
  Eigen::MatrixXd S = sandwich_covariance(NodeFamily::gaussian(), X, spec, th, 0, s2);
  Eigen::MatrixXd G = X.transpose() * X;
  Eigen::MatrixXd want = s2 * G.llt().solve(Eigen::MatrixXd::Identity(3, 3));
  CHECK((S - want).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("an infinitely noisy coordinate has vanishing variance") {
  Rng rng = make_stream(127);
  Eigen::MatrixXd X = rnorm_mat(rng, 40, 3);
  Eigen::VectorXd th(3);
  th << 1e-8, 1.0, -1.0;  // floor-level magnitude blows the first noise variance up
  NoiseSpec spec = NoiseSpec::lasso(1.0);
  Eigen::MatrixXd S = sandwich_covariance(NodeFamily::gaussian(), X, spec, th, 100);
  CHECK(S(0, 0) < 1e-12);
  CHECK(S(1, 1) > 1e-4);
}

TEST_CASE("logistic sandwich agrees with a finite-difference assembly") {
  NodeFamily f = NodeFamily::bernoulli();
  Rng rng = make_stream(131);
  Eigen::MatrixXd X = rnorm_mat(rng, 50, 3);
  Eigen::VectorXd th(3);
  th << 0.3, -0.5, 0.2;
  const double lam = 0.1;
  const int n_e = 20;
  NoiseSpec spec = NoiseSpec::lasso(lam);

  auto softplus = [](double x) { return std::log1p(std::exp(x)); };
  Eigen::VectorXd eta = X * th;
  Eigen::MatrixXd Ix = Eigen::MatrixXd::Zero(3, 3);
  for (int i = 0; i < X.rows(); ++i)
    Ix += fd2(softplus, eta(i), 1e-4) * X.row(i).transpose() * X.row(i);
  double w0 = fd2(softplus, 0.0, 1e-4);
  Eigen::MatrixXd M = Ix;
  for (int k = 0; k < 3; ++k) M(k, k) += n_e * w0 * lam / std::abs(th(k));
  Eigen::MatrixXd Minv = M.inverse();
  Eigen::MatrixXd oracle = Minv * Ix * Minv;

  Eigen::MatrixXd S = sandwich_covariance(f, X, spec, th, n_e);
  CHECK((S - oracle).norm() / oracle.norm() < 1e-3);
}

TEST_CASE("effective degrees of freedom equal the column count with zero noise") {
  Rng rng = make_stream(137);
  const int n = 30, q = 4;
  Eigen::MatrixXd X = rnorm_mat(rng, n, q);
  Eigen::VectorXd y = rnorm_mat(rng, n, 1);
  Eigen::MatrixXd G = X.transpose() * X;
  Eigen::VectorXd th = G.ldlt().solve(X.transpose() * y);
  LinearSigma2 ls = linear_sigma2(X, y, th, G);
  CHECK(ls.nu == Catch::Approx(q).margin(1e-9));
  double sse = (y - X * th).squaredNorm();
  CHECK(ls.sigma2 == Catch::Approx(sse / (n - q)).epsilon(1e-12));
}

TEST_CASE("effective degrees of freedom vanish under infinite noise") {
  Rng rng = make_stream(139);
  Eigen::MatrixXd X = rnorm_mat(rng, 20, 3);
  Eigen::VectorXd y = rnorm_mat(rng, 20, 1);
  Eigen::VectorXd th = Eigen::VectorXd::Zero(3);
  Eigen::MatrixXd M = X.transpose() * X;
  M.diagonal().array() += 1e12;
  LinearSigma2 ls = linear_sigma2(X, y, th, M);
  CHECK(ls.nu < 1e-6);
  // dof at or past the sample size is rejected
  Eigen::MatrixXd tiny = 1e-9 * (X.transpose() * X).eval();
  CHECK_THROWS_AS(linear_sigma2(X, y, th, tiny), NumericalError);
}

TEST_CASE("effective degrees of freedom match the spectral oracle") {
  Rng rng = make_stream(149);
  const int n = 30, q = 5;
  Eigen::MatrixXd X = rnorm_mat(rng, n, q);
  Eigen::VectorXd y = rnorm_mat(rng, n, 1);
  Eigen::VectorXd th(q);
  th << 0.8, -0.3, 1.2, -0.9, 0.4;
  Eigen::MatrixXd G = X.transpose() * X;
  Eigen::VectorXd dpen(q);
  for (int k = 0; k < q; ++k) dpen(k) = 2.0 / std::abs(th(k));  // lambda*n_e = 2
  Eigen::MatrixXd M = G;
  M.diagonal() += dpen;
  LinearSigma2 ls = linear_sigma2(X, y, th, M);
  CHECK(ls.nu > 0.0);
  CHECK(ls.nu < q);
  // trace((G+D)^-1 G) = sum lam/(1+lam) over eigenvalues of D^-1/2 G D^-1/2
  Eigen::VectorXd dinv = dpen.cwiseSqrt().cwiseInverse();
  Eigen::MatrixXd B = dinv.asDiagonal() * G * dinv.asDiagonal();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(B);
  double want = 0.0;
  for (int k = 0; k < q; ++k) want += es.eigenvalues()(k) / (1.0 + es.eigenvalues()(k));
  CHECK(ls.nu == Catch::Approx(want).margin(1e-10));
}

TEST_CASE("identical snapshots leave no between-iteration variance") {
  Eigen::VectorXd s(2);
  s << 0.7, -0.3;
  Eigen::MatrixXd C(2, 2);
  C << 0.04, 0.01, 0.01, 0.09;
  std::vector<Eigen::VectorXd> snaps(4, s);
  std::vector<Eigen::MatrixXd> covs(4, C);
  InferenceReport rep = confidence_intervals(snaps, covs, 0.95);
  CHECK(rep.lambda_between.cwiseAbs().maxCoeff() < 1e-15);
  CHECK((rep.total - C).cwiseAbs().maxCoeff() < 1e-14);
  for (int k = 0; k < 2; ++k) {
    CHECK(rep.intervals[k].first <= rep.theta_bar(k));
    CHECK(rep.intervals[k].second >= rep.theta_bar(k));
  }
  CHECK_THROWS_AS(confidence_intervals({s}, {C}, 0.95), ValidationError);
}

TEST_CASE("scalar interval half-width follows the normal quantile") {
  // variance 4 at the root-n scale with n = 100 puts 0.04 on the estimate scale
  const double v = 4.0;
  const int n = 100;
  Eigen::VectorXd s(1);
  s << 0.7;
  Eigen::MatrixXd C(1, 1);
  C << v / n;
  std::vector<Eigen::VectorXd> snaps(3, s);
  std::vector<Eigen::MatrixXd> covs(3, C);
  InferenceReport rep = confidence_intervals(snaps, covs, 0.95);
  double hw = rep.intervals[0].second - rep.theta_bar(0);
  CHECK(hw == Catch::Approx(1.959964 * std::sqrt(v / n)).margin(1e-6));
}

TEST_CASE("total covariance stays positive semidefinite") {
  Rng rng = make_stream(151);
  for (int rep_i = 0; rep_i < 20; ++rep_i) {
    std::vector<Eigen::VectorXd> snaps;
    std::vector<Eigen::MatrixXd> covs;
    for (int t = 0; t < 5; ++t) {
      snaps.push_back(rnorm_mat(rng, 4, 1));
      Eigen::MatrixXd A = rnorm_mat(rng, 4, 4);
      covs.push_back(A.transpose() * A / 4.0);
    }
    InferenceReport rep = confidence_intervals(snaps, covs, 0.9);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(rep.total);
    CHECK(es.eigenvalues().minCoeff() >= -1e-10);
    CHECK((rep.sigma_bar - rep.sigma_bar.transpose()).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((rep.lambda_between - rep.lambda_between.transpose()).cwiseAbs().maxCoeff() <
          1e-12);
  }
}

TEST_CASE("vanishing noise reproduces classical least-squares intervals") {
  const int n = 80, q = 3;
  Rng rng = make_stream(157);
  Eigen::MatrixXd X = rnorm_mat(rng, n, q);
  Eigen::VectorXd beta(q);
  beta << 1.0, -0.5, 0.8;
  Eigen::VectorXd y = X * beta + rnorm_mat(rng, n, 1);

  PandaConfig cfg;
  cfg.T = 40;
  cfg.m = 20;
  cfg.r = 10;
  cfg.n_e = 8;
  cfg.seed = 99;
  NoiseSpec spec = NoiseSpec::lasso(1e-12);
  GlmEstimate est = run_panda_glm(X, y, NodeFamily::gaussian(), spec, cfg);
  InferenceReport rep = run_inference(est, NodeFamily::gaussian(), X, y, spec, cfg);

  Eigen::MatrixXd G = X.transpose() * X;
  Eigen::VectorXd ols = G.ldlt().solve(X.transpose() * y);
  double s2 = (y - X * ols).squaredNorm() / (n - q);
  Eigen::MatrixXd cov = s2 * G.llt().solve(Eigen::MatrixXd::Identity(q, q));
  CHECK(rep.df_nu == Catch::Approx(q).margin(1e-4));
  for (int k = 0; k < q; ++k) {
    double hw = 1.959964 * std::sqrt(cov(k, k));
    CHECK(rep.intervals[k].first == Catch::Approx(ols(k) - hw).margin(1e-4));
    CHECK(rep.intervals[k].second == Catch::Approx(ols(k) + hw).margin(1e-4));
  }
}

TEST_CASE("regularity warning fires when the noise block dominates") {
  const int n = 25;
  Rng rng = make_stream(163);
  Eigen::MatrixXd X = rnorm_mat(rng, n, 2);
  Eigen::VectorXd y = X.col(0) + rnorm_mat(rng, n, 1);
  PandaConfig cfg;
  cfg.T = 6;
  cfg.m = 2;
  cfg.r = 2;
  cfg.n_e = 10;
  cfg.seed = 3;
  GlmEstimate loud = run_panda_glm(X, y, NodeFamily::gaussian(), NoiseSpec::lasso(10.0), cfg);
  CHECK(loud.trace.regularity_warning);
  GlmEstimate quiet =
      run_panda_glm(X, y, NodeFamily::gaussian(), NoiseSpec::lasso(1e-8), cfg);
  CHECK_FALSE(quiet.trace.regularity_warning);
}
