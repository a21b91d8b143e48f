#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Dense>

namespace panda {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Deterministic stream per (seed, iteration, node); independent of evaluation order.
inline Rng make_stream(std::uint64_t seed, std::uint64_t iter = 0, std::uint64_t node = 0) {
  std::uint64_t s = splitmix64(seed);
  s = splitmix64(s ^ (0x517cc1b727220a95ULL + iter));
  s = splitmix64(s ^ (0x2545f4914f6cdd1dULL + node));
  return Rng(s);
}

inline double rnorm(Rng& g) {
  std::normal_distribution<double> d(0.0, 1.0);
  return d(g);
}

inline Eigen::VectorXd rnorm_vec(Rng& g, int n) {
  std::normal_distribution<double> d(0.0, 1.0);
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v(i) = d(g);
  return v;
}

inline Eigen::MatrixXd rnorm_mat(Rng& g, int n, int q) {
  std::normal_distribution<double> d(0.0, 1.0);
  Eigen::MatrixXd m(n, q);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < q; ++j) m(i, j) = d(g);
  return m;
}

}  // namespace panda
