#pragma once

// Reference values computed independently of the library: pointwise
// mean-field drift/diffusion from the reaction sum, the printed L10 block,
// and the exact Ornstein-Uhlenbeck transition.

#include <array>
#include <cmath>
#include <random>

#include <Eigen/Dense>

namespace oracle {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

/// Imitation rates g(i, j) of the three-type voter example and uniform
/// exploration 0.01.
inline Mat imitation_rates() {
  Mat g(3, 3);
  g << 0, 2, 1,
       1, 0, 2,
       2, 1, 0;
  return g;
}

inline Mat exploration_rates(double e = 0.01) {
  Mat m = Mat::Constant(3, 3, e);
  m.diagonal().setZero();
  return m;
}

/// Full three-type mean-field drift and (1/N-scaled) diffusion at frequency
/// vector c, summed reaction by reaction: imitation i -> j fires at rate
/// g(i,j) c_i c_j, exploration i -> j at rate e(i,j) c_i; each moves one
/// agent from i to j.
inline void mean_field(const Vec& c, const Mat& g, const Mat& e, double n, Vec& b, Mat& a) {
  const int d = static_cast<int>(c.size());
  b = Vec::Zero(d);
  a = Mat::Zero(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) {
      if (i == j) continue;
      const double rate = g(i, j) * c(i) * c(j) + e(i, j) * c(i);
      Vec nu = Vec::Zero(d);
      nu(i) = -1.0;
      nu(j) = 1.0;
      b += rate * nu;
      a += rate * nu * nu.transpose() / n;
    }
}

/// Same quantities in reduced coordinates (c1, c2), with c3 = 1 - c1 - c2.
inline void reduced_mean_field(double c1, double c2, const Mat& g, const Mat& e, double n, Vec& b, Mat& a) {
  Vec c(3);
  c << c1, c2, 1.0 - c1 - c2;
  Vec bf;
  Mat af;
  mean_field(c, g, e, n, bf, af);
  b = bf.head(2);
  a = af.topLeftCorner(2, 2);
}

/// The printed first six columns of L10; rows follow the basis order
/// 1, c1, c2, c1^2, c1c2, c2^2, c1^3, c1^2c2, c1c2^2, c2^3.
inline Mat printed_l10() {
  Mat l(10, 6);
  l << 0, 0.01, 0.01, 0.001, 0, 0.001,
       0, 0.97, 0, 0.321, 0.009, 0,
       0, 0, -1.03, 0, 0.009, 0.321,
       0, -1, 0, 1.64, 0, 0,
       0, -2, 2, 0, -0.36, 0,
       0, 0, 1, 0, 0, -2.36,
       0, 0, 0, -2, 0, 0,
       0, 0, 0, -4, 1, 0,
       0, 0, 0, 0, -1, 4,
       0, 0, 0, 0, 0, 2;
  return l;
}

/// Exact OU transition dX = -theta X dt + sigma dW over time tau.
inline double ou_step(double x, double tau, double theta, double sigma, std::mt19937_64& rng) {
  std::normal_distribution<double> z(0.0, 1.0);
  const double mean = x * std::exp(-theta * tau);
  const double var = sigma * sigma * (1.0 - std::exp(-2.0 * theta * tau)) / (2.0 * theta);
  return mean + std::sqrt(var) * z(rng);
}

/// Raw second moment of the OU increment over tau divided by tau.
inline double ou_raw_diffusion(double x, double tau, double theta, double sigma) {
  const double m = x * (std::exp(-theta * tau) - 1.0);
  const double var = sigma * sigma * (1.0 - std::exp(-2.0 * theta * tau)) / (2.0 * theta);
  return (m * m + var) / tau;
}

/// Total-variation distance between two probability vectors.
inline double total_variation(const Vec& p, const Vec& q) { return 0.5 * (p - q).cwiseAbs().sum(); }

}  // namespace oracle
