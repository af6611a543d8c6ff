#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <cmath>

#include "abmkoop/polynomial.hpp"

namespace abmkoop {

/// Matrix exponential by scaling and squaring with a truncated Taylor series.
/// The argument is scaled until its 1-norm is at most 1/2; the series is cut
/// once a term drops below `tol` in norm.
inline Matrix expm(const Matrix& a, double tol = 1e-12) {
  const Eigen::Index n = a.rows();
  if (n != a.cols()) throw ContractError("expm needs a square matrix");
  const double norm = a.cwiseAbs().colwise().sum().maxCoeff();
  int squarings = 0;
  if (norm > 0.5) squarings = static_cast<int>(std::ceil(std::log2(norm / 0.5)));
  const Matrix scaled = a / std::ldexp(1.0, squarings);

  Matrix result = Matrix::Identity(n, n);
  Matrix term = Matrix::Identity(n, n);
  for (int k = 1; k < 64; ++k) {
    term = term * scaled / static_cast<double>(k);
    result += term;
    if (term.cwiseAbs().colwise().sum().maxCoeff() < tol) break;
  }
  for (int s = 0; s < squarings; ++s) result = result * result;
  return result;
}

using SparseMatrix = Eigen::SparseMatrix<double>;

/// exp(t A) v for a sparse A without forming the exponential: the time span is
/// split into steps with ||A dt||_1 <= 1/2 and each step applies a truncated
/// Taylor series.
inline Vector expm_action(const SparseMatrix& a, double t, Vector v, double tol = 1e-12) {
  if (t == 0.0) return v;
  double norm = 0.0;
  for (Eigen::Index c = 0; c < a.outerSize(); ++c) {
    double s = 0.0;
    for (SparseMatrix::InnerIterator it(a, c); it; ++it) s += std::abs(it.value());
    norm = std::max(norm, s);
  }
  const int steps = std::max(1, static_cast<int>(std::ceil(norm * std::abs(t) / 0.5)));
  const double dt = t / steps;
  for (int s = 0; s < steps; ++s) {
    Vector term = v;
    Vector acc = v;
    for (int k = 1; k < 64; ++k) {
      term = (a * term) * (dt / k);
      acc += term;
      if (term.lpNorm<1>() < tol * std::max(1.0, acc.lpNorm<1>())) break;
    }
    v = std::move(acc);
  }
  return v;
}

struct LeastSquaresResult {
  Matrix solution;
  Eigen::Index rank = 0;
  bool rank_deficient = false;
  Vector singular_values;
};

/// Minimum-norm least-squares solution of A X = B through the SVD, treating
/// singular values below rel_cutoff * sigma_max as zero.
inline LeastSquaresResult pinv_solve(const Matrix& a, const Matrix& b, double rel_cutoff = 1e-10) {
  if (a.rows() != b.rows()) throw ContractError("least-squares operands have different row counts");
  Eigen::BDCSVD<Matrix> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector& s = svd.singularValues();
  LeastSquaresResult out;
  out.singular_values = s;
  const double smax = s.size() > 0 ? s(0) : 0.0;
  const double cut = rel_cutoff * smax;
  Vector inv = Vector::Zero(s.size());
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    if (s(i) > cut && s(i) > 0.0) {
      inv(i) = 1.0 / s(i);
      ++out.rank;
    }
  }
  out.rank_deficient = out.rank < std::min(a.rows(), a.cols());
  out.solution = svd.matrixV() * inv.asDiagonal() * (svd.matrixU().transpose() * b);
  return out;
}

struct SigmaResult {
  Matrix sigma;
  double clipped_mass = 0.0;  ///< sum of |negative eigenvalues| removed
};

/// Square root of a symmetric diffusion matrix. Negative eigenvalues are
/// clipped to zero; the returned sigma is the symmetric root V sqrt(L) V^T, so
/// sigma sigma^T is the PSD projection of a.
inline SigmaResult psd_sigma(const Matrix& a) {
  if (a.rows() != a.cols()) throw ContractError("psd_sigma needs a square matrix");
  const Matrix sym = 0.5 * (a + a.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(sym);
  Vector lambda = eig.eigenvalues();
  SigmaResult out;
  for (Eigen::Index i = 0; i < lambda.size(); ++i) {
    if (lambda(i) < 0.0) {
      out.clipped_mass += -lambda(i);
      lambda(i) = 0.0;
    }
  }
  const Matrix& v = eig.eigenvectors();
  out.sigma = v * lambda.cwiseSqrt().asDiagonal() * v.transpose();
  return out;
}

}  // namespace abmkoop
