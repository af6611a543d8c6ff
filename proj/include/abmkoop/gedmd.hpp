#pragma once

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstddef>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "abmkoop/errors.hpp"
#include "abmkoop/km.hpp"
#include "abmkoop/linalg.hpp"
#include "abmkoop/polynomial.hpp"
#include "abmkoop/sde_model.hpp"
#include "abmkoop/voter.hpp"

namespace abmkoop {

/// Maximum monomial degree needed to identify drift and diffusion of a model
/// whose transitions have order at most `order`.
constexpr int identification_degree(int order) { return order + 1; }

inline Vector eval_dictionary(const MonomialDictionary& dict, const Vector& x) {
  if (x.size() != dict.dim()) throw ContractError("state dimension does not match the dictionary");
  Vector psi(static_cast<Eigen::Index>(dict.size()));
  for (std::size_t k = 0; k < dict.size(); ++k) psi(static_cast<Eigen::Index>(k)) = eval_monomial(dict[k], x.data());
  return psi;
}

/// (L psi_k)(x) = sum_i b_i d_i psi_k + 1/2 sum_ij a_ij d_i d_j psi_k for every
/// dictionary entry, with monomial derivatives taken on the exponents.
inline Vector apply_generator_to_dictionary(const MonomialDictionary& dict, const Vector& x, const Vector& b,
                                            const Matrix& a) {
  const int d = dict.dim();
  if (x.size() != d || b.size() != d || a.rows() != d || a.cols() != d)
    throw ContractError("state, drift and diffusion dimensions must match the dictionary");
  // powers[i][e] = x_i^e
  std::vector<std::vector<double>> powers(static_cast<std::size_t>(d),
                                          std::vector<double>(static_cast<std::size_t>(dict.max_degree() + 1), 1.0));
  for (int i = 0; i < d; ++i)
    for (int e = 1; e <= dict.max_degree(); ++e)
      powers[static_cast<std::size_t>(i)][static_cast<std::size_t>(e)] =
          powers[static_cast<std::size_t>(i)][static_cast<std::size_t>(e - 1)] * x(i);
  auto mono = [&](const MultiIndex& mi) {
    double v = 1.0;
    for (int i = 0; i < d; ++i) v *= powers[static_cast<std::size_t>(i)][static_cast<std::size_t>(mi[static_cast<std::size_t>(i)])];
    return v;
  };
  Vector out = Vector::Zero(static_cast<Eigen::Index>(dict.size()));
  for (std::size_t k = 0; k < dict.size(); ++k) {
    MultiIndex mi = dict[k];
    double v = 0.0;
    for (int i = 0; i < d; ++i) {
      const int ei = mi[static_cast<std::size_t>(i)];
      if (ei == 0) continue;
      mi[static_cast<std::size_t>(i)] -= 1;
      v += b(i) * ei * mono(mi);
      // second derivatives: diagonal then off-diagonal (counted twice via symmetry)
      if (ei >= 2) {
        mi[static_cast<std::size_t>(i)] -= 1;
        v += 0.5 * a(i, i) * ei * (ei - 1) * mono(mi);
        mi[static_cast<std::size_t>(i)] += 1;
      }
      for (int j = i + 1; j < d; ++j) {
        const int ej = mi[static_cast<std::size_t>(j)];
        if (ej == 0) continue;
        mi[static_cast<std::size_t>(j)] -= 1;
        v += a(i, j) * ei * ej * mono(mi);
        mi[static_cast<std::size_t>(j)] += 1;
      }
      mi[static_cast<std::size_t>(i)] += 1;
    }
    out(static_cast<Eigen::Index>(k)) = v;
  }
  return out;
}

/// Matrix representation of the generator on a dictionary: column k holds
/// the coefficients of L psi_k.
struct GeneratorMatrix {
  DictionaryPtr dictionary;
  Matrix entries;
  Eigen::Index rank = 0;
  bool rank_deficient = false;
  bool underdetermined = false;  ///< fewer measurements than dictionary entries
  double residual = 0.0;         ///< ||dPsi - M Psi||_F
  /// Fit of the second-order (diffusion) part of dPsi alone, with the same
  /// pseudoinverse. Empty for analytic generators.
  Matrix second_order;
  /// Columns whose image was not representable on the dictionary (analytic
  /// construction only); their out-of-dictionary terms were dropped.
  std::vector<std::size_t> truncated_columns;

  std::size_t size() const { return dictionary->size(); }
};

struct FitOptions {
  double rel_cutoff = 1e-10;
  /// Coefficients of L with magnitude below this are zeroed (0 = off).
  double hard_threshold = 0.0;
};

struct DataMatrices {
  Matrix psi;         ///< n x m
  Matrix dpsi;        ///< n x m
  Matrix dpsi_second; ///< n x m, the 1/2 a : Hessian part of dpsi (optional)
};

inline DataMatrices assemble(const std::vector<Measurement>& ms, const MonomialDictionary& dict) {
  const auto n = static_cast<Eigen::Index>(dict.size());
  const auto m = static_cast<Eigen::Index>(ms.size());
  DataMatrices out{Matrix(n, m), Matrix(n, m), Matrix(n, m)};
  parallel_for(ms.size(), [&](std::size_t l) {
    const auto& meas = ms[l];
    if (meas.dim() != dict.dim()) throw ContractError("measurement dimension does not match the dictionary");
    const auto c = static_cast<Eigen::Index>(l);
    out.psi.col(c) = eval_dictionary(dict, meas.point);
    out.dpsi_second.col(c) =
        apply_generator_to_dictionary(dict, meas.point, Vector::Zero(meas.dim()), meas.diffusion_est);
    out.dpsi.col(c) = apply_generator_to_dictionary(dict, meas.point, meas.drift_est, Matrix::Zero(meas.dim(), meas.dim())) +
                      out.dpsi_second.col(c);
  });
  return out;
}

/// Least-squares generator M = dPsi Psi^+ and L = M^T. Rows of Psi are
/// equilibrated before the SVD (exactly equivalent for full row rank) so that
/// high-degree monomials on unscaled data do not drown in the cutoff.
inline GeneratorMatrix fit_generator(const DataMatrices& data, DictionaryPtr dict, const FitOptions& opts = {}) {
  const Eigen::Index n = data.psi.rows();
  if (n != static_cast<Eigen::Index>(dict->size())) throw ContractError("data matrices do not match the dictionary");
  GeneratorMatrix g;
  g.dictionary = dict;
  g.underdetermined = data.psi.cols() < n;
  if (data.psi.cols() == 0) {
    g.entries = Matrix::Zero(n, n);
    g.rank_deficient = true;
    return g;
  }
  const bool split = data.dpsi_second.size() > 0;
  if (split && (data.dpsi_second.rows() != n || data.dpsi_second.cols() != data.psi.cols()))
    throw ContractError("second-order data matrix has the wrong shape");
  Vector scale = data.psi.rowwise().norm();
  for (Eigen::Index i = 0; i < n; ++i)
    if (!(scale(i) > 0.0)) scale(i) = 1.0;
  const Matrix psi_scaled = scale.cwiseInverse().asDiagonal() * data.psi;
  // L = D^{-1} (Psi~^T)^+ dPsi^T
  Matrix rhs(data.psi.cols(), split ? 2 * n : n);
  rhs.leftCols(n) = data.dpsi.transpose();
  if (split) rhs.rightCols(n) = data.dpsi_second.transpose();
  LeastSquaresResult ls = pinv_solve(psi_scaled.transpose(), rhs, opts.rel_cutoff);
  const Matrix sol = scale.cwiseInverse().asDiagonal() * ls.solution;
  g.entries = sol.leftCols(n);
  if (split) g.second_order = sol.rightCols(n);
  g.rank = ls.rank;
  g.rank_deficient = ls.rank_deficient;
  if (opts.hard_threshold > 0.0) {
    auto cut = [t = opts.hard_threshold](double v) { return std::abs(v) < t ? 0.0 : v; };
    g.entries = g.entries.unaryExpr(cut);
    if (split) g.second_order = g.second_order.unaryExpr(cut);
  }
  g.residual = (data.dpsi - g.entries.transpose() * data.psi).norm();
  return g;
}

inline GeneratorMatrix fit_generator(const std::vector<Measurement>& ms, DictionaryPtr dict, const FitOptions& opts = {}) {
  DataMatrices data = assemble(ms, *dict);
  return fit_generator(data, std::move(dict), opts);
}

/// L psi for a polynomial psi under polynomial drift/diffusion, computed
/// symbolically.
inline Polynomial generator_image(const IdentifiedSde& sde, const Polynomial& psi) {
  const int d = sde.dim();
  Polynomial out(d);
  for (int i = 0; i < d; ++i) {
    const Polynomial di = psi.derivative(i);
    if (di.is_zero()) continue;
    out += sde.drift.component(i) * di;
    for (int j = i; j < d; ++j) {
      const Polynomial dij = di.derivative(j);
      if (dij.is_zero()) continue;
      // a_ij appears twice off the diagonal, 1/2 cancels it
      const double w = (i == j) ? 0.5 : 1.0;
      out += sde.diffusion_entry(i, j) * dij * w;
    }
  }
  return out;
}

/// The generator of a known polynomial SDE on its own dictionary. Columns
/// whose image leaves the dictionary are truncated and listed.
inline GeneratorMatrix analytic_generator(const IdentifiedSde& sde) {
  const auto& dict = *sde.dictionary;
  GeneratorMatrix g;
  g.dictionary = sde.dictionary;
  const auto n = static_cast<Eigen::Index>(dict.size());
  g.entries = Matrix::Zero(n, n);
  for (std::size_t k = 0; k < dict.size(); ++k) {
    Polynomial psi(dict.dim());
    psi.add_term(dict[k], 1.0);
    double dropped = 0.0;
    g.entries.col(static_cast<Eigen::Index>(k)) = to_coefficients(generator_image(sde, psi), dict, true, &dropped).transpose();
    if (dropped > 0.0) g.truncated_columns.push_back(k);
  }
  g.rank = n;
  return g;
}

/// Drift component i is the generator column of the linear monomial x_i.
inline PolynomialField extract_drift(const GeneratorMatrix& g) {
  const auto& dict = *g.dictionary;
  PolynomialField drift(g.dictionary, dict.dim());
  for (int i = 0; i < dict.dim(); ++i)
    drift.coefficients.row(i) = g.entries.col(static_cast<Eigen::Index>(dict.linear_index(i))).transpose();
  return drift;
}

/// How a_ij is read off the generator.
enum class DiffusionExtraction {
  /// a_ij = L(x_i x_j) - b_i x_j - b_j x_i with the fitted drift polynomials.
  generator_identity,
  /// a_ij = L(x_i x_j) minus the least-squares projection of the measured
  /// products b_i(x) x_j + b_j(x) x_i, i.e. the x_i x_j column of the
  /// second-order fit. Identical to generator_identity on exact data; on
  /// noisy data it avoids feeding drift noise into a.
  projected_products,
};

enum class ProductPolicy {
  strict,    ///< out-of-dictionary product terms raise RepresentationError
  truncate,  ///< out-of-dictionary product terms are dropped
};

/// a_ij = L(x_i x_j) - b_i x_j - b_j x_i, by exact polynomial arithmetic.
/// Noisy drift fits carry small top-degree coefficients whose products leave
/// the dictionary; `truncate` projects those terms away.
inline PolynomialField extract_diffusion(const GeneratorMatrix& g, const PolynomialField& drift,
                                         ProductPolicy policy = ProductPolicy::strict, double* dropped = nullptr) {
  const auto& dict = *g.dictionary;
  const int d = dict.dim();
  if (drift.components() != d) throw ContractError("drift has the wrong number of components");
  std::vector<Polynomial> b = drift.polynomials();
  std::vector<Polynomial> pairs;
  for (int i = 0; i < d; ++i) {
    for (int j = i; j < d; ++j) {
      const auto col = static_cast<Eigen::Index>(dict.quadratic_index(i, j));
      Polynomial a = from_coefficients(g.entries.col(col).transpose(), dict);
      a -= b[static_cast<std::size_t>(i)] * Polynomial::variable(d, j);
      a -= b[static_cast<std::size_t>(j)] * Polynomial::variable(d, i);
      pairs.push_back(std::move(a));
    }
  }
  return PolynomialField::from_polynomials(g.dictionary, pairs, policy == ProductPolicy::truncate, dropped);
}

inline PolynomialField extract_diffusion_projected(const GeneratorMatrix& g) {
  if (g.second_order.size() == 0)
    throw ContractError("projected extraction needs a generator fitted from data");
  const auto& dict = *g.dictionary;
  const int d = dict.dim();
  PolynomialField out(g.dictionary, pair_count(d));
  for (int i = 0; i < d; ++i)
    for (int j = i; j < d; ++j)
      out.coefficients.row(pair_index(i, j, d)) =
          g.second_order.col(static_cast<Eigen::Index>(dict.quadratic_index(i, j))).transpose();
  return out;
}

/// Drift and diffusion read off a generator matrix.
inline IdentifiedSde identify(const GeneratorMatrix& g, long population_size = 1,
                              ProductPolicy policy = ProductPolicy::truncate,
                              DiffusionExtraction extraction = DiffusionExtraction::generator_identity) {
  PolynomialField drift = extract_drift(g);
  double dropped = 0.0;
  PolynomialField diffusion = extraction == DiffusionExtraction::generator_identity
                                  ? extract_diffusion(g, drift, policy, &dropped)
                                  : extract_diffusion_projected(g);
  IdentifiedSde sde(std::move(drift), std::move(diffusion), population_size);
  sde.metadata["truncated_product_mass"] = std::to_string(dropped);
  return sde;
}

// ---------------------------------------------------------------------------
// Rate-constant reconstruction for the three-type voter model in reduced
// frequency coordinates (c1, c2).
//
// Unknowns (12): gamma_12, gamma_13, gamma_21, gamma_23, gamma_31, gamma_32,
// then gamma'_12, ..., gamma'_32 in the same order.
// Observations (30): for b1, b2, a11, a12, a22 the coefficients of
// c1^2, c2^2, c1c2, c1, c2, 1 in that order.

namespace detail {

inline constexpr int kRatePairs[6][2] = {{0, 1}, {0, 2}, {1, 0}, {1, 2}, {2, 0}, {2, 1}};

/// Coefficient vector of the reduced voter drift/diffusion, written out term
/// by term from the three-type mean-field expansion with c3 = 1 - c1 - c2.
inline Vector evm_reduced_coefficients(const Matrix& g, const Matrix& e, double n) {
  Vector v(30);
  auto put = [&v](int block, double c11, double c22, double c12, double c1, double c2, double c0) {
    v.segment(block * 6, 6) << c11, c22, c12, c1, c2, c0;
  };
  // b1
  put(0, g(0, 2) - g(2, 0), 0.0, g(1, 0) - g(0, 1) + g(0, 2) - g(2, 0),
      g(2, 0) - g(0, 2) - e(0, 1) - e(0, 2) - e(2, 0), e(1, 0) - e(2, 0), e(2, 0));
  // b2
  put(1, 0.0, g(1, 2) - g(2, 1), g(0, 1) - g(1, 0) + g(1, 2) - g(2, 1), e(0, 1) - e(2, 1),
      g(2, 1) - g(1, 2) - e(1, 0) - e(1, 2) - e(2, 1), e(2, 1));
  // a11
  put(2, (-g(0, 2) - g(2, 0)) / n, 0.0, (g(0, 1) + g(1, 0) - g(0, 2) - g(2, 0)) / n,
      (g(0, 2) + g(2, 0) + e(0, 1) + e(0, 2) - e(2, 0)) / n, (e(1, 0) - e(2, 0)) / n, e(2, 0) / n);
  // a12
  put(3, 0.0, 0.0, -(g(0, 1) + g(1, 0)) / n, -e(0, 1) / n, -e(1, 0) / n, 0.0);
  // a22
  put(4, 0.0, (-g(1, 2) - g(2, 1)) / n, (g(0, 1) + g(1, 0) - g(1, 2) - g(2, 1)) / n, (e(0, 1) - e(2, 1)) / n,
      (g(1, 2) + g(2, 1) + e(1, 0) + e(1, 2) - e(2, 1)) / n, e(2, 1) / n);
  return v;
}

}  // namespace detail

/// Observation vector v of a reduced three-type SDE (degree >= 2 dictionary).
inline Vector evm_observation_vector(const IdentifiedSde& sde) {
  if (sde.dim() != 2) throw ContractError("rate reconstruction needs the reduced two-dimensional voter model");
  const auto& dict = *sde.dictionary;
  if (dict.max_degree() < 2) throw ContractError("rate reconstruction needs a dictionary of degree >= 2");
  const MultiIndex order[6] = {{2, 0}, {0, 2}, {1, 1}, {1, 0}, {0, 1}, {0, 0}};
  Vector v(30);
  auto fill = [&](int block, const Eigen::RowVectorXd& coef) {
    for (int h = 0; h < 6; ++h) v(block * 6 + h) = coef(static_cast<Eigen::Index>(dict.index_of(order[h])));
  };
  fill(0, sde.drift.coefficients.row(0));
  fill(1, sde.drift.coefficients.row(1));
  fill(2, sde.diffusion.coefficients.row(pair_index(0, 0, 2)));
  fill(3, sde.diffusion.coefficients.row(pair_index(0, 1, 2)));
  fill(4, sde.diffusion.coefficients.row(pair_index(1, 1, 2)));
  return v;
}

/// Linear map A with v = A gamma for population size n.
inline Matrix evm_rate_matrix(double n) {
  Matrix a(30, 12);
  for (int k = 0; k < 12; ++k) {
    Matrix g = Matrix::Zero(3, 3), e = Matrix::Zero(3, 3);
    const auto& pr = detail::kRatePairs[k % 6];
    (k < 6 ? g : e)(pr[0], pr[1]) = 1.0;
    a.col(k) = detail::evm_reduced_coefficients(g, e, n);
  }
  return a;
}

struct RateEstimate {
  Matrix imitation;   ///< 3 x 3, zero diagonal
  Matrix exploration; ///< 3 x 3, zero diagonal
  Vector gamma;       ///< the 12 unknowns in solver order
  double residual = 0.0;
  Eigen::Index rank = 0;
};

/// Minimum-norm least-squares solution of A gamma = v for an identified
/// reduced three-type voter SDE.
inline RateEstimate reconstruct_rates(const IdentifiedSde& sde) {
  const Vector v = evm_observation_vector(sde);
  const Matrix a = evm_rate_matrix(static_cast<double>(sde.population_size));
  LeastSquaresResult ls = pinv_solve(a, v, 1e-12);
  RateEstimate out;
  out.gamma = ls.solution.col(0);
  out.rank = ls.rank;
  out.residual = (a * out.gamma - v).norm();
  out.imitation = Matrix::Zero(3, 3);
  out.exploration = Matrix::Zero(3, 3);
  for (int k = 0; k < 12; ++k) {
    const auto& pr = detail::kRatePairs[k % 6];
    (k < 6 ? out.imitation : out.exploration)(pr[0], pr[1]) = out.gamma(k);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Persistence.

inline constexpr const char* kModelSchema = "abmkoop.model.v1";

inline nlohmann::json to_json(const IdentifiedSde& sde) {
  const auto& dict = *sde.dictionary;
  auto rows = [](const Matrix& m) {
    nlohmann::json out = nlohmann::json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      std::vector<double> row(static_cast<std::size_t>(m.cols()));
      for (Eigen::Index c = 0; c < m.cols(); ++c) row[static_cast<std::size_t>(c)] = m(r, c);
      out.push_back(row);
    }
    return out;
  };
  nlohmann::json pairs = nlohmann::json::array();
  for (int i = 0; i < dict.dim(); ++i)
    for (int j = i; j < dict.dim(); ++j) pairs.push_back({i + 1, j + 1});
  return {{"schema", kModelSchema},
          {"dictionary", {{"dim", dict.dim()}, {"max_degree", dict.max_degree()}, {"multi_indices", dict.indices()}}},
          {"drift", rows(sde.drift.coefficients)},
          {"diffusion_pairs", pairs},
          {"diffusion", rows(sde.diffusion.coefficients)},
          {"population_size", sde.population_size},
          {"metadata", sde.metadata}};
}

inline IdentifiedSde sde_from_json(const nlohmann::json& j) {
  try {
    if (j.at("schema").get<std::string>() != kModelSchema)
      throw DataError("unsupported model schema '" + j.at("schema").get<std::string>() + "'");
    const auto& jd = j.at("dictionary");
    auto dict = std::make_shared<const MonomialDictionary>(MonomialDictionary::from_indices(
        jd.at("dim").get<int>(), jd.at("max_degree").get<int>(), jd.at("multi_indices").get<std::vector<MultiIndex>>()));
    auto matrix = [&](const nlohmann::json& rows, Eigen::Index expected_rows) {
      if (static_cast<Eigen::Index>(rows.size()) != expected_rows) throw DataError("model file: wrong row count");
      Matrix m(expected_rows, static_cast<Eigen::Index>(dict->size()));
      for (Eigen::Index r = 0; r < expected_rows; ++r) {
        const auto row = rows.at(static_cast<std::size_t>(r)).get<std::vector<double>>();
        if (row.size() != dict->size()) throw DataError("model file: wrong column count");
        for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = row[static_cast<std::size_t>(c)];
      }
      return m;
    };
    const int d = dict->dim();
    IdentifiedSde sde(PolynomialField(dict, matrix(j.at("drift"), d)),
                      PolynomialField(dict, matrix(j.at("diffusion"), pair_count(d))),
                      j.at("population_size").get<long>());
    if (j.contains("metadata")) sde.metadata = j.at("metadata").get<std::map<std::string, std::string>>();
    return sde;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("invalid model file: ") + e.what());
  }
}

inline void write_generator(std::ostream& out, const GeneratorMatrix& g) {
  const auto& dict = *g.dictionary;
  out << "row";
  for (std::size_t k = 0; k < dict.size(); ++k) out << ',' << format_monomial(dict[k]);
  out << '\n' << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (std::size_t r = 0; r < dict.size(); ++r) {
    out << format_monomial(dict[r]);
    for (std::size_t c = 0; c < dict.size(); ++c)
      out << ',' << g.entries(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
    out << '\n';
  }
}

}  // namespace abmkoop
