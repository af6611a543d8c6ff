#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "abmkoop/errors.hpp"

namespace abmkoop {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Exponent vector of a monomial x_1^{e_1} ... x_d^{e_d}.
using MultiIndex = std::vector<int>;

inline int total_degree(const MultiIndex& mi) {
  return std::accumulate(mi.begin(), mi.end(), 0);
}

inline std::string format_monomial(const MultiIndex& mi) {
  if (total_degree(mi) == 0) return "1";
  std::ostringstream out;
  bool first = true;
  for (std::size_t i = 0; i < mi.size(); ++i) {
    if (mi[i] == 0) continue;
    if (!first) out << '*';
    out << 'x' << (i + 1);
    if (mi[i] > 1) out << '^' << mi[i];
    first = false;
  }
  return out.str();
}

inline double eval_monomial(const MultiIndex& mi, const double* x) {
  double v = 1.0;
  for (std::size_t i = 0; i < mi.size(); ++i)
    for (int e = 0; e < mi[i]; ++e) v *= x[i];
  return v;
}

/// Sparse multivariate polynomial with exact exponent bookkeeping. Used for
/// the symbolic side of the pipeline: limit models, conservation substitution
/// and the diffusion identity a_ij = L(x_i x_j) - b_i x_j - b_j x_i.
class Polynomial {
 public:
  using Terms = std::map<MultiIndex, double>;

  explicit Polynomial(int dim = 0) : dim_(dim) {}

  static Polynomial constant(int dim, double value) {
    Polynomial p(dim);
    p.add_term(MultiIndex(static_cast<std::size_t>(dim), 0), value);
    return p;
  }

  static Polynomial variable(int dim, int i) {
    MultiIndex mi(static_cast<std::size_t>(dim), 0);
    mi.at(static_cast<std::size_t>(i)) = 1;
    Polynomial p(dim);
    p.add_term(mi, 1.0);
    return p;
  }

  int dim() const noexcept { return dim_; }
  const Terms& terms() const noexcept { return terms_; }
  bool is_zero() const noexcept { return terms_.empty(); }

  void add_term(const MultiIndex& mi, double coef) {
    if (static_cast<int>(mi.size()) != dim_)
      throw ContractError("monomial dimension " + std::to_string(mi.size()) +
                          " does not match polynomial dimension " + std::to_string(dim_));
    if (coef == 0.0) return;
    auto [it, inserted] = terms_.try_emplace(mi, coef);
    if (!inserted) {
      it->second += coef;
      if (it->second == 0.0) terms_.erase(it);
    }
  }

  double coefficient(const MultiIndex& mi) const {
    auto it = terms_.find(mi);
    return it == terms_.end() ? 0.0 : it->second;
  }

  int degree() const {
    int d = 0;
    for (const auto& [mi, c] : terms_) d = std::max(d, total_degree(mi));
    return d;
  }

  double operator()(const double* x) const {
    double v = 0.0;
    for (const auto& [mi, c] : terms_) v += c * eval_monomial(mi, x);
    return v;
  }
  double operator()(const Vector& x) const { return (*this)(x.data()); }

  Polynomial derivative(int i) const {
    Polynomial out(dim_);
    for (const auto& [mi, c] : terms_) {
      const int e = mi[static_cast<std::size_t>(i)];
      if (e == 0) continue;
      MultiIndex m = mi;
      m[static_cast<std::size_t>(i)] -= 1;
      out.add_term(m, c * e);
    }
    return out;
  }

  /// Replaces variable i by q (which must have the same dimension).
  Polynomial substitute(int i, const Polynomial& q) const {
    Polynomial out(dim_);
    std::vector<Polynomial> powers{constant(dim_, 1.0)};
    for (const auto& [mi, c] : terms_) {
      const int e = mi[static_cast<std::size_t>(i)];
      while (static_cast<int>(powers.size()) <= e) powers.push_back(powers.back() * q);
      MultiIndex rest = mi;
      rest[static_cast<std::size_t>(i)] = 0;
      Polynomial mono(dim_);
      mono.add_term(rest, c);
      out += mono * powers[static_cast<std::size_t>(e)];
    }
    return out;
  }

  /// Embeds into a space of dimension new_dim, keeping the first
  /// min(dim, new_dim) variables; dropped variables must not occur.
  Polynomial resized(int new_dim) const {
    Polynomial out(new_dim);
    for (const auto& [mi, c] : terms_) {
      MultiIndex m(static_cast<std::size_t>(new_dim), 0);
      for (std::size_t k = 0; k < mi.size(); ++k) {
        if (static_cast<int>(k) < new_dim)
          m[k] = mi[k];
        else if (mi[k] != 0)
          throw ContractError("cannot drop variable x" + std::to_string(k + 1) +
                              " that still occurs in " + format_monomial(mi));
      }
      out.add_term(m, c);
    }
    return out;
  }

  Polynomial& operator+=(const Polynomial& o) {
    check_dim(o);
    for (const auto& [mi, c] : o.terms_) add_term(mi, c);
    return *this;
  }
  Polynomial& operator-=(const Polynomial& o) {
    check_dim(o);
    for (const auto& [mi, c] : o.terms_) add_term(mi, -c);
    return *this;
  }
  Polynomial& operator*=(double s) {
    if (s == 0.0) {
      terms_.clear();
      return *this;
    }
    for (auto& [mi, c] : terms_) c *= s;
    return *this;
  }

  friend Polynomial operator+(Polynomial a, const Polynomial& b) { return a += b; }
  friend Polynomial operator-(Polynomial a, const Polynomial& b) { return a -= b; }
  friend Polynomial operator*(Polynomial a, double s) { return a *= s; }
  friend Polynomial operator*(double s, Polynomial a) { return a *= s; }

  friend Polynomial operator*(const Polynomial& a, const Polynomial& b) {
    a.check_dim(b);
    Polynomial out(a.dim_);
    for (const auto& [ma, ca] : a.terms_) {
      for (const auto& [mb, cb] : b.terms_) {
        MultiIndex m = ma;
        for (std::size_t k = 0; k < m.size(); ++k) m[k] += mb[k];
        out.add_term(m, ca * cb);
      }
    }
    return out;
  }

  std::string to_string() const {
    if (terms_.empty()) return "0";
    std::ostringstream out;
    out.precision(12);
    bool first = true;
    for (auto it = terms_.rbegin(); it != terms_.rend(); ++it) {
      if (!first) out << " + ";
      out << it->second;
      if (total_degree(it->first) > 0) out << '*' << format_monomial(it->first);
      first = false;
    }
    return out.str();
  }

 private:
  void check_dim(const Polynomial& o) const {
    if (o.dim_ != dim_)
      throw ContractError("polynomial dimensions differ: " + std::to_string(dim_) + " vs " +
                          std::to_string(o.dim_));
  }

  int dim_;
  Terms terms_;
};

/// p(e_1(y), ..., e_d(y)): substitutes every variable of p by a polynomial in
/// a (possibly different) set of variables y.
inline Polynomial compose(const Polynomial& p, const std::vector<Polynomial>& exprs) {
  if (static_cast<int>(exprs.size()) != p.dim())
    throw ContractError("compose needs one expression per variable");
  const int out_dim = exprs.empty() ? 0 : exprs.front().dim();
  std::vector<std::vector<Polynomial>> powers(exprs.size());
  for (std::size_t i = 0; i < exprs.size(); ++i) powers[i].push_back(Polynomial::constant(out_dim, 1.0));
  Polynomial out(out_dim);
  for (const auto& [mi, c] : p.terms()) {
    Polynomial term = Polynomial::constant(out_dim, c);
    for (std::size_t i = 0; i < mi.size(); ++i) {
      auto& pw = powers[i];
      while (static_cast<int>(pw.size()) <= mi[i]) pw.push_back(pw.back() * exprs[i]);
      if (mi[i] > 0) term = term * pw[static_cast<std::size_t>(mi[i])];
    }
    out += term;
  }
  return out;
}

/// Ordered monomial basis: graded by total degree, and within a degree
/// lexicographically descending in the exponents, so in two variables the
/// order is 1, x1, x2, x1^2, x1x2, x2^2, x1^3, ...
class MonomialDictionary {
 public:
  MonomialDictionary(int dim, int max_degree) : dim_(dim), max_degree_(max_degree) {
    if (dim < 1) throw ContractError("dictionary dimension must be >= 1");
    if (max_degree < 1) throw ContractError("dictionary degree must be >= 1");
    for (int g = 0; g <= max_degree; ++g) {
      MultiIndex mi(static_cast<std::size_t>(dim), 0);
      enumerate_degree(mi, 0, g);
    }
    build_lookup();
  }

  /// Rebuilds a dictionary from an explicit multi-index list (e.g. a model
  /// file). The list must equal the canonical ordering for its (dim, degree).
  static MonomialDictionary from_indices(int dim, int max_degree,
                                         const std::vector<MultiIndex>& indices) {
    MonomialDictionary d(dim, max_degree);
    if (indices != d.indices_)
      throw DataError("multi-index list does not match the graded-lexicographic dictionary "
                      "of dimension " + std::to_string(dim) + " and degree " +
                      std::to_string(max_degree));
    return d;
  }

  int dim() const noexcept { return dim_; }
  int max_degree() const noexcept { return max_degree_; }
  std::size_t size() const noexcept { return indices_.size(); }
  const MultiIndex& operator[](std::size_t k) const { return indices_[k]; }
  const std::vector<MultiIndex>& indices() const noexcept { return indices_; }

  std::optional<std::size_t> find(const MultiIndex& mi) const {
    auto it = lookup_.find(mi);
    if (it == lookup_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t index_of(const MultiIndex& mi) const {
    if (auto k = find(mi)) return *k;
    throw RepresentationError("monomial " + format_monomial(mi) +
                              " is not in the dictionary (dim " + std::to_string(dim_) +
                              ", degree " + std::to_string(max_degree_) + ")");
  }

  /// Position of the linear monomial x_i (0-based i).
  std::size_t linear_index(int i) const {
    MultiIndex mi(static_cast<std::size_t>(dim_), 0);
    mi.at(static_cast<std::size_t>(i)) = 1;
    return index_of(mi);
  }

  /// Position of x_i x_j (x_i^2 when i == j).
  std::size_t quadratic_index(int i, int j) const {
    MultiIndex mi(static_cast<std::size_t>(dim_), 0);
    mi.at(static_cast<std::size_t>(i)) += 1;
    mi.at(static_cast<std::size_t>(j)) += 1;
    return index_of(mi);
  }

  friend bool operator==(const MonomialDictionary& a, const MonomialDictionary& b) {
    return a.dim_ == b.dim_ && a.max_degree_ == b.max_degree_;
  }

 private:
  void enumerate_degree(MultiIndex& mi, std::size_t pos, int remaining) {
    if (pos + 1 == mi.size()) {
      mi[pos] = remaining;
      indices_.push_back(mi);
      mi[pos] = 0;
      return;
    }
    for (int e = remaining; e >= 0; --e) {
      mi[pos] = e;
      enumerate_degree(mi, pos + 1, remaining - e);
    }
    mi[pos] = 0;
  }

  void build_lookup() {
    for (std::size_t k = 0; k < indices_.size(); ++k) lookup_.emplace(indices_[k], k);
  }

  int dim_;
  int max_degree_;
  std::vector<MultiIndex> indices_;
  std::map<MultiIndex, std::size_t> lookup_;
};

using DictionaryPtr = std::shared_ptr<const MonomialDictionary>;

inline DictionaryPtr make_dictionary(int dim, int max_degree) {
  return std::make_shared<const MonomialDictionary>(dim, max_degree);
}

/// Converts a polynomial into a coefficient row over the dictionary. Terms
/// outside the dictionary raise RepresentationError unless `truncate` is set,
/// in which case their absolute coefficient mass is added to *dropped.
inline Eigen::RowVectorXd to_coefficients(const Polynomial& p, const MonomialDictionary& dict,
                                          bool truncate = false, double* dropped = nullptr) {
  if (p.dim() != dict.dim())
    throw ContractError("polynomial dimension " + std::to_string(p.dim()) +
                        " does not match dictionary dimension " + std::to_string(dict.dim()));
  Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(static_cast<Eigen::Index>(dict.size()));
  for (const auto& [mi, c] : p.terms()) {
    if (auto k = dict.find(mi)) {
      row(static_cast<Eigen::Index>(*k)) += c;
    } else if (truncate) {
      if (dropped) *dropped += std::abs(c);
    } else {
      dict.index_of(mi);  // throws with the monomial name
    }
  }
  return row;
}

inline Polynomial from_coefficients(const Eigen::Ref<const Eigen::RowVectorXd>& row,
                                    const MonomialDictionary& dict) {
  Polynomial p(dict.dim());
  for (std::size_t k = 0; k < dict.size(); ++k) p.add_term(dict[k], row(static_cast<Eigen::Index>(k)));
  return p;
}

/// Number of distinct entries of a symmetric d x d matrix.
constexpr int pair_count(int d) { return d * (d + 1) / 2; }

/// Row-major upper-triangular position of (i, j): (0,0), (0,1), ..., (1,1), ...
constexpr int pair_index(int i, int j, int d) {
  if (i > j) std::swap(i, j);
  return i * d - i * (i - 1) / 2 + (j - i);
}

/// A vector of polynomials stored as a coefficient matrix over a shared
/// dictionary (rows = output components, columns = dictionary entries).
struct PolynomialField {
  DictionaryPtr dictionary;
  Matrix coefficients;

  PolynomialField() = default;
  PolynomialField(DictionaryPtr dict, Eigen::Index rows)
      : dictionary(std::move(dict)),
        coefficients(Matrix::Zero(rows, static_cast<Eigen::Index>(dictionary->size()))) {}
  PolynomialField(DictionaryPtr dict, Matrix coef) : dictionary(std::move(dict)), coefficients(std::move(coef)) {
    if (coefficients.cols() != static_cast<Eigen::Index>(dictionary->size()))
      throw ContractError("coefficient matrix has " + std::to_string(coefficients.cols()) +
                          " columns, dictionary has " + std::to_string(dictionary->size()));
  }

  static PolynomialField from_polynomials(DictionaryPtr dict, const std::vector<Polynomial>& polys,
                                          bool truncate = false, double* dropped = nullptr) {
    PolynomialField f(dict, static_cast<Eigen::Index>(polys.size()));
    for (std::size_t r = 0; r < polys.size(); ++r)
      f.coefficients.row(static_cast<Eigen::Index>(r)) = to_coefficients(polys[r], *dict, truncate, dropped);
    return f;
  }

  Eigen::Index components() const { return coefficients.rows(); }

  Polynomial component(Eigen::Index r) const { return from_coefficients(coefficients.row(r), *dictionary); }

  std::vector<Polynomial> polynomials() const {
    std::vector<Polynomial> out;
    for (Eigen::Index r = 0; r < components(); ++r) out.push_back(component(r));
    return out;
  }

  Vector basis_values(const Vector& x) const {
    Vector psi(static_cast<Eigen::Index>(dictionary->size()));
    for (std::size_t k = 0; k < dictionary->size(); ++k)
      psi(static_cast<Eigen::Index>(k)) = eval_monomial((*dictionary)[k], x.data());
    return psi;
  }

  Vector evaluate(const Vector& x) const { return coefficients * basis_values(x); }
};

/// Evaluates an upper-triangular (pair-indexed) field as a symmetric matrix.
inline Matrix evaluate_symmetric(const PolynomialField& pairs, const Vector& x, int d) {
  Vector v = pairs.evaluate(x);
  Matrix a(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = i; j < d; ++j) a(i, j) = a(j, i) = v(pair_index(i, j, d));
  return a;
}

}  // namespace abmkoop
