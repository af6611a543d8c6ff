#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "abmkoop/polynomial.hpp"

namespace abmkoop {

/// Polynomial SDE dX = b(X) dt + sigma(X) dW with a(X) = sigma sigma^T.
/// Used both for identified models and for analytic limit models.
struct IdentifiedSde {
  DictionaryPtr dictionary;
  PolynomialField drift;      ///< dim rows
  PolynomialField diffusion;  ///< pair_count(dim) rows, upper-triangular pair order
  long population_size = 1;
  /// Free-form provenance (m, k, tau, seed, ...), persisted with the model.
  std::map<std::string, std::string> metadata;

  IdentifiedSde() = default;
  IdentifiedSde(PolynomialField b, PolynomialField a, long n = 1)
      : dictionary(b.dictionary), drift(std::move(b)), diffusion(std::move(a)), population_size(n) {
    if (!dictionary || !diffusion.dictionary || !(*diffusion.dictionary == *dictionary))
      throw ContractError("drift and diffusion must share one dictionary");
    if (drift.components() != dim())
      throw ContractError("drift must have one row per state dimension");
    if (diffusion.components() != pair_count(dim()))
      throw ContractError("diffusion must have one row per upper-triangular pair");
  }

  int dim() const { return dictionary->dim(); }

  Vector b(const Vector& x) const { return drift.evaluate(x); }
  Matrix a(const Vector& x) const { return evaluate_symmetric(diffusion, x, dim()); }

  Polynomial diffusion_entry(int i, int j) const { return diffusion.component(pair_index(i, j, dim())); }
};

}  // namespace abmkoop
