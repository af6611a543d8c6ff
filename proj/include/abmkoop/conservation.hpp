#pragma once

#include <vector>

#include "abmkoop/polynomial.hpp"
#include "abmkoop/sde_model.hpp"

namespace abmkoop {

/// Block structure of a conserved state: `blocks` groups of `block_size`
/// coordinates, each group summing to a constant. The reduced coordinates keep
/// the first block_size - 1 entries of every block.
struct ConservationLayout {
  int blocks = 1;
  int block_size = 1;

  int full_dim() const { return blocks * block_size; }
  int reduced_dim() const { return blocks * (block_size - 1); }
  bool is_dropped(int full_index) const { return full_index % block_size == block_size - 1; }
  int reduced_index(int full_index) const {
    return (full_index / block_size) * (block_size - 1) + full_index % block_size;
  }
};

/// Expresses every full coordinate in reduced coordinates, with the dropped
/// coordinate of each block equal to `block_total` minus the kept ones.
inline std::vector<Polynomial> reduction_map(const ConservationLayout& layout, double block_total = 1.0) {
  const int rd = layout.reduced_dim();
  std::vector<Polynomial> exprs;
  for (int q = 0; q < layout.blocks; ++q) {
    Polynomial rest = Polynomial::constant(rd, block_total);
    for (int i = 0; i < layout.block_size - 1; ++i) {
      const int r = q * (layout.block_size - 1) + i;
      exprs.push_back(Polynomial::variable(rd, r));
      rest -= Polynomial::variable(rd, r);
    }
    exprs.push_back(rest);
  }
  return exprs;
}

/// Restricts a full-coordinate frequency SDE to the reduced coordinates by
/// substituting the conservation law and dropping the eliminated components.
inline IdentifiedSde reduce_conserved(const IdentifiedSde& full, const ConservationLayout& layout,
                                      DictionaryPtr reduced_dictionary) {
  if (full.dim() != layout.full_dim()) throw ContractError("SDE dimension does not match the layout");
  if (reduced_dictionary->dim() != layout.reduced_dim())
    throw ContractError("reduced dictionary has the wrong dimension");
  const auto exprs = reduction_map(layout);
  const int fd = layout.full_dim();
  const int rd = layout.reduced_dim();
  std::vector<Polynomial> drift;
  std::vector<Polynomial> diff(static_cast<std::size_t>(pair_count(rd)), Polynomial(rd));
  for (int i = 0; i < fd; ++i) {
    if (layout.is_dropped(i)) continue;
    drift.push_back(compose(full.drift.component(i), exprs));
    for (int j = i; j < fd; ++j) {
      if (layout.is_dropped(j)) continue;
      diff[static_cast<std::size_t>(pair_index(layout.reduced_index(i), layout.reduced_index(j), rd))] =
          compose(full.diffusion.component(pair_index(i, j, fd)), exprs);
    }
  }
  IdentifiedSde out(PolynomialField::from_polynomials(reduced_dictionary, drift),
                    PolynomialField::from_polynomials(reduced_dictionary, diff), full.population_size);
  out.metadata = full.metadata;
  return out;
}

}  // namespace abmkoop
