#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "abmkoop/conservation.hpp"
#include "abmkoop/errors.hpp"
#include "abmkoop/linalg.hpp"
#include "abmkoop/parallel.hpp"
#include "abmkoop/random.hpp"
#include "abmkoop/sde_model.hpp"

namespace abmkoop {

enum class Projection { none, simplex_clip };

struct EmConfig {
  double dt = 0.001;
  double t_end = 1.0;
  long num_paths = 1;
  std::uint64_t seed = 0;
  Projection projection = Projection::none;
  /// Conserved blocks in reduced coordinates: every block of
  /// layout.block_size - 1 components must stay nonnegative with sum <= 1.
  /// Without a layout, simplex_clip only clips negative components.
  std::optional<ConservationLayout> conserved;
  long save_stride = 1;

  long num_steps() const { return std::lround(t_end / dt); }

  void validate() const {
    if (!(dt > 0.0) || !(t_end > 0.0) || dt > t_end) throw ContractError("need 0 < dt <= t_end");
    if (num_paths < 1) throw ContractError("num_paths must be >= 1");
    if (save_stride < 1) throw ContractError("save_stride must be >= 1");
    if (std::abs(num_steps() * dt - t_end) > 1e-9 * t_end) throw ContractError("t_end must be a multiple of dt");
  }
};

/// Drift and diffusion of a polynomial SDE flattened for repeated evaluation.
class CompiledSde {
 public:
  explicit CompiledSde(const IdentifiedSde& sde)
      : dim_(sde.dim()), degree_(sde.dictionary->max_degree()), drift_(sde.drift.coefficients),
        diffusion_(sde.diffusion.coefficients) {
    for (const auto& mi : sde.dictionary->indices()) exponents_.insert(exponents_.end(), mi.begin(), mi.end());
    basis_.resize(static_cast<Eigen::Index>(sde.dictionary->size()));
    powers_.resize(static_cast<std::size_t>(dim_ * (degree_ + 1)));
  }

  int dim() const noexcept { return dim_; }

  /// Evaluates b(x) and the symmetric a(x).
  void evaluate(const Vector& x, Vector& b, Matrix& a) {
    for (int i = 0; i < dim_; ++i) {
      double* p = &powers_[static_cast<std::size_t>(i * (degree_ + 1))];
      p[0] = 1.0;
      for (int e = 1; e <= degree_; ++e) p[e] = p[e - 1] * x(i);
    }
    const int* ex = exponents_.data();
    for (Eigen::Index k = 0; k < basis_.size(); ++k) {
      double v = 1.0;
      for (int i = 0; i < dim_; ++i, ++ex) v *= powers_[static_cast<std::size_t>(i * (degree_ + 1) + *ex)];
      basis_(k) = v;
    }
    b.noalias() = drift_ * basis_;
    pairs_.noalias() = diffusion_ * basis_;
    a.resize(dim_, dim_);
    for (int i = 0; i < dim_; ++i)
      for (int j = i; j < dim_; ++j) a(i, j) = a(j, i) = pairs_(pair_index(i, j, dim_));
  }

 private:
  int dim_;
  int degree_;
  Matrix drift_;
  Matrix diffusion_;
  std::vector<int> exponents_;
  std::vector<double> powers_;
  Vector basis_;
  Vector pairs_;
};

/// A noise factor s with s s^T equal to a: Cholesky when a is positive
/// definite, otherwise the eigenvalue-clipped symmetric root.
inline void noise_factor(const Matrix& a, Matrix& sigma) {
  const auto d = a.rows();
  if (d == 1) {
    sigma.resize(1, 1);
    sigma(0, 0) = std::sqrt(std::max(a(0, 0), 0.0));
    return;
  }
  Eigen::LLT<Matrix> llt(a);
  if (llt.info() == Eigen::Success) {
    sigma = llt.matrixL();
    return;
  }
  sigma = psd_sigma(a).sigma;
}

/// Keeps a state inside the domain after an Euler step.
inline void project_state(Vector& x, const EmConfig& cfg) {
  if (cfg.projection == Projection::none) return;
  for (Eigen::Index i = 0; i < x.size(); ++i)
    if (x(i) < 0.0) x(i) = 0.0;
  if (!cfg.conserved) return;
  const int kept = cfg.conserved->block_size - 1;
  for (int q = 0; q < cfg.conserved->blocks; ++q) {
    const double s = x.segment(q * kept, kept).sum();
    if (s > 1.0) x.segment(q * kept, kept) /= s;
  }
}

struct SdePath {
  std::vector<double> times;
  std::vector<Vector> states;
};

namespace detail {

/// Integrates one path, calling `save(slot, x)` at every saved time.
template <typename Save>
void em_integrate(CompiledSde& model, const Vector& x0, const EmConfig& cfg, Rng& rng, Save&& save) {
  const int d = model.dim();
  const long steps = cfg.num_steps();
  const double sqdt = std::sqrt(cfg.dt);
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector x = x0, b(d), xi(d);
  Matrix a(d, d), sigma(d, d);
  save(0, x);
  for (long s = 1; s <= steps; ++s) {
    model.evaluate(x, b, a);
    noise_factor(a, sigma);
    for (int i = 0; i < d; ++i) xi(i) = normal(rng);
    x += b * cfg.dt + sqdt * (sigma * xi);
    project_state(x, cfg);
    if (!x.allFinite()) throw IntegrationError("state became non-finite", s * cfg.dt);
    if (s % cfg.save_stride == 0) save(s / cfg.save_stride, x);
  }
}

}  // namespace detail

inline std::vector<double> save_times(const EmConfig& cfg) {
  std::vector<double> t;
  for (long s = 0; s <= cfg.num_steps(); s += cfg.save_stride) t.push_back(static_cast<double>(s) * cfg.dt);
  return t;
}

/// One Euler-Maruyama path; the noise stream is derive_seed(seed, {path}).
inline SdePath euler_maruyama(const IdentifiedSde& sde, const Vector& x0, const EmConfig& cfg, long path = 0) {
  cfg.validate();
  if (x0.size() != sde.dim()) throw ContractError("initial state has the wrong dimension");
  CompiledSde model(sde);
  Rng rng = make_rng(cfg.seed, {static_cast<std::uint64_t>(path)});
  SdePath out;
  out.times = save_times(cfg);
  out.states.resize(out.times.size());
  detail::em_integrate(model, x0, cfg, rng, [&](long slot, const Vector& x) { out.states[static_cast<std::size_t>(slot)] = x; });
  return out;
}

struct EnsembleStats {
  std::vector<double> times;
  std::vector<Vector> mean;
  std::vector<Vector> std;
  long num_paths = 0;
};

/// Streaming per-time mean and M2 accumulator (Welford), mergeable.
class MomentAccumulator {
 public:
  MomentAccumulator(std::size_t slots, Eigen::Index dim)
      : mean_(slots, Vector::Zero(dim)), m2_(slots, Vector::Zero(dim)), count_(slots, 0) {}

  void add(std::size_t slot, const Vector& x) {
    const double n = static_cast<double>(++count_[slot]);
    const Vector delta = x - mean_[slot];
    mean_[slot] += delta / n;
    m2_[slot] += delta.cwiseProduct(x - mean_[slot]);
  }

  /// Parallel combination of two accumulators (Chan et al. update).
  void merge(const MomentAccumulator& o) {
    for (std::size_t s = 0; s < mean_.size(); ++s) {
      const double na = static_cast<double>(count_[s]), nb = static_cast<double>(o.count_[s]);
      if (nb == 0) continue;
      const double n = na + nb;
      const Vector delta = o.mean_[s] - mean_[s];
      mean_[s] += delta * (nb / n);
      m2_[s] += o.m2_[s] + delta.cwiseAbs2() * (na * nb / n);
      count_[s] += o.count_[s];
    }
  }

  EnsembleStats stats(std::vector<double> times) const {
    EnsembleStats out;
    out.times = std::move(times);
    out.mean = mean_;
    for (std::size_t s = 0; s < mean_.size(); ++s) {
      const double n = static_cast<double>(count_[s]);
      out.std.push_back(n > 1 ? Vector((m2_[s] / (n - 1)).cwiseMax(0.0).cwiseSqrt()) : Vector::Zero(mean_[s].size()));
    }
    out.num_paths = count_.empty() ? 0 : count_.front();
    return out;
  }

 private:
  std::vector<Vector> mean_;
  std::vector<Vector> m2_;
  std::vector<long> count_;
};

inline constexpr long kEnsembleChunk = 32;

/// Mean and sample standard deviation (divisor n - 1) over num_paths paths
/// produced by `path(p, save)`, where save(slot, x) records the state at a
/// grid slot. Paths run in fixed chunks whose accumulators are merged in
/// chunk order, so results do not depend on the worker count.
template <typename PathFn>
EnsembleStats accumulate_ensemble(long num_paths, std::vector<double> times, Eigen::Index dim, PathFn&& path) {
  if (num_paths < 1) throw ContractError("num_paths must be >= 1");
  const long chunks = (num_paths + kEnsembleChunk - 1) / kEnsembleChunk;
  std::vector<MomentAccumulator> acc(static_cast<std::size_t>(chunks), MomentAccumulator(times.size(), dim));
  parallel_for(static_cast<std::size_t>(chunks), [&](std::size_t c) {
    const long first = static_cast<long>(c) * kEnsembleChunk;
    const long last = std::min(num_paths, first + kEnsembleChunk);
    for (long p = first; p < last; ++p)
      path(p, [&](long slot, const Vector& x) { acc[c].add(static_cast<std::size_t>(slot), x); });
  });
  for (std::size_t c = 1; c < acc.size(); ++c) acc[0].merge(acc[c]);
  return acc[0].stats(std::move(times));
}

/// Euler-Maruyama ensemble moments; path p uses the noise stream
/// derive_seed(cfg.seed, {p}).
inline EnsembleStats ensemble_moments(const IdentifiedSde& sde, const Vector& x0, const EmConfig& cfg) {
  cfg.validate();
  if (x0.size() != sde.dim()) throw ContractError("initial state has the wrong dimension");
  const CompiledSde compiled(sde);
  return accumulate_ensemble(cfg.num_paths, save_times(cfg), x0.size(), [&](long p, auto&& save) {
    CompiledSde model = compiled;
    Rng rng = make_rng(cfg.seed, {static_cast<std::uint64_t>(p)});
    detail::em_integrate(model, x0, cfg, rng, save);
  });
}

/// Moments of stored paths sharing one time grid.
inline EnsembleStats ensemble_moments(const std::vector<SdePath>& paths) {
  if (paths.empty()) throw ContractError("no paths given");
  const auto& times = paths.front().times;
  MomentAccumulator acc(times.size(), paths.front().states.front().size());
  for (const auto& p : paths) {
    if (p.states.size() != times.size()) throw ContractError("paths have different time grids");
    for (std::size_t s = 0; s < times.size(); ++s) acc.add(s, p.states[s]);
  }
  return acc.stats(times);
}

inline double rmse(const std::vector<Vector>& predicted, const std::vector<Vector>& reference) {
  if (predicted.size() != reference.size() || predicted.empty())
    throw ContractError("rmse needs two non-empty sequences of equal length");
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    if (predicted[i].size() != reference[i].size()) throw ContractError("rmse: element sizes differ");
    sum += (predicted[i] - reference[i]).squaredNorm();
    count += static_cast<std::size_t>(predicted[i].size());
  }
  return std::sqrt(sum / static_cast<double>(count));
}

inline double rmse(const std::vector<double>& predicted, const std::vector<double>& reference) {
  if (predicted.size() != reference.size() || predicted.empty())
    throw ContractError("rmse needs two non-empty sequences of equal length");
  double sum = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) sum += (predicted[i] - reference[i]) * (predicted[i] - reference[i]);
  return std::sqrt(sum / static_cast<double>(predicted.size()));
}

struct CoefficientError {
  double drift = 0.0;
  double diffusion = 0.0;
};

/// RMSE over all drift coefficients and over all distinct diffusion
/// coefficients; diffusion coefficients are multiplied by each model's
/// population size first.
inline CoefficientError coefficient_error(const IdentifiedSde& identified, const IdentifiedSde& reference) {
  if (!(*identified.dictionary == *reference.dictionary)) throw ContractError("models use different dictionaries");
  auto flat_rmse = [](const Matrix& a, const Matrix& b) { return std::sqrt((a - b).squaredNorm() / static_cast<double>(a.size())); };
  return {flat_rmse(identified.drift.coefficients, reference.drift.coefficients),
          flat_rmse(identified.diffusion.coefficients * static_cast<double>(identified.population_size),
                    reference.diffusion.coefficients * static_cast<double>(reference.population_size))};
}

/// Largest per-time, per-component absolute difference of two statistics.
inline double sup_gap(const std::vector<Vector>& a, const std::vector<Vector>& b) {
  if (a.size() != b.size()) throw ContractError("statistics have different time grids");
  double g = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) g = std::max(g, (a[i] - b[i]).cwiseAbs().maxCoeff());
  return g;
}

inline void write_ensemble(std::ostream& out, const EnsembleStats& st) {
  const auto d = st.mean.empty() ? 0 : st.mean.front().size();
  out << "t";
  for (Eigen::Index i = 0; i < d; ++i) out << ",mean_x" << i + 1;
  for (Eigen::Index i = 0; i < d; ++i) out << ",std_x" << i + 1;
  out << '\n' << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (std::size_t s = 0; s < st.times.size(); ++s) {
    out << st.times[s];
    for (Eigen::Index i = 0; i < d; ++i) out << ',' << st.mean[s](i);
    for (Eigen::Index i = 0; i < d; ++i) out << ',' << st.std[s](i);
    out << '\n';
  }
}

}  // namespace abmkoop
