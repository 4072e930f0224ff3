#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bsdiff/errors.hpp"
#include "bsdiff/io.hpp"
#include "bsdiff/parallel.hpp"

namespace bsdiff {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

namespace rng {

inline constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t combine(std::uint64_t h, std::uint64_t v) {
  return mix64(h ^ (v + kGolden + (h << 6) + (h >> 2)));
}

template <class... Ts>
constexpr std::uint64_t derive_key(std::uint64_t seed, Ts... parts) {
  std::uint64_t h = mix64(seed + kGolden);
  ((h = combine(h, static_cast<std::uint64_t>(parts))), ...);
  return h;
}

// Domain tags keep streams for different purposes disjoint under one seed.
enum class Tag : std::uint64_t {
  Wiener = 1,
  Init = 2,
  Data = 3,
  Time = 4,
  Noise = 5,
  Prior = 6,
  Control = 7,
  Ensemble = 8,
  Validation = 9,
  PowerIteration = 10,
  Probe = 11,
};

/// Uniform in the open interval (0, 1) from the top 53 bits.
constexpr double to_unit_open(std::uint64_t bits) {
  return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
}

/// Acklam's rational approximation refined by one Halley step.
inline double inverse_normal_cdf(double p) {
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                                 1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                                 6.680131188771972e+01, -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                                 -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                                 3.754408661907416e+00};
  constexpr double p_low = 0.02425;
  double x;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - p_low) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log1p(-p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  const double e = 0.5 * std::erfc(-x / std::numbers::sqrt2) - p;
  const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
  return x - u / (1.0 + 0.5 * x * u);
}

/// Counter-based stream: draw k is a pure function of (key, k).
class Stream {
 public:
  explicit Stream(std::uint64_t key) : key_(key) {}

  template <class... Ts>
  static Stream keyed(std::uint64_t seed, Tag tag, Ts... parts) {
    return Stream(derive_key(seed, static_cast<std::uint64_t>(tag), parts...));
  }

  std::uint64_t bits_at(std::uint64_t k) const { return mix64(key_ + (k + 1) * kGolden); }
  double normal_at(std::uint64_t k) const { return inverse_normal_cdf(to_unit_open(bits_at(k))); }

  std::uint64_t next_u64() { return bits_at(counter_++); }
  double uniform() { return to_unit_open(next_u64()); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal() { return inverse_normal_cdf(uniform()); }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)) % n; }

  Matrix normal_matrix(Index rows, Index cols) {
    Matrix out(rows, cols);
    for (Index j = 0; j < cols; ++j)
      for (Index i = 0; i < rows; ++i) out(i, j) = normal();
    return out;
  }

  std::uint64_t key() const { return key_; }
  std::uint64_t position() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace rng

/// Uniform partition of [0, T] into n steps.
class TimeGrid {
 public:
  TimeGrid(double horizon, Index steps) : horizon_(horizon), steps_(steps) {
    detail::require(std::isfinite(horizon) && horizon > 0.0, "time grid horizon must be positive");
    detail::require(steps >= 1, "time grid needs at least one step");
  }

  double horizon() const { return horizon_; }
  Index steps() const { return steps_; }
  double dt() const { return horizon_ / static_cast<double>(steps_); }

  /// t_k = k T / n; the last node is T exactly.
  double node(Index k) const {
    if (k == steps_) return horizon_;
    return static_cast<double>(k) * horizon_ / static_cast<double>(steps_);
  }

  std::vector<double> nodes() const {
    std::vector<double> out(static_cast<std::size_t>(steps_ + 1));
    for (Index k = 0; k <= steps_; ++k) out[static_cast<std::size_t>(k)] = node(k);
    return out;
  }

  bool operator==(const TimeGrid&) const = default;

 private:
  double horizon_;
  Index steps_;
};

inline TimeGrid make_time_grid(double horizon, Index steps) { return TimeGrid(horizon, steps); }

/// M Brownian paths on a TimeGrid, increments and cumulative positions stored
/// path-major: entry (m, k, j) sits at (m * n + k) * d + j.
class WienerEnsemble {
 public:
  WienerEnsemble(TimeGrid grid, Index paths, Index dim, std::uint64_t seed)
      : grid_(grid), paths_(paths), dim_(dim), seed_(seed) {
    detail::require(paths >= 1, "wiener ensemble needs at least one path");
    detail::require(dim >= 1, "wiener ensemble needs dimension >= 1");
    increments_.assign(static_cast<std::size_t>(paths * grid.steps() * dim), 0.0);
    cumulative_.assign(static_cast<std::size_t>(paths * (grid.steps() + 1) * dim), 0.0);
  }

  /// Path m of the ensemble keyed by `seed`; draws depend only on (seed, path_offset + m, step, coord).
  static WienerEnsemble generate(const TimeGrid& grid, Index paths, Index dim, std::uint64_t seed,
                                 Index path_offset = 0, unsigned workers = 1) {
    WienerEnsemble ens(grid, paths, dim, seed);
    const double scale = std::sqrt(grid.dt());
    const Index n = grid.steps();
    parallel_for(static_cast<std::size_t>(paths), workers, [&](std::size_t pm) {
      const Index m = static_cast<Index>(pm);
      const rng::Stream stream =
          rng::Stream::keyed(seed, rng::Tag::Wiener, static_cast<std::uint64_t>(path_offset + m));
      for (Index k = 0; k < n; ++k)
        for (Index j = 0; j < dim; ++j)
          ens.increments_[ens.inc_offset(m, k) + static_cast<std::size_t>(j)] =
              scale * stream.normal_at(static_cast<std::uint64_t>(k * dim + j));
    });
    ens.rebuild_cumulative();
    return ens;
  }

  /// All increments zero: the deterministic (noise-free) ensemble.
  static WienerEnsemble zeros(const TimeGrid& grid, Index paths, Index dim) { return WienerEnsemble(grid, paths, dim, 0); }

  /// Increments given as an M x n x d path-major array.
  static WienerEnsemble from_increments(const TimeGrid& grid, Index paths, Index dim, std::uint64_t seed,
                                        std::vector<double> increments) {
    WienerEnsemble ens(grid, paths, dim, seed);
    detail::require(increments.size() == ens.increments_.size(), "increment payload size mismatch");
    ens.increments_ = std::move(increments);
    ens.rebuild_cumulative();
    return ens;
  }

  const TimeGrid& grid() const { return grid_; }
  Index paths() const { return paths_; }
  Index dim() const { return dim_; }
  Index steps() const { return grid_.steps(); }
  std::uint64_t seed() const { return seed_; }

  /// Delta w_k of path m.
  Eigen::Map<const Vector> increment(Index m, Index k) const {
    return Eigen::Map<const Vector>(increments_.data() + inc_offset(m, k), dim_);
  }
  /// w_k of path m, w_0 = 0.
  Eigen::Map<const Vector> position(Index m, Index k) const {
    return Eigen::Map<const Vector>(cumulative_.data() + cum_offset(m, k), dim_);
  }

  /// d x M matrix of w_k over all paths.
  Matrix positions_at(Index k) const {
    Matrix out(dim_, paths_);
    for (Index m = 0; m < paths_; ++m) out.col(m) = position(m, k);
    return out;
  }
  /// d x M matrix of Delta w_k over all paths.
  Matrix increments_at(Index k) const {
    Matrix out(dim_, paths_);
    for (Index m = 0; m < paths_; ++m) out.col(m) = increment(m, k);
    return out;
  }

  /// Paths [first, first + count) as their own ensemble.
  WienerEnsemble slice(Index first, Index count) const {
    detail::require(first >= 0 && count >= 1 && first + count <= paths_, "slice out of range");
    const auto per_path = static_cast<std::size_t>(grid_.steps() * dim_);
    std::vector<double> inc(increments_.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(first) * per_path),
                            increments_.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(first + count) * per_path));
    return from_increments(grid_, count, dim_, seed_, std::move(inc));
  }

  const std::vector<double>& raw_increments() const { return increments_; }
  const std::vector<double>& raw_cumulative() const { return cumulative_; }

 private:
  std::size_t inc_offset(Index m, Index k) const {
    return static_cast<std::size_t>((m * grid_.steps() + k) * dim_);
  }
  std::size_t cum_offset(Index m, Index k) const {
    return static_cast<std::size_t>((m * (grid_.steps() + 1) + k) * dim_);
  }

  void rebuild_cumulative() {
    const Index n = grid_.steps();
    for (Index m = 0; m < paths_; ++m) {
      for (Index j = 0; j < dim_; ++j) cumulative_[cum_offset(m, 0) + static_cast<std::size_t>(j)] = 0.0;
      for (Index k = 0; k < n; ++k)
        for (Index j = 0; j < dim_; ++j) {
          const auto jj = static_cast<std::size_t>(j);
          cumulative_[cum_offset(m, k + 1) + jj] = cumulative_[cum_offset(m, k) + jj] + increments_[inc_offset(m, k) + jj];
        }
    }
  }

  TimeGrid grid_;
  Index paths_;
  Index dim_;
  std::uint64_t seed_;
  std::vector<double> increments_;
  std::vector<double> cumulative_;
};

inline WienerEnsemble sample_wiener_ensemble(const TimeGrid& grid, Index paths, Index dim, std::uint64_t seed,
                                             unsigned workers = 1) {
  return WienerEnsemble::generate(grid, paths, dim, seed, 0, workers);
}

// Binary dump: "BSWE", u32 version, u64 M, u64 n, u64 d, f64 T, u64 seed,
// then the M*n*d increments as little-endian f64. Positions are rebuilt on load.
inline constexpr std::uint32_t kEnsembleFormatVersion = 1;

inline void save_ensemble(const WienerEnsemble& ens, const std::string& path) {
  auto os = io::open_output(path, true);
  io::write_magic(os, "BSWE");
  io::write_u32(os, kEnsembleFormatVersion);
  io::write_u64(os, static_cast<std::uint64_t>(ens.paths()));
  io::write_u64(os, static_cast<std::uint64_t>(ens.steps()));
  io::write_u64(os, static_cast<std::uint64_t>(ens.dim()));
  io::write_f64(os, ens.grid().horizon());
  io::write_u64(os, ens.seed());
  io::write_f64s(os, ens.raw_increments());
  if (!os) throw InvalidArgument("failed writing ensemble file: " + path);
}

inline WienerEnsemble load_ensemble(const std::string& path) {
  auto is = io::open_input(path, true);
  io::expect_magic(is, "BSWE");
  const auto version = io::read_u32(is);
  if (version != kEnsembleFormatVersion) throw InvalidArgument("unsupported ensemble format version");
  const auto paths = static_cast<Index>(io::read_u64(is));
  const auto steps = static_cast<Index>(io::read_u64(is));
  const auto dim = static_cast<Index>(io::read_u64(is));
  const double horizon = io::read_f64(is);
  const auto seed = io::read_u64(is);
  TimeGrid grid(horizon, steps);
  detail::require(paths >= 1 && dim >= 1, "corrupt ensemble header");
  std::vector<double> inc(static_cast<std::size_t>(paths * steps * dim));
  io::read_f64s(is, inc);
  return WienerEnsemble::from_increments(grid, paths, dim, seed, std::move(inc));
}

}  // namespace bsdiff
