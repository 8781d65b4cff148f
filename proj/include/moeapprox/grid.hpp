#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "moeapprox/ffn.hpp"

namespace moeapprox {

using VectorMap = std::function<Vector(std::span<const double>)>;

/// Tensor-product grid over a parameter box, optionally mapped onto a
/// manifold, with an exclusion predicate for the boundary band.
struct GridSpec {
  std::vector<double> lower;
  std::vector<double> upper;
  std::vector<std::size_t> counts;  ///< >= 2 per dimension
  VectorMap map;                    ///< parameter -> point; identity when empty
  std::function<bool(std::span<const double>)> exclude;  ///< applied to mapped points
  double boundary_band = 0.0;
  std::size_t budget = std::size_t{1} << 24;

  /// `n` points per dimension on [lo, hi]^dim.
  static GridSpec uniform(double lo, double hi, std::size_t n, std::size_t dim = 1);

  std::size_t dim() const noexcept { return counts.size(); }
  std::size_t size() const noexcept;
  /// Throws SpecError on a broken invariant.
  void validate() const;
  Vector param(std::size_t index) const;
  Vector point(std::size_t index) const;
  bool excluded(std::span<const double> point) const { return exclude && exclude(point); }
  /// 2n - 1 points per dimension: a superset of this grid's points.
  GridSpec refined() const;
};

struct GridMax {
  double value = 0.0;         ///< max over evaluated points of ||f - g||_inf
  std::size_t index = 0;      ///< first grid index attaining it
  std::size_t evaluated = 0;
  std::size_t excluded = 0;
};

struct ErrorReport {
  double sup_error = 0.0;
  Vector argmax;
  std::size_t grid_size = 0;
  std::size_t excluded = 0;
  bool refinement_checked = false;
  double refined_error = 0.0;
  /// Refined estimate within 10% of the coarse one.
  bool refinement_ok = true;
};

/// OpenMP kernels. Results are identical to the serial versions: the maximum
/// and its first index do not depend on the iteration order.
GridMax grid_max_error(const VectorMap& f, const VectorMap& g, const GridSpec& grid);
std::vector<Vector> eval_batch(const VectorMap& f, std::span<const Vector> points);

/// Grid L-infinity distance of f and g plus the 2x refinement check.
ErrorReport estimate_linf(const VectorMap& f, const VectorMap& g, const GridSpec& grid,
                          bool refinement_check = true);

namespace serial {

GridMax grid_max_error(const VectorMap& f, const VectorMap& g, const GridSpec& grid);
std::vector<Vector> eval_batch(const VectorMap& f, std::span<const Vector> points);
ErrorReport estimate_linf(const VectorMap& f, const VectorMap& g, const GridSpec& grid,
                          bool refinement_check = true);

}  // namespace serial

/// Number of OpenMP threads kernels will use (1 without OpenMP).
int kernel_threads();

}  // namespace moeapprox
