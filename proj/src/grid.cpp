#include "moeapprox/grid.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "moeapprox/errors.hpp"

namespace moeapprox {

namespace {

constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();

/// |f - g| at one grid point, or NaN for non-finite values.
double point_error(const VectorMap& f, const VectorMap& g, std::span<const double> x) {
  const Vector a = f(x);
  const Vector b = g(x);
  if (a.size() != b.size()) throw ShapeError("compared maps differ in output dimension");
  double e = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!std::isfinite(a[i]) || !std::isfinite(b[i])) return std::numeric_limits<double>::quiet_NaN();
    e = std::max(e, std::abs(a[i] - b[i]));
  }
  return e;
}

[[noreturn]] void throw_non_finite(const GridSpec& grid, std::size_t index) {
  throw EvaluationError("non-finite value at grid index " + std::to_string(index),
                        grid.point(index));
}

ErrorReport finish_report(GridMax coarse, const GridSpec& grid, bool refinement_check,
                          GridMax (*kernel)(const VectorMap&, const VectorMap&, const GridSpec&),
                          const VectorMap& f, const VectorMap& g) {
  ErrorReport r;
  r.sup_error = coarse.value;
  r.grid_size = coarse.evaluated;
  r.excluded = coarse.excluded;
  if (coarse.evaluated > 0) r.argmax = grid.point(coarse.index);
  if (refinement_check) {
    const GridSpec fine = grid.refined();
    if (fine.size() <= fine.budget) {
      const GridMax refined = kernel(f, g, fine);
      r.refinement_checked = true;
      r.refined_error = refined.value;
      r.refinement_ok = refined.value <= 1.1 * coarse.value + 1e-15;
    }
  }
  return r;
}

}  // namespace

GridSpec GridSpec::uniform(double lo, double hi, std::size_t n, std::size_t dim) {
  GridSpec g;
  g.lower.assign(dim, lo);
  g.upper.assign(dim, hi);
  g.counts.assign(dim, n);
  return g;
}

std::size_t GridSpec::size() const noexcept {
  if (counts.empty()) return 0;
  std::size_t n = 1;
  for (std::size_t c : counts) n *= c;
  return n;
}

void GridSpec::validate() const {
  if (counts.empty()) throw SpecError("grid needs at least one dimension");
  if (lower.size() != counts.size() || upper.size() != counts.size())
    throw SpecError("grid bounds and counts differ in dimension");
  for (std::size_t k = 0; k < counts.size(); ++k) {
    if (counts[k] < 2) throw SpecError("grid needs at least 2 points per dimension");
    if (!(lower[k] <= upper[k])) throw SpecError("grid bounds are inverted");
  }
  if (size() > budget)
    throw SpecError("grid of " + std::to_string(size()) + " points exceeds budget " +
                    std::to_string(budget));
}

Vector GridSpec::param(std::size_t index) const {
  Vector p(counts.size());
  for (std::size_t k = counts.size(); k-- > 0;) {
    const std::size_t j = index % counts[k];
    index /= counts[k];
    const double span = upper[k] - lower[k];
    p[k] = lower[k] + (span * static_cast<double>(j)) / static_cast<double>(counts[k] - 1);
  }
  return p;
}

Vector GridSpec::point(std::size_t index) const {
  Vector p = param(index);
  return map ? map(p) : p;
}

GridSpec GridSpec::refined() const {
  GridSpec fine = *this;
  for (auto& c : fine.counts) c = 2 * c - 1;
  return fine;
}

int kernel_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

GridMax grid_max_error(const VectorMap& f, const VectorMap& g, const GridSpec& grid) {
  grid.validate();
  const auto n = static_cast<std::ptrdiff_t>(grid.size());
  GridMax best;
  std::size_t bad = kNone;
  bool failed = false;
  std::string failure;

#pragma omp parallel
  {
    GridMax local;
    std::size_t local_bad = kNone;
#pragma omp for schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
      const auto idx = static_cast<std::size_t>(i);
      try {
        const Vector x = grid.point(idx);
        if (grid.excluded(x)) {
          ++local.excluded;
          continue;
        }
        const double e = point_error(f, g, x);
        ++local.evaluated;
        if (std::isnan(e)) {
          local_bad = std::min(local_bad, idx);
        } else if (local.evaluated == 1 || e > local.value) {
          local.value = e;
          local.index = idx;
        }
      } catch (const std::exception& ex) {
#pragma omp critical(moeapprox_grid_fail)
        {
          failed = true;
          failure = ex.what();
        }
      }
    }
#pragma omp critical(moeapprox_grid_reduce)
    {
      bad = std::min(bad, local_bad);
      if (local.evaluated > 0) {
        const bool take = best.evaluated == 0 || local.value > best.value ||
                          (local.value == best.value && local.index < best.index);
        if (take) {
          best.value = local.value;
          best.index = local.index;
        }
      }
      best.evaluated += local.evaluated;
      best.excluded += local.excluded;
    }
  }
  if (failed) throw Error("grid evaluation failed: " + failure);
  if (bad != kNone) throw_non_finite(grid, bad);
  return best;
}

std::vector<Vector> eval_batch(const VectorMap& f, std::span<const Vector> points) {
  std::vector<Vector> out(points.size());
  const auto n = static_cast<std::ptrdiff_t>(points.size());
  bool failed = false;
  std::string failure;
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    try {
      out[static_cast<std::size_t>(i)] = f(points[static_cast<std::size_t>(i)]);
    } catch (const std::exception& ex) {
#pragma omp critical(moeapprox_batch_fail)
      {
        failed = true;
        failure = ex.what();
      }
    }
  }
  if (failed) throw Error("batch evaluation failed: " + failure);
  return out;
}

ErrorReport estimate_linf(const VectorMap& f, const VectorMap& g, const GridSpec& grid,
                          bool refinement_check) {
  return finish_report(grid_max_error(f, g, grid), grid, refinement_check, &grid_max_error, f, g);
}

namespace serial {

GridMax grid_max_error(const VectorMap& f, const VectorMap& g, const GridSpec& grid) {
  grid.validate();
  GridMax best;
  for (std::size_t idx = 0; idx < grid.size(); ++idx) {
    const Vector x = grid.point(idx);
    if (grid.excluded(x)) {
      ++best.excluded;
      continue;
    }
    const double e = point_error(f, g, x);
    if (std::isnan(e)) throw_non_finite(grid, idx);
    ++best.evaluated;
    if (best.evaluated == 1 || e > best.value) {
      best.value = e;
      best.index = idx;
    }
  }
  return best;
}

std::vector<Vector> eval_batch(const VectorMap& f, std::span<const Vector> points) {
  std::vector<Vector> out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back(f(p));
  return out;
}

ErrorReport estimate_linf(const VectorMap& f, const VectorMap& g, const GridSpec& grid,
                          bool refinement_check) {
  return finish_report(serial::grid_max_error(f, g, grid), grid, refinement_check,
                       &serial::grid_max_error, f, g);
}

}  // namespace serial

}  // namespace moeapprox
