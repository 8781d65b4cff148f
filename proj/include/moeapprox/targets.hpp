#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "moeapprox/ffn.hpp"

namespace moeapprox {

using ScalarMap = std::function<double(std::span<const double>)>;

/// Parameters of a chart of the form phi(x) = b (V^T (x - c) + s).
struct LinearChartParams {
  std::size_t ambient_dim = 0;
  std::size_t intrinsic_dim = 0;
  double scale = 1.0;           ///< b
  std::vector<double> basis;    ///< V, row-major ambient_dim x intrinsic_dim
  std::vector<double> center;   ///< c
  std::vector<double> shift;    ///< s

  /// The formula itself, used by linear charts for forward().
  Vector apply(std::span<const double> x) const;
};

/// Coordinate chart (U, phi) with phi(U) inside [0,1]^d.
class Chart {
 public:
  virtual ~Chart() = default;
  virtual std::size_t ambient_dim() const = 0;
  virtual std::size_t intrinsic_dim() const = 0;
  virtual bool contains(std::span<const double> x) const = 0;
  virtual Vector forward(std::span<const double> x) const = 0;
  virtual Vector inverse(std::span<const double> u) const = 0;
  /// Distance (in the chart's own parameter) from x to the boundary of U.
  virtual double boundary_distance(std::span<const double> x) const = 0;
  /// Non-null exactly when phi is affine.
  virtual const LinearChartParams* linear() const { return nullptr; }
};

enum class ChartKind {
  linear,  ///< tangent projection b (V^T (x - c) + s)
  angle,   ///< rescaled polar angle, nonlinear in x
};

/// Parameter box covering the manifold and its map into ambient space.
struct ManifoldDomain {
  std::vector<double> lower;
  std::vector<double> upper;
  std::function<Vector(std::span<const double>)> map;
};

/// Finite atlas with a partition of unity subordinate to it.
class Atlas {
 public:
  using Sampler = std::function<std::vector<Vector>(std::size_t)>;

  Atlas(std::vector<std::shared_ptr<const Chart>> charts, std::vector<ScalarMap> partition,
        Sampler sampler, ManifoldDomain domain, std::string name);

  std::size_t size() const noexcept { return charts_.size(); }
  std::size_t ambient_dim() const noexcept { return charts_.front()->ambient_dim(); }
  std::size_t intrinsic_dim() const noexcept { return charts_.front()->intrinsic_dim(); }
  const Chart& chart(std::size_t i) const { return *charts_.at(i); }
  std::shared_ptr<const Chart> chart_ptr(std::size_t i) const { return charts_.at(i); }
  const std::string& name() const noexcept { return name_; }

  double partition(std::size_t i, std::span<const double> x) const { return partition_.at(i)(x); }
  Vector partition_values(std::span<const double> x) const;
  std::vector<std::size_t> charts_containing(std::span<const double> x) const;
  double boundary_distance(std::span<const double> x) const;

  /// Roughly n deterministic, evenly spread points of the manifold.
  std::vector<Vector> sample(std::size_t n) const { return sampler_(n); }
  const ManifoldDomain& domain() const noexcept { return domain_; }

 private:
  std::vector<std::shared_ptr<const Chart>> charts_;
  std::vector<ScalarMap> partition_;
  Sampler sampler_;
  ManifoldDomain domain_;
  std::string name_;
};

/// exp(-1 / (1 - t^2)) for |t| < 1, else 0.
double bump(double t);

Vector circle_point(double theta);

/// Unit circle covered by `charts` open arcs centred at angles 2 pi i / E, each
/// of half-width (pi / E)(1 + overlap_frac). Partition functions are normalised
/// bumps of the angular distance to the arc centre.
Atlas build_circle_atlas(std::size_t charts, double overlap_frac,
                         ChartKind kind = ChartKind::linear);

/// Segment [0,1] of the real line covered by E overlapping intervals with
/// linear charts; E = 1 gives a single global chart.
Atlas build_segment_atlas(std::size_t charts, double overlap_frac);

/// Flat torus in R^4 as circle x circle with product charts (E^2 of them) and
/// product partition functions.
Atlas build_torus_atlas(std::size_t charts_per_circle, double overlap_frac,
                        ChartKind kind = ChartKind::linear);

/// One piece f_{l,i} of a piecewise target.
struct Subfunction {
  ScalarMap eval;                  ///< on the factor's own coordinates
  ScalarMap local;                 ///< f_{l,i} o phi^{-1} on [0,1]^d (cube grid: same as eval)
  std::optional<int> smoothness;   ///< nullopt means C^infinity
};

struct TargetFactor {
  std::size_t dim = 1;                ///< coordinates of x_l
  std::vector<Subfunction> pieces;    ///< one per region
  std::optional<Atlas> atlas;         ///< manifold factors only
};

/// f(x) = (f_{1,i_1}(x_1), ..., f_{L,i_L}(x_L)) with the outer map fixed to the
/// identity. Cube-grid factors use the closed cells [i, i+1], i = 0..E-1.
class PiecewiseTarget {
 public:
  enum class Kind { cube_grid, product_manifold };

  PiecewiseTarget(Kind kind, std::vector<TargetFactor> factors, std::string name,
                  int global_continuity = 0);

  Kind kind() const noexcept { return kind_; }
  const std::string& name() const noexcept { return name_; }
  int global_continuity() const noexcept { return continuity_; }
  std::size_t factor_count() const noexcept { return factors_.size(); }
  const TargetFactor& factor(std::size_t l) const { return factors_.at(l); }
  std::size_t pieces(std::size_t l) const { return factors_.at(l).pieces.size(); }
  std::size_t input_dim() const noexcept { return input_dim_; }
  std::size_t factor_offset(std::size_t l) const { return offsets_.at(l); }

  std::span<const double> factor_slice(std::span<const double> x, std::size_t l) const;

  /// Distance from x_l to the nearest region boundary of factor l.
  double boundary_distance(std::size_t l, std::span<const double> x_l) const;

 private:
  Kind kind_;
  std::vector<TargetFactor> factors_;
  std::string name_;
  int continuity_;
  std::vector<std::size_t> offsets_;
  std::size_t input_dim_ = 0;
};

/// Every admissible region index (0-based) of x_l in factor l; throws
/// DomainError when there is none.
std::vector<std::size_t> region_index(const PiecewiseTarget& target, std::size_t l,
                                      std::span<const double> x_l);

/// Uses the smallest admissible index in every factor.
Vector eval_target(const PiecewiseTarget& target, std::span<const double> x);

/// E = 3, L = 2: f_{1,i}(z) = i (i-1-z)(z-i) and f_{2,i}(z) = i (i-1-z)^2 (z-i)^2
/// on [i-1, i] (1-based i). Continuous, kinked at the integers.
PiecewiseTarget fig3_target();

/// Cube-grid target from explicit pieces, one vector of E maps per factor.
PiecewiseTarget cube_grid_target(std::vector<std::vector<std::function<double(double)>>> pieces,
                                 std::string name, std::optional<int> piece_smoothness,
                                 int global_continuity);

struct ManifoldFactor {
  Atlas atlas;
  std::vector<ScalarMap> local;   ///< g_i on [0,1]^d, one per chart
  std::optional<int> smoothness;
};

/// f_{l,i} = g_{l,i} o phi_{l,i}. Validates overlap consistency with `samples`
/// points per factor and throws ValidationError (with witness) above `tol`.
PiecewiseTarget build_manifold_target(std::vector<ManifoldFactor> factors, std::string name,
                                      std::size_t samples = 4096, double tol = 1e-9);

/// Per-chart g_i for a function of the polar angle on a circle atlas.
std::vector<ScalarMap> circle_angle_function(const Atlas& circle, std::function<double(double)> f);

struct OverlapReport {
  bool pass = true;
  double max_discrepancy = 0.0;
  std::size_t checked_points = 0;
  std::optional<std::size_t> witness_factor;
  Vector witness;               ///< first point with discrepancy above tol
  double witness_discrepancy = 0.0;
};

/// Compares every admissible piece at sampled overlap points.
OverlapReport validate_overlap_consistency(const PiecewiseTarget& target, std::size_t samples,
                                           double tol);

}  // namespace moeapprox
