#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "moeapprox/ffn.hpp"
#include "moeapprox/targets.hpp"

namespace moeapprox {

struct FitResult {
  FfnNetwork net;
  double sup_error = 0.0;  ///< on the fitter's verification grid
};

/// Uniform-knot piecewise-linear interpolant of f on [a, b] with `knots`
/// knots, encoded as a two-layer network of width `knots`. The error is
/// measured on a grid 8x denser than the knots (it contains every knot
/// midpoint).
FitResult fit_expert_1d(const std::function<double(double)>& f, double a, double b,
                        std::size_t knots);

struct RandomFeatureFit {
  FfnNetwork net;
  double train_rmse = 0.0;
  double ridge_used = 0.0;
};

/// Two-layer network ReLU(w.x + b) with w uniform on the unit sphere and b
/// uniform on [-bias_radius, bias_radius]; the output layer (with intercept)
/// is a ridge least-squares fit to `targets` (one row per sample, any number
/// of outputs). Features come from one seeded stream, so a wider fit extends
/// the features of a narrower one with the same seed. `ridge` is relative to
/// the mean diagonal of the Gram matrix and is raised 100x when the solve
/// fails.
RandomFeatureFit fit_random_features(std::span<const Vector> samples,
                                     std::span<const Vector> targets, std::size_t width,
                                     std::uint64_t seed, double ridge, double bias_radius);

/// Random-feature fit of f on [0,1]^d from `sample_count` seeded uniform
/// samples (sample_count >= 10 width); sup error on a dense tensor grid.
FitResult fit_ls_random_features(const ScalarMap& f, std::size_t d, std::size_t width,
                                 std::size_t sample_count, std::uint64_t seed,
                                 double ridge = 1e-10);

enum class DenseMethod { pwl_global_1d, ls_random_features };

/// Single two-layer dense network of width m fitted to the whole target on
/// the box [lo, hi]. pwl_global_1d needs a one-dimensional box.
FitResult fit_dense_baseline(const ScalarMap& f, std::span<const double> lo,
                             std::span<const double> hi, std::size_t width, DenseMethod method,
                             std::uint64_t seed = 0);

struct RatePoint {
  double m = 0.0;
  double error = 0.0;
  bool clamped = false;
};

struct RateReport {
  std::vector<RatePoint> points;
  double slope = 0.0;
  double intercept = 0.0;
  double residual = 0.0;  ///< RMS residual of the log-log fit
  bool any_clamped = false;
};

inline constexpr double kRateErrorFloor = 1e-16;

/// Least squares of log(error) against log(m). Needs >= 3 points with strictly
/// increasing m and positive errors (throws FitError otherwise).
RateReport fit_rate(std::span<const RatePoint> points);

/// Replaces errors <= 0 with kRateErrorFloor and flags them.
std::vector<RatePoint> clamp_zero_errors(std::span<const RatePoint> points);

}  // namespace moeapprox
