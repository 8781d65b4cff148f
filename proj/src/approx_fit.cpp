#include "moeapprox/approx_fit.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include <Eigen/Dense>

#include "moeapprox/errors.hpp"
#include "moeapprox/grid.hpp"

namespace moeapprox {

namespace {

double checked(double v, const char* what) {
  if (!std::isfinite(v)) throw FitError(std::string("non-finite target value in ") + what);
  return v;
}

/// Multiplier decorrelating the sample stream from the feature stream.
constexpr std::uint64_t kSampleStream = 0x9e3779b97f4a7c15ULL;

}  // namespace

FitResult fit_expert_1d(const std::function<double(double)>& f, double a, double b,
                        std::size_t knots) {
  if (knots < 2) throw SpecError("fit_expert_1d needs at least 2 knots");
  if (!(a < b)) throw SpecError("fit_expert_1d needs a < b");
  PwlSpec spec;
  spec.knots.resize(knots);
  spec.values.resize(knots);
  const double span = b - a;
  const auto last = static_cast<double>(knots - 1);
  for (std::size_t k = 0; k < knots; ++k) {
    spec.knots[k] = k + 1 == knots ? b : a + (span * static_cast<double>(k)) / last;
    spec.values[k] = checked(f(spec.knots[k]), "fit_expert_1d");
  }
  FfnNetwork net = encode_pwl(spec);

  const std::size_t verify = 8 * (knots - 1) + 1;
  double err = 0.0;
  for (std::size_t j = 0; j < verify; ++j) {
    const double z = a + (span * static_cast<double>(j)) / static_cast<double>(verify - 1);
    const double x[] = {z};
    err = std::max(err, std::abs(checked(f(z), "fit_expert_1d") - net.eval(x)[0]));
  }
  return {std::move(net), err};
}

RandomFeatureFit fit_random_features(std::span<const Vector> samples,
                                     std::span<const Vector> targets, std::size_t width,
                                     std::uint64_t seed, double ridge, double bias_radius) {
  if (width == 0) throw SpecError("random-feature width must be positive");
  if (samples.empty() || samples.size() != targets.size())
    throw SpecError("random-feature fit needs matching, non-empty samples and targets");
  const std::size_t d = samples.front().size();
  const std::size_t q = targets.front().size();
  const std::size_t n = samples.size();

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(-bias_radius, bias_radius);
  DenseLayer hidden = DenseLayer::zeros(d, width, true);
  for (std::size_t k = 0; k < width; ++k) {
    double norm = 0.0;
    do {
      norm = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        hidden.w(k, c) = normal(rng);
        norm += hidden.w(k, c) * hidden.w(k, c);
      }
    } while (norm == 0.0);
    norm = std::sqrt(norm);
    for (std::size_t c = 0; c < d; ++c) hidden.w(k, c) /= norm;
    hidden.bias[k] = uniform(rng);
  }

  Eigen::MatrixXd A(n, width + 1);
  Eigen::MatrixXd Y(n, q);
  for (std::size_t s = 0; s < n; ++s) {
    if (samples[s].size() != d || targets[s].size() != q)
      throw SpecError("ragged samples or targets");
    for (std::size_t k = 0; k < width; ++k) {
      double acc = hidden.bias[k];
      for (std::size_t c = 0; c < d; ++c) acc += hidden.w(k, c) * samples[s][c];
      A(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(k)) = acc > 0.0 ? acc : 0.0;
    }
    A(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(width)) = 1.0;
    for (std::size_t o = 0; o < q; ++o)
      Y(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(o)) =
          checked(targets[s][o], "fit_random_features");
  }

  const Eigen::MatrixXd gram = A.transpose() * A;
  const Eigen::MatrixXd rhs = A.transpose() * Y;
  const double scale = std::max(gram.diagonal().mean(), 1e-300);
  double lambda = ridge;
  Eigen::MatrixXd coef;
  bool solved = false;
  for (int attempt = 0; attempt < 8 && !solved; ++attempt, lambda *= 100.0) {
    Eigen::MatrixXd reg = gram;
    reg.diagonal().array() += lambda * scale;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(reg);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) continue;
    coef = ldlt.solve(rhs);
    solved = ldlt.info() == Eigen::Success && coef.allFinite();
  }
  if (!solved) throw FitError("random-feature normal equations stayed singular after ridge rescue");
  lambda /= 100.0;

  DenseLayer out = DenseLayer::zeros(width, q, false);
  for (std::size_t o = 0; o < q; ++o) {
    for (std::size_t k = 0; k < width; ++k)
      out.w(o, k) = coef(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(o));
    out.bias[o] = coef(static_cast<Eigen::Index>(width), static_cast<Eigen::Index>(o));
  }
  const double rmse =
      std::sqrt((A * coef - Y).squaredNorm() / static_cast<double>(n * q));
  return {FfnNetwork({std::move(hidden), std::move(out)}), rmse, lambda};
}

FitResult fit_ls_random_features(const ScalarMap& f, std::size_t d, std::size_t width,
                                 std::size_t sample_count, std::uint64_t seed, double ridge) {
  if (d == 0) throw SpecError("dimension must be positive");
  if (sample_count < 10 * width) throw SpecError("sample_count must be at least 10 x width");
  std::mt19937_64 rng(seed * kSampleStream + 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<Vector> xs(sample_count, Vector(d));
  std::vector<Vector> ys(sample_count, Vector(1));
  for (std::size_t s = 0; s < sample_count; ++s) {
    for (auto& v : xs[s]) v = unit(rng);
    ys[s][0] = f(xs[s]);
  }
  auto fit = fit_random_features(xs, ys, width, seed, ridge, std::sqrt(static_cast<double>(d)));

  const auto per_dim = std::max<std::size_t>(
      2, static_cast<std::size_t>(std::ceil(std::pow(4.0 * static_cast<double>(sample_count),
                                                     1.0 / static_cast<double>(d)))));
  const GridSpec grid = GridSpec::uniform(0.0, 1.0, per_dim, d);
  const FfnNetwork& net = fit.net;
  const GridMax gm = grid_max_error([&](std::span<const double> x) { return Vector{f(x)}; },
                                    [&](std::span<const double> x) { return net.eval(x); }, grid);
  return {std::move(fit.net), gm.value};
}

FitResult fit_dense_baseline(const ScalarMap& f, std::span<const double> lo,
                             std::span<const double> hi, std::size_t width, DenseMethod method,
                             std::uint64_t seed) {
  if (lo.size() != hi.size() || lo.empty()) throw SpecError("dense baseline needs a box");
  if (method == DenseMethod::pwl_global_1d) {
    if (lo.size() != 1) throw SpecError("pwl_global_1d applies to one-dimensional domains only");
    return fit_expert_1d([&](double z) { return f(std::span<const double>(&z, 1)); }, lo[0],
                         hi[0], width);
  }
  const std::size_t d = lo.size();
  auto to_box = [lo, hi](std::span<const double> u) {
    Vector x(u.size());
    for (std::size_t k = 0; k < u.size(); ++k) x[k] = lo[k] + (hi[k] - lo[k]) * u[k];
    return x;
  };
  FitResult unit = fit_ls_random_features(
      [&](std::span<const double> u) { return f(to_box(u)); }, d, width, 10 * width, seed);
  // Fold the box-to-unit affine map into the first layer.
  std::vector<double> w(d * d, 0.0);
  std::vector<double> b(d);
  for (std::size_t k = 0; k < d; ++k) {
    w[k * d + k] = 1.0 / (hi[k] - lo[k]);
    b[k] = -lo[k] / (hi[k] - lo[k]);
  }
  return {compose(unit.net, affine_network(d, d, std::move(w), std::move(b))), unit.sup_error};
}

RateReport fit_rate(std::span<const RatePoint> points) {
  if (points.size() < 3) throw FitError("rate fit needs at least 3 points");
  RateReport r;
  r.points.assign(points.begin(), points.end());
  double sx = 0.0;
  double sy = 0.0;
  for (std::size_t k = 0; k < points.size(); ++k) {
    if (k > 0 && !(points[k].m > points[k - 1].m))
      throw FitError("rate fit needs strictly increasing widths");
    if (!(points[k].error > 0.0))
      throw FitError("rate fit needs positive errors (clamp exact zeros first)");
    sx += std::log(points[k].m);
    sy += std::log(points[k].error);
    r.any_clamped = r.any_clamped || points[k].clamped;
  }
  const auto n = static_cast<double>(points.size());
  const double mx = sx / n;
  const double my = sy / n;
  double sxx = 0.0;
  double sxy = 0.0;
  for (const auto& p : points) {
    const double dx = std::log(p.m) - mx;
    sxx += dx * dx;
    sxy += dx * (std::log(p.error) - my);
  }
  r.slope = sxy / sxx;
  r.intercept = my - r.slope * mx;
  double ss = 0.0;
  for (const auto& p : points) {
    const double e = std::log(p.error) - (r.intercept + r.slope * std::log(p.m));
    ss += e * e;
  }
  r.residual = std::sqrt(ss / n);
  return r;
}

std::vector<RatePoint> clamp_zero_errors(std::span<const RatePoint> points) {
  std::vector<RatePoint> out(points.begin(), points.end());
  for (auto& p : out) {
    if (!(p.error > 0.0)) {
      p.error = kRateErrorFloor;
      p.clamped = true;
    }
  }
  return out;
}

}  // namespace moeapprox
