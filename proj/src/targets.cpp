#include "moeapprox/targets.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "moeapprox/errors.hpp"

namespace moeapprox {

namespace {

constexpr double kPi = std::numbers::pi;

/// Signed angle difference wrapped to (-pi, pi].
double wrap_angle(double a) {
  a = std::remainder(a, 2.0 * kPi);
  if (a <= -kPi) a += 2.0 * kPi;
  return a;
}

class ArcChart final : public Chart {
 public:
  ArcChart(double center_angle, double half_width, ChartKind kind)
      : theta_(center_angle), half_(half_width), kind_(kind) {
    if (kind_ == ChartKind::linear) {
      params_.ambient_dim = 2;
      params_.intrinsic_dim = 1;
      params_.center = {std::cos(theta_), std::sin(theta_)};
      params_.basis = {-std::sin(theta_), std::cos(theta_)};
      const double s = std::sin(half_);
      params_.shift = {s};
      params_.scale = 1.0 / (2.0 * s);
    }
  }

  std::size_t ambient_dim() const override { return 2; }
  std::size_t intrinsic_dim() const override { return 1; }

  bool contains(std::span<const double> x) const override {
    return std::abs(offset(x)) < half_;
  }

  Vector forward(std::span<const double> x) const override {
    if (kind_ == ChartKind::linear) return params_.apply(x);
    return {(offset(x) + half_) / (2.0 * half_)};
  }

  Vector inverse(std::span<const double> u) const override {
    if (kind_ == ChartKind::linear) {
      const double tangent = u[0] / params_.scale - params_.shift[0];
      const double normal = std::sqrt(std::max(0.0, 1.0 - tangent * tangent));
      return {normal * params_.center[0] + tangent * params_.basis[0],
              normal * params_.center[1] + tangent * params_.basis[1]};
    }
    return circle_point(theta_ + 2.0 * half_ * u[0] - half_);
  }

  double boundary_distance(std::span<const double> x) const override {
    return std::abs(std::abs(offset(x)) - half_);
  }

  const LinearChartParams* linear() const override {
    return kind_ == ChartKind::linear ? &params_ : nullptr;
  }

  double offset(std::span<const double> x) const {
    return wrap_angle(std::atan2(x[1], x[0]) - theta_);
  }
  double half_width() const { return half_; }

 private:
  double theta_;
  double half_;
  ChartKind kind_;
  LinearChartParams params_;
};

/// Chart on R^4 built from two circle charts acting on (x0,x1) and (x2,x3).
class ProductChart final : public Chart {
 public:
  ProductChart(std::shared_ptr<const Chart> a, std::shared_ptr<const Chart> b)
      : a_(std::move(a)), b_(std::move(b)) {
    const auto* pa = a_->linear();
    const auto* pb = b_->linear();
    if (pa && pb && pa->scale == pb->scale) {
      params_.ambient_dim = 4;
      params_.intrinsic_dim = 2;
      params_.scale = pa->scale;
      params_.basis.assign(8, 0.0);
      params_.basis[0 * 2 + 0] = pa->basis[0];
      params_.basis[1 * 2 + 0] = pa->basis[1];
      params_.basis[2 * 2 + 1] = pb->basis[0];
      params_.basis[3 * 2 + 1] = pb->basis[1];
      params_.center = {pa->center[0], pa->center[1], pb->center[0], pb->center[1]};
      params_.shift = {pa->shift[0], pb->shift[0]};
      linear_ = true;
    }
  }

  std::size_t ambient_dim() const override { return 4; }
  std::size_t intrinsic_dim() const override { return 2; }
  bool contains(std::span<const double> x) const override {
    return a_->contains(x.subspan(0, 2)) && b_->contains(x.subspan(2, 2));
  }
  Vector forward(std::span<const double> x) const override {
    if (linear_) return params_.apply(x);
    return {a_->forward(x.subspan(0, 2))[0], b_->forward(x.subspan(2, 2))[0]};
  }
  Vector inverse(std::span<const double> u) const override {
    Vector p = a_->inverse(u.subspan(0, 1));
    const Vector q = b_->inverse(u.subspan(1, 1));
    p.insert(p.end(), q.begin(), q.end());
    return p;
  }
  double boundary_distance(std::span<const double> x) const override {
    return std::min(a_->boundary_distance(x.subspan(0, 2)), b_->boundary_distance(x.subspan(2, 2)));
  }
  const LinearChartParams* linear() const override { return linear_ ? &params_ : nullptr; }

 private:
  std::shared_ptr<const Chart> a_;
  std::shared_ptr<const Chart> b_;
  LinearChartParams params_;
  bool linear_ = false;
};

/// Open interval (c - h, c + h) of the real line, phi(x) = (x - c + h) / 2h.
class IntervalChart final : public Chart {
 public:
  IntervalChart(double center, double half_width) : center_(center), half_(half_width) {
    params_.ambient_dim = 1;
    params_.intrinsic_dim = 1;
    params_.scale = 1.0 / (2.0 * half_);
    params_.basis = {1.0};
    params_.center = {center_};
    params_.shift = {half_};
  }
  std::size_t ambient_dim() const override { return 1; }
  std::size_t intrinsic_dim() const override { return 1; }
  bool contains(std::span<const double> x) const override {
    return std::abs(x[0] - center_) < half_;
  }
  Vector forward(std::span<const double> x) const override { return params_.apply(x); }
  Vector inverse(std::span<const double> u) const override {
    return {u[0] / params_.scale - half_ + center_};
  }
  double boundary_distance(std::span<const double> x) const override {
    return std::abs(std::abs(x[0] - center_) - half_);
  }
  const LinearChartParams* linear() const override { return &params_; }
  double center() const { return center_; }
  double half_width() const { return half_; }

 private:
  double center_;
  double half_;
  LinearChartParams params_;
};

std::vector<Vector> circle_samples(std::size_t n) {
  std::vector<Vector> pts;
  pts.reserve(n);
  for (std::size_t k = 0; k < n; ++k)
    pts.push_back(circle_point(2.0 * kPi * static_cast<double>(k) / static_cast<double>(n)));
  return pts;
}

std::vector<ScalarMap> circle_partition(const std::vector<std::shared_ptr<const ArcChart>>& arcs) {
  std::vector<ScalarMap> rho;
  for (std::size_t i = 0; i < arcs.size(); ++i) {
    rho.push_back([arcs, i](std::span<const double> x) {
      double total = 0.0;
      double mine = 0.0;
      for (std::size_t j = 0; j < arcs.size(); ++j) {
        const double b = bump(arcs[j]->offset(x) / arcs[j]->half_width());
        total += b;
        if (j == i) mine = b;
      }
      return mine / total;
    });
  }
  return rho;
}

std::vector<std::shared_ptr<const ArcChart>> make_arcs(std::size_t charts, double overlap_frac,
                                                       ChartKind kind) {
  if (charts < 3) throw SpecError("circle atlas needs at least 3 charts");
  if (!(overlap_frac > 0.0 && overlap_frac < 0.5))
    throw SpecError("overlap_frac must lie in (0, 0.5) for injective charts");
  const double half = kPi / static_cast<double>(charts) * (1.0 + overlap_frac);
  if (!(half < kPi / 2.0)) throw SpecError("arc too wide for an injective tangent chart");
  std::vector<std::shared_ptr<const ArcChart>> arcs;
  for (std::size_t i = 0; i < charts; ++i)
    arcs.push_back(std::make_shared<const ArcChart>(
        2.0 * kPi * static_cast<double>(i) / static_cast<double>(charts), half, kind));
  return arcs;
}

}  // namespace

Vector LinearChartParams::apply(std::span<const double> x) const {
  Vector u(intrinsic_dim, 0.0);
  for (std::size_t k = 0; k < intrinsic_dim; ++k) {
    double acc = 0.0;
    for (std::size_t r = 0; r < ambient_dim; ++r)
      acc += basis[r * intrinsic_dim + k] * (x[r] - center[r]);
    u[k] = scale * (acc + shift[k]);
  }
  return u;
}

Atlas::Atlas(std::vector<std::shared_ptr<const Chart>> charts, std::vector<ScalarMap> partition,
             Sampler sampler, ManifoldDomain domain, std::string name)
    : charts_(std::move(charts)),
      partition_(std::move(partition)),
      sampler_(std::move(sampler)),
      domain_(std::move(domain)),
      name_(std::move(name)) {
  if (charts_.empty()) throw SpecError("atlas needs at least one chart");
  if (partition_.size() != charts_.size())
    throw SpecError("atlas needs one partition function per chart");
  for (const auto& c : charts_)
    if (c->ambient_dim() != ambient_dim() || c->intrinsic_dim() != intrinsic_dim())
      throw SpecError("atlas charts disagree on dimensions");
}

Vector Atlas::partition_values(std::span<const double> x) const {
  Vector v(size());
  for (std::size_t i = 0; i < size(); ++i) v[i] = partition_[i](x);
  return v;
}

std::vector<std::size_t> Atlas::charts_containing(std::span<const double> x) const {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < size(); ++i)
    if (charts_[i]->contains(x)) idx.push_back(i);
  return idx;
}

double Atlas::boundary_distance(std::span<const double> x) const {
  double d = INFINITY;
  for (const auto& c : charts_) d = std::min(d, c->boundary_distance(x));
  return d;
}

double bump(double t) {
  if (!(std::abs(t) < 1.0)) return 0.0;
  return std::exp(-1.0 / (1.0 - t * t));
}

Vector circle_point(double theta) { return {std::cos(theta), std::sin(theta)}; }

Atlas build_circle_atlas(std::size_t charts, double overlap_frac, ChartKind kind) {
  auto arcs = make_arcs(charts, overlap_frac, kind);
  std::vector<std::shared_ptr<const Chart>> generic(arcs.begin(), arcs.end());
  auto rho = circle_partition(arcs);
  ManifoldDomain domain{{0.0}, {2.0 * kPi},
                        [](std::span<const double> p) { return circle_point(p[0]); }};
  return Atlas(std::move(generic), std::move(rho), circle_samples, std::move(domain),
               kind == ChartKind::linear ? "circle-linear" : "circle-angle");
}

Atlas build_segment_atlas(std::size_t charts, double overlap_frac) {
  if (charts < 1) throw SpecError("segment atlas needs at least 1 chart");
  if (!(overlap_frac > 0.0 && overlap_frac < 0.5))
    throw SpecError("overlap_frac must lie in (0, 0.5)");
  const double half = 0.5 / static_cast<double>(charts) * (1.0 + overlap_frac);
  std::vector<std::shared_ptr<const Chart>> generic;
  std::vector<std::shared_ptr<const IntervalChart>> cells;
  for (std::size_t i = 0; i < charts; ++i) {
    const double c = (static_cast<double>(i) + 0.5) / static_cast<double>(charts);
    cells.push_back(std::make_shared<const IntervalChart>(c, half));
    generic.push_back(cells.back());
  }
  std::vector<ScalarMap> rho;
  for (std::size_t i = 0; i < charts; ++i) {
    rho.push_back([cells, i](std::span<const double> x) {
      double total = 0.0;
      double mine = 0.0;
      for (std::size_t j = 0; j < cells.size(); ++j) {
        const double b = bump((x[0] - cells[j]->center()) / cells[j]->half_width());
        total += b;
        if (j == i) mine = b;
      }
      return mine / total;
    });
  }
  auto sampler = [](std::size_t n) {
    std::vector<Vector> pts;
    const std::size_t count = std::max<std::size_t>(n, 2);
    for (std::size_t k = 0; k < count; ++k)
      pts.push_back({static_cast<double>(k) / static_cast<double>(count - 1)});
    return pts;
  };
  ManifoldDomain domain{{0.0}, {1.0}, [](std::span<const double> p) { return Vector{p[0]}; }};
  return Atlas(std::move(generic), std::move(rho), sampler, std::move(domain), "segment");
}

Atlas build_torus_atlas(std::size_t charts_per_circle, double overlap_frac, ChartKind kind) {
  auto arcs = make_arcs(charts_per_circle, overlap_frac, kind);
  auto rho1 = circle_partition(arcs);
  std::vector<std::shared_ptr<const Chart>> charts;
  std::vector<ScalarMap> rho;
  for (std::size_t i = 0; i < arcs.size(); ++i) {
    for (std::size_t j = 0; j < arcs.size(); ++j) {
      charts.push_back(std::make_shared<const ProductChart>(arcs[i], arcs[j]));
      rho.push_back([ri = rho1[i], rj = rho1[j]](std::span<const double> x) {
        return ri(x.subspan(0, 2)) * rj(x.subspan(2, 2));
      });
    }
  }
  auto sampler = [](std::size_t n) {
    const auto side = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(n))));
    std::vector<Vector> pts;
    pts.reserve(side * side);
    for (std::size_t a = 0; a < side; ++a) {
      for (std::size_t b = 0; b < side; ++b) {
        Vector p = circle_point(2.0 * kPi * static_cast<double>(a) / static_cast<double>(side));
        const Vector q =
            circle_point(2.0 * kPi * static_cast<double>(b) / static_cast<double>(side));
        p.insert(p.end(), q.begin(), q.end());
        pts.push_back(std::move(p));
      }
    }
    return pts;
  };
  ManifoldDomain domain{{0.0, 0.0}, {2.0 * kPi, 2.0 * kPi}, [](std::span<const double> p) {
                          Vector x = circle_point(p[0]);
                          const Vector y = circle_point(p[1]);
                          x.insert(x.end(), y.begin(), y.end());
                          return x;
                        }};
  return Atlas(std::move(charts), std::move(rho), sampler, std::move(domain),
               kind == ChartKind::linear ? "torus-linear" : "torus-angle");
}

PiecewiseTarget::PiecewiseTarget(Kind kind, std::vector<TargetFactor> factors, std::string name,
                                 int global_continuity)
    : kind_(kind), factors_(std::move(factors)), name_(std::move(name)),
      continuity_(global_continuity) {
  if (factors_.empty()) throw SpecError("target needs at least one factor");
  for (std::size_t l = 0; l < factors_.size(); ++l) {
    const auto& f = factors_[l];
    if (f.pieces.empty()) throw SpecError("factor " + std::to_string(l) + " has no pieces");
    if (kind_ == Kind::cube_grid && (f.dim != 1 || f.atlas))
      throw SpecError("cube-grid factors are one-dimensional and carry no atlas");
    if (kind_ == Kind::product_manifold) {
      if (!f.atlas) throw SpecError("manifold factor " + std::to_string(l) + " lacks an atlas");
      if (f.atlas->size() != f.pieces.size())
        throw SpecError("manifold factor needs one piece per chart");
      if (f.atlas->ambient_dim() != f.dim) throw SpecError("factor dim differs from atlas");
    }
    offsets_.push_back(input_dim_);
    input_dim_ += f.dim;
  }
}

std::span<const double> PiecewiseTarget::factor_slice(std::span<const double> x,
                                                      std::size_t l) const {
  if (x.size() != input_dim_)
    throw ShapeError("target expects " + std::to_string(input_dim_) + " coordinates, got " +
                     std::to_string(x.size()));
  return x.subspan(offsets_.at(l), factors_.at(l).dim);
}

double PiecewiseTarget::boundary_distance(std::size_t l, std::span<const double> x_l) const {
  const auto& f = factors_.at(l);
  if (f.atlas) return f.atlas->boundary_distance(x_l);
  return std::abs(x_l[0] - std::round(x_l[0]));
}

std::vector<std::size_t> region_index(const PiecewiseTarget& target, std::size_t l,
                                      std::span<const double> x_l) {
  const auto& f = target.factor(l);
  if (x_l.size() != f.dim) throw ShapeError("factor slice has wrong length");
  std::vector<std::size_t> idx;
  if (f.atlas) {
    idx = f.atlas->charts_containing(x_l);
  } else {
    const double z = x_l[0];
    for (std::size_t i = 0; i < f.pieces.size(); ++i)
      if (static_cast<double>(i) <= z && z <= static_cast<double>(i + 1)) idx.push_back(i);
  }
  if (idx.empty())
    throw DomainError("point outside every region of factor " + std::to_string(l));
  return idx;
}

Vector eval_target(const PiecewiseTarget& target, std::span<const double> x) {
  Vector y(target.factor_count());
  for (std::size_t l = 0; l < target.factor_count(); ++l) {
    const auto x_l = target.factor_slice(x, l);
    const std::size_t i = region_index(target, l, x_l).front();
    y[l] = target.factor(l).pieces[i].eval(x_l);
  }
  return y;
}

PiecewiseTarget cube_grid_target(std::vector<std::vector<std::function<double(double)>>> pieces,
                                 std::string name, std::optional<int> piece_smoothness,
                                 int global_continuity) {
  std::vector<TargetFactor> factors;
  for (auto& fl : pieces) {
    TargetFactor factor;
    factor.dim = 1;
    for (auto& fn : fl) {
      ScalarMap m = [fn](std::span<const double> z) { return fn(z[0]); };
      factor.pieces.push_back({m, m, piece_smoothness});
    }
    factors.push_back(std::move(factor));
  }
  return PiecewiseTarget(PiecewiseTarget::Kind::cube_grid, std::move(factors), std::move(name),
                         global_continuity);
}

PiecewiseTarget fig3_target() {
  std::vector<std::function<double(double)>> first;
  std::vector<std::function<double(double)>> second;
  for (int i = 1; i <= 3; ++i) {
    const double c = i;
    first.push_back([c](double z) { return c * (c - 1.0 - z) * (z - c); });
    second.push_back([c](double z) {
      const double a = c - 1.0 - z;
      const double b = z - c;
      return c * a * a * b * b;
    });
  }
  return cube_grid_target({first, second}, "fig3", std::nullopt, 0);
}

std::vector<ScalarMap> circle_angle_function(const Atlas& circle,
                                             std::function<double(double)> f) {
  std::vector<ScalarMap> local;
  for (std::size_t i = 0; i < circle.size(); ++i) {
    auto chart = circle.chart_ptr(i);
    local.push_back([chart, f](std::span<const double> u) {
      const Vector p = chart->inverse(u);
      return f(std::atan2(p[1], p[0]));
    });
  }
  return local;
}

PiecewiseTarget build_manifold_target(std::vector<ManifoldFactor> factors, std::string name,
                                      std::size_t samples, double tol) {
  std::vector<TargetFactor> out;
  for (auto& mf : factors) {
    if (mf.local.size() != mf.atlas.size())
      throw SpecError("manifold factor needs one local map per chart");
    TargetFactor tf;
    tf.dim = mf.atlas.ambient_dim();
    tf.atlas = mf.atlas;
    for (std::size_t i = 0; i < mf.local.size(); ++i) {
      auto chart = tf.atlas->chart_ptr(i);
      ScalarMap g = mf.local[i];
      ScalarMap f = [chart, g](std::span<const double> x) { return g(chart->forward(x)); };
      tf.pieces.push_back({f, g, mf.smoothness});
    }
    out.push_back(std::move(tf));
  }
  PiecewiseTarget target(PiecewiseTarget::Kind::product_manifold, std::move(out), std::move(name));
  const auto report = validate_overlap_consistency(target, samples, tol);
  if (!report.pass)
    throw ValidationError("overlap inconsistency " + std::to_string(report.witness_discrepancy) +
                              " in factor " + std::to_string(*report.witness_factor),
                          report.witness, report.witness_discrepancy);
  return target;
}

OverlapReport validate_overlap_consistency(const PiecewiseTarget& target, std::size_t samples,
                                           double tol) {
  OverlapReport report;
  auto check = [&](std::size_t l, const Vector& x_l, const std::vector<std::size_t>& idx) {
    if (idx.size() < 2) return;
    ++report.checked_points;
    const auto& pieces = target.factor(l).pieces;
    const double ref = pieces[idx.front()].eval(x_l);
    for (std::size_t k = 1; k < idx.size(); ++k) {
      const double diff = std::abs(pieces[idx[k]].eval(x_l) - ref);
      report.max_discrepancy = std::max(report.max_discrepancy, diff);
      if (report.pass && !(diff <= tol)) {
        report.pass = false;
        report.witness_factor = l;
        report.witness = x_l;
        report.witness_discrepancy = diff;
      }
    }
  };

  for (std::size_t l = 0; l < target.factor_count(); ++l) {
    const auto& f = target.factor(l);
    if (f.atlas) {
      for (const auto& p : f.atlas->sample(samples)) check(l, p, f.atlas->charts_containing(p));
    } else {
      // Closed unit cells only overlap at the shared integer endpoints.
      for (std::size_t k = 1; k < f.pieces.size(); ++k) {
        const Vector z{static_cast<double>(k)};
        check(l, z, region_index(target, l, z));
      }
    }
  }
  return report;
}

}  // namespace moeapprox
