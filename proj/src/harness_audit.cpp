#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "moeapprox/errors.hpp"
#include "moeapprox/harness.hpp"

namespace moeapprox {

namespace {

struct PointOutcome {
  bool excluded = false;
  std::vector<RoutingWitness> failures;
};

PointOutcome audit_point(const MoeNetwork& net, const PiecewiseTarget& target,
                         const GridSpec& grid, std::size_t idx) {
  PointOutcome out;
  const Vector x = grid.point(idx);
  if (grid.excluded(x)) {
    out.excluded = true;
    return out;
  }
  MoeTrace trace;
  net.eval(x, &trace);
  for (std::size_t l = 0; l < target.factor_count(); ++l) {
    const std::size_t layer = 2 * l + 1;
    if (layer >= trace.selected.size())
      throw ShapeError("network has no routing layer for factor " + std::to_string(l));
    const std::size_t chosen = trace.selected[layer].front();
    const auto x_l = target.factor_slice(x, l);
    std::vector<std::size_t> admissible;
    try {
      admissible = region_index(target, l, x_l);
    } catch (const DomainError&) {
    }
    if (std::find(admissible.begin(), admissible.end(), chosen) == admissible.end())
      out.failures.push_back({x, l, chosen, std::move(admissible)});
  }
  return out;
}

void finish(RoutingAuditSummary& s) {
  s.pass_fraction =
      s.checked == 0 ? 0.0 : static_cast<double>(s.passed) / static_cast<double>(s.checked);
}

double tent(double x, std::size_t i) {
  const double lo = static_cast<double>(i);
  const double hi = static_cast<double>(i + 1);
  if (!(lo < x && x < hi)) return 0.0;
  return std::min(x - lo, hi - x);
}

}  // namespace

RoutingAuditSummary routing_audit(const MoeNetwork& net, const PiecewiseTarget& target,
                                  const GridSpec& grid) {
  grid.validate();
  RoutingAuditSummary s;
  const auto n = static_cast<std::ptrdiff_t>(grid.size());
  // Failures are kept per grid index so the witness list matches the serial order.
  std::vector<std::pair<std::size_t, RoutingWitness>> failures;
  bool failed = false;
  std::string failure;
#pragma omp parallel
  {
    RoutingAuditSummary local;
    std::vector<std::pair<std::size_t, RoutingWitness>> local_fail;
#pragma omp for schedule(static)
    for (std::ptrdiff_t k = 0; k < n; ++k) {
      const auto idx = static_cast<std::size_t>(k);
      try {
        PointOutcome o = audit_point(net, target, grid, idx);
        if (o.excluded) {
          ++local.excluded;
          continue;
        }
        ++local.checked;
        if (o.failures.empty()) {
          ++local.passed;
        } else if (local_fail.size() < kMaxWitnesses) {
          for (auto& w : o.failures) local_fail.emplace_back(idx, std::move(w));
        }
      } catch (const std::exception& ex) {
#pragma omp critical(moeapprox_audit_fail)
        {
          failed = true;
          failure = ex.what();
        }
      }
    }
#pragma omp critical(moeapprox_audit_reduce)
    {
      s.checked += local.checked;
      s.passed += local.passed;
      s.excluded += local.excluded;
      for (auto& f : local_fail) failures.push_back(std::move(f));
    }
  }
  if (failed) throw Error("routing audit failed: " + failure);
  std::stable_sort(failures.begin(), failures.end(), [](const auto& a, const auto& b) {
    return a.first < b.first || (a.first == b.first && a.second.factor < b.second.factor);
  });
  for (auto& f : failures) {
    if (s.witnesses.size() == kMaxWitnesses) break;
    s.witnesses.push_back(std::move(f.second));
  }
  finish(s);
  return s;
}

namespace serial {

RoutingAuditSummary routing_audit(const MoeNetwork& net, const PiecewiseTarget& target,
                                  const GridSpec& grid) {
  grid.validate();
  RoutingAuditSummary s;
  for (std::size_t idx = 0; idx < grid.size(); ++idx) {
    PointOutcome o = audit_point(net, target, grid, idx);
    if (o.excluded) {
      ++s.excluded;
      continue;
    }
    ++s.checked;
    if (o.failures.empty()) {
      ++s.passed;
      continue;
    }
    for (auto& w : o.failures)
      if (s.witnesses.size() < kMaxWitnesses) s.witnesses.push_back(std::move(w));
  }
  finish(s);
  return s;
}

}  // namespace serial

MoeNetwork corrupt_gate_rows(const MoeNetwork& net, std::size_t a, std::size_t b) {
  std::vector<MoeLayer> layers;
  for (const auto& layer : net.layers()) {
    const GatingNetwork& g = layer.gating();
    const bool routes = g.mode() == GatingNetwork::Mode::linear &&
                        std::any_of(g.weight().begin(), g.weight().end(),
                                    [](double w) { return w != 0.0; });
    if (!routes) {
      layers.push_back(layer);
      continue;
    }
    const std::size_t E = g.expert_count();
    const std::size_t in = g.input_dim();
    if (a >= E || b >= E) throw SpecError("corrupt_gate rows out of range");
    std::vector<double> w = g.weight();
    for (std::size_t c = 0; c < in; ++c) std::swap(w[a * in + c], w[b * in + c]);
    layers.emplace_back(GatingNetwork::linear(E, in, std::move(w)), layer.experts(),
                        layer.top_k());
  }
  return MoeNetwork(net.embed(), std::move(layers), net.readout());
}

std::size_t matched_dense_width(std::size_t active_params, std::size_t pieces) {
  // A two-layer 1-input, 1-output network of width w has 3w + 1 parameters.
  std::size_t w = active_params <= 1 ? 2 : std::max<std::size_t>(2, (active_params - 1 + 2) / 3);
  // A knot on a kink would make the dense interpolant exact there.
  while (pieces > 1 && std::gcd(w - 1, pieces) != 1) ++w;
  return w;
}

ComparisonReport compare_moe_dense(const PiecewiseTarget& target,
                                   std::span<const std::size_t> widths, std::size_t grid_points,
                                   DenseMethod method, std::uint64_t seed) {
  if (target.kind() != PiecewiseTarget::Kind::cube_grid || target.factor_count() != 1)
    throw ConfigError("compare needs a one-factor cube-grid target (a 1-d slice)");
  const double hi = static_cast<double>(target.pieces(0));
  GridSpec grid = GridSpec::uniform(0.0, hi, grid_points, 1);
  grid.exclude = target_grid(target, 2, 1e-12).exclude;
  grid.boundary_band = 1e-12;

  const VectorMap f = [&](std::span<const double> x) { return eval_target(target, x); };
  const ScalarMap f_scalar = [&](std::span<const double> x) { return eval_target(target, x)[0]; };
  const double lo_box[] = {0.0};
  const double hi_box[] = {hi};

  ComparisonReport report;
  report.grid_points = grid.size();
  std::vector<RatePoint> moe_points;
  std::vector<RatePoint> dense_points;
  for (std::size_t m : widths) {
    const Construction c = assemble_warmup_moe(target, m);
    const GridMax moe = grid_max_error(
        f, [&](std::span<const double> x) { return c.net.eval(x); }, grid);
    ComparisonRow row;
    row.m = m;
    row.moe_error = moe.value;
    row.moe_active_params = c.report.active_params;
    row.dense_width = matched_dense_width(
        row.moe_active_params, method == DenseMethod::pwl_global_1d ? target.pieces(0) : 1);
    const FitResult dense =
        fit_dense_baseline(f_scalar, lo_box, hi_box, row.dense_width, method, seed);
    row.dense_params = dense.net.param_count();
    if (row.dense_params < row.moe_active_params)
      throw AccountingError("dense arm has fewer parameters than the MoE arm");
    const FfnNetwork& dn = dense.net;
    row.dense_error =
        grid_max_error(f, [&](std::span<const double> x) { return dn.eval(x); }, grid).value;
    row.clamped = !(row.moe_error > 0.0) || !(row.dense_error > 0.0);
    moe_points.push_back({static_cast<double>(row.m), row.moe_error, false});
    dense_points.push_back({static_cast<double>(row.dense_width), row.dense_error, false});
    report.rows.push_back(row);
  }
  report.moe_rate = fit_rate(clamp_zero_errors(moe_points));
  report.dense_rate = fit_rate(clamp_zero_errors(dense_points));
  report.slope_gap = report.moe_rate.slope - report.dense_rate.slope;
  return report;
}

GridSpec sweep_grid(const PiecewiseTarget& target, std::size_t m, std::size_t min_points,
                    double boundary_band) {
  if (target.kind() != PiecewiseTarget::Kind::cube_grid)
    return target_grid(target, min_points, boundary_band);
  GridSpec g = target_grid(target, 2, boundary_band);
  for (std::size_t l = 0; l < target.factor_count(); ++l) {
    // Knot midpoints of a piece sit at multiples of 1 / (2 (m - 1)).
    const std::size_t base = 2 * target.pieces(l) * (m - 1);
    const std::size_t steps = std::max<std::size_t>(1, min_points > 1 ? min_points - 1 : 1);
    const std::size_t count = (steps + base - 1) / base * base;
    g.counts[l] = count + 1;
  }
  return g;
}

RateSweep rate_sweep(const PiecewiseTarget& target, std::span<const std::size_t> widths,
                     std::size_t min_points, double boundary_band,
                     const ConstructionOptions& options) {
  RateSweep sweep;
  std::vector<RatePoint> pts;
  const VectorMap f = [&](std::span<const double> x) { return eval_target(target, x); };
  for (std::size_t m : widths) {
    const Construction c = assemble(target, m, options);
    const GridSpec grid = sweep_grid(target, m, min_points, boundary_band);
    const ErrorReport e =
        estimate_linf(f, [&](std::span<const double> x) { return c.net.eval(x); }, grid);
    RatePointRecord r;
    r.m = m;
    r.error = e.sup_error;
    r.active_params = c.report.active_params;
    r.construction = c.report.construction;
    r.refinement_ok = e.refinement_ok;
    pts.push_back({static_cast<double>(m), e.sup_error, false});
    sweep.points.push_back(r);
  }
  const auto clamped = clamp_zero_errors(pts);
  for (std::size_t k = 0; k < clamped.size(); ++k) sweep.points[k].clamped = clamped[k].clamped;
  sweep.rate = fit_rate(clamped);
  return sweep;
}

GadgetAudit verify_gadgets(std::size_t experts, std::size_t points, std::uint64_t seed) {
  const FfnNetwork gadget = build_indicator_gadget(experts);
  std::vector<double> xs;
  xs.reserve(points + 2 * experts + 1);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, static_cast<double>(experts));
  for (std::size_t k = 0; k < points; ++k) xs.push_back(unit(rng));
  for (std::size_t k = 0; k <= 2 * experts; ++k) xs.push_back(0.5 * static_cast<double>(k));

  GadgetAudit a;
  a.experts = experts;
  a.points = xs.size();
  for (double x : xs) {
    const double in[] = {x};
    const Vector tau = gadget.eval(in);
    for (std::size_t i = 0; i < experts; ++i) {
      const bool inside = static_cast<double>(i) < x && x < static_cast<double>(i + 1);
      const bool sign_ok = (tau[i] > 0.0) == inside && (inside || tau[i] == 0.0);
      const bool value_ok = tau[i] == tent(x, i);
      if (!sign_ok) ++a.sign_failures;
      if (!value_ok) ++a.value_failures;
      if ((!sign_ok || !value_ok) && a.first_failure.empty()) a.first_failure = {x};
    }
  }
  return a;
}

}  // namespace moeapprox
