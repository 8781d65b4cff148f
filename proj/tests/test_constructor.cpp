#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "moeapprox/constructor.hpp"
#include "moeapprox/errors.hpp"
#include "moeapprox/harness.hpp"
#include "support.hpp"

using namespace moeapprox;
using testsupport::ulp_distance;

namespace {

/// Closed-form tent: positive exactly on (i-1, i), peak 1/2 at the midpoint.
double tent(std::size_t i, double x) {
  const double lo = static_cast<double>(i) - 1.0;
  const double hi = static_cast<double>(i);
  if (!(x > lo && x < hi)) return 0.0;
  return std::min(x - lo, hi - x);
}

PiecewiseTarget circle_sin(ChartKind kind) {
  TargetSpec s;
  s.name = "sin_circle";
  s.experts = 4;
  s.charts = kind;
  s.charts_set = true;
  return make_target(s);
}

PiecewiseTarget torus_sin() {
  TargetSpec s;
  s.name = "sin_torus";
  s.experts = 4;
  return make_target(s);
}

void check_shape(const Construction& c, const char* name, std::size_t layers, std::size_t experts,
                 std::size_t depth) {
  CHECK(c.report.construction == name);
  CHECK(c.net.depth() == layers);
  CHECK(c.report.layers == layers);
  CHECK(c.report.experts == experts);
  CHECK(c.report.expert_depth == depth);
  std::size_t routed_depth = 0;
  for (const auto& layer : c.net.layers()) {
    CHECK(layer.top_k() == 1);
    for (const auto& e : layer.experts()) routed_depth = std::max(routed_depth, e.depth());
  }
  CHECK(routed_depth == depth);
  REQUIRE(c.report.layer_widths.size() == c.net.depth());
  for (std::size_t k = 0; k < c.net.depth(); ++k) {
    std::size_t w = 0;
    for (const auto& e : c.net.layers()[k].experts()) w = std::max(w, e.width());
    CHECK(c.report.layer_widths[k] == w);
  }
  CHECK(c.report.active_params == active_param_count(c.net));
  CHECK(c.report.total_params == total_param_count(c.net));
}

}  // namespace

TEST_CASE("indicator gadget examples") {
  const FfnNetwork g = build_indicator_gadget(3);
  CHECK(g.input_dim() == 1);
  CHECK(g.output_dim() == 3);
  CHECK(g.width() == 9);
  CHECK(g.depth() == 2);
  const double a[] = {1.5};
  const double b[] = {2.0};
  const double c[] = {0.25};
  CHECK(g.eval(a) == Vector{0.0, 0.5, 0.0});
  CHECK(g.eval(b) == Vector{0.0, 0.0, 0.0});
  CHECK(g.eval(c) == Vector{0.25, 0.0, 0.0});
}

TEST_CASE("indicator gadget equals the closed-form tent bit for bit") {
  const std::size_t e = 8;
  const FfnNetwork g = build_indicator_gadget(e);
  std::mt19937_64 rng(41);
  std::uniform_real_distribution<double> u(-0.5, 8.5);
  std::size_t failures = 0;
  for (int k = 0; k < 20000; ++k) {
    const double x[] = {k % 10 == 0 ? 0.5 * (k % 37) : u(rng)};
    const Vector t = g.eval(x);
    for (std::size_t i = 1; i <= e; ++i) {
      const double want = tent(i, x[0]);
      if (t[i - 1] != want) ++failures;
      if ((t[i - 1] > 0.0) != (x[0] > i - 1.0 && x[0] < static_cast<double>(i))) ++failures;
    }
  }
  CHECK(failures == 0);
}

TEST_CASE("partition approximators certify on the circle") {
  const Atlas a = build_circle_atlas(4, 0.25, ChartKind::linear);
  CertificationOptions o;
  const PartitionFit p = fit_partition_approximators(a, o);
  CHECK(p.target_tol == doctest::Approx(1.0 / 32.0));
  CHECK(p.certified_tol <= p.target_tol);
  CHECK(p.certified_tol <= 1.0 / 16.0);
  CHECK(p.verification_points >= 4 * o.audit_samples);
  CHECK(p.tau_net.output_dim() == 4);
  REQUIRE_FALSE(p.history.empty());
  CHECK(p.history.back().first == p.width);
  for (std::size_t k = 1; k < p.history.size(); ++k) CHECK(p.history[k].first == 2 * p.history[k - 1].first);
  // Independent look at a different point set.
  CHECK(partition_fit_error(a, p.tau_net, 10007) <= 1.0 / 16.0);
}

TEST_CASE("under-width certification fails with the best tolerance") {
  const Atlas a = build_circle_atlas(4, 0.25, ChartKind::linear);
  CertificationOptions o;
  o.initial_width = 2;
  o.max_width = 2;
  try {
    fit_partition_approximators(a, o);
    FAIL("expected a certification error");
  } catch (const CertificationError& e) {
    CHECK(e.best_width() == 2);
    CHECK(e.best_tolerance() > 1.0 / 32.0);
    CHECK(std::isfinite(e.best_tolerance()));
  }
}

TEST_CASE("routing block: prelayer keeps x and the gate reads tau") {
  const FfnNetwork tau = build_indicator_gadget(3);
  const RoutingBlock rb = build_routing_block(tau, 1, 3, RoutingLayout{{0}, {true}});
  CHECK(rb.state_dim == 1);
  CHECK(rb.experts == 3);
  REQUIRE(rb.gate_matrix.size() == 3 * 4);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 4; ++c) CHECK(rb.gate_matrix[r * 4 + c] == (c == r + 1 ? 1.0 : 0.0));
  const GatingNetwork g = rb.gating();
  for (double x : {0.0, 0.3, 1.0, 1.7, 2.5, 3.0}) {
    const double in[] = {x};
    const Vector h = rb.prelayer.eval(in);
    REQUIRE(h.size() == 4);
    CHECK(h[0] == x);
    CHECK(g.scores(h) == tau.eval(in));
  }
}

TEST_CASE("warmup construction on fig3") {
  const PiecewiseTarget t = fig3_target();
  const Construction c = assemble_warmup_moe(t, 256);
  check_shape(c, "thm4", 4, 3, 2);
  for (const auto& fr : c.report.factor_reports) {
    CHECK(fr.routing_exact);
    CHECK(fr.expert_fit_errors.size() == 3);
  }

  const double p[] = {0.5, 2.5};
  MoeTrace trace;
  c.net.eval(p, &trace);
  CHECK(trace.selected[c.report.layout[0].expert_layer] == std::vector<std::size_t>{0});
  CHECK(trace.selected[c.report.layout[1].expert_layer] == std::vector<std::size_t>{2});

  const double q[] = {1.0 + 1e-6, 2.0 - 1e-6};
  c.net.eval(q, &trace);
  CHECK(trace.selected[c.report.layout[0].expert_layer] == std::vector<std::size_t>{1});
  CHECK(trace.selected[c.report.layout[1].expert_layer] == std::vector<std::size_t>{1});

  const double r[] = {0.5, 0.5};
  const Vector y = c.net.eval(r);
  CHECK(std::abs(y[0] - 0.25) <= c.report.max_expert_fit_error + 1e-12);
  CHECK(std::abs(y[1] - 0.0625) <= c.report.max_expert_fit_error + 1e-12);

  const ErrorChainReport chain = audit_error_chain(c, t, target_grid(t, 129));
  CHECK(chain.holds);
  CHECK(chain.end_to_end <= c.report.max_expert_fit_error + kErrorChainSlack);
}

TEST_CASE("warmup pass-through is exact") {
  const PiecewiseTarget t = fig3_target();
  const Construction c = assemble_warmup_moe(t, 16);
  std::mt19937_64 rng(42);
  std::uniform_real_distribution<double> u(0.0, 3.0);
  for (int k = 0; k < 500; ++k) {
    const double x[] = {u(rng), u(rng)};
    MoeTrace trace;
    c.net.eval(x, &trace);
    for (const auto& s : trace.states) {
      CHECK(s[0] == x[0]);
      CHECK(s[1] == x[1]);
    }
  }
}

TEST_CASE("shallow constructions on the circle") {
  const PiecewiseTarget lin = circle_sin(ChartKind::linear);
  const Construction cor1 = assemble_shallow_moe(lin, 64);
  check_shape(cor1, "cor1", 2, 4, 2);
  CHECK(cor1.report.factor_reports[0].certified_tol <= 1.0 / 32.0);
  const GridSpec grid = target_grid(lin, 2048);
  CHECK(audit_error_chain(cor1, lin, grid).holds);
  CHECK(routing_audit(cor1.net, lin, grid).all_pass());

  const PiecewiseTarget ang = circle_sin(ChartKind::angle);
  const Construction thm2 = assemble_shallow_moe(ang, 64);
  check_shape(thm2, "thm2", 2, 4, 3);
  CHECK_FALSE(thm2.report.factor_reports[0].chart_fit_errors.empty());
  CHECK(audit_error_chain(thm2, ang, grid).holds);
  CHECK(routing_audit(thm2.net, ang, grid).all_pass());
}

TEST_CASE("constant target is reproduced exactly regardless of routing") {
  TargetSpec s;
  s.name = "constant";
  s.value = 1.75;
  const PiecewiseTarget t = make_target(s);
  const Construction c = assemble_shallow_moe(t, 16);
  const ErrorChainReport chain = audit_error_chain(c, t, target_grid(t, 1024));
  CHECK(chain.end_to_end <= 1e-12);
  CHECK(chain.holds);
}

TEST_CASE("single chart reduces to a plain fit") {
  const Atlas seg = build_segment_atlas(1, 0.25);
  std::vector<ScalarMap> g{[](std::span<const double> u) { return std::sin(3.0 * u[0]); }};
  const PiecewiseTarget t = build_manifold_target({ManifoldFactor{seg, g, std::nullopt}}, "seg");
  const Construction c = assemble_shallow_moe(t, 32);
  CHECK(c.report.experts == 1);
  const ErrorChainReport chain = audit_error_chain(c, t, target_grid(t, 4097));
  CHECK(chain.holds);
  CHECK(testsupport::rel_close(chain.end_to_end, c.report.factor_reports[0].local_fit_errors[0], 0.2));
}

TEST_CASE("deep construction on the torus") {
  const PiecewiseTarget t = torus_sin();
  const Construction c = assemble_deep_moe(t, 32);
  check_shape(c, "thm3", 4, 4, 3);
  CHECK(c.net.embed().has_value());
  CHECK(c.net.readout().has_value());
  for (const auto& fr : c.report.factor_reports) CHECK(fr.certified_tol <= fr.target_tol);

  const GridSpec grid = target_grid(t, 96);
  CHECK(audit_error_chain(c, t, grid).holds);
  const RoutingAuditSummary par = routing_audit(c.net, t, grid);
  const RoutingAuditSummary ser = serial::routing_audit(c.net, t, grid);
  CHECK(par.all_pass());
  CHECK(par.checked == ser.checked);
  CHECK(par.passed == ser.passed);

  // Raw coordinates drift by at most one ulp per layer.
  for (const auto& x : t.factor(0).atlas->sample(400)) {
    const Vector y = t.factor(1).atlas->sample(400)[7];
    Vector p = x;
    p.insert(p.end(), y.begin(), y.end());
    MoeTrace trace;
    c.net.eval(p, &trace);
    for (std::size_t k = 0; k < trace.states.size(); ++k)
      for (std::size_t i = 0; i < 4; ++i) CHECK(ulp_distance(trace.states[k][i], p[i]) <= k + 1);
  }
}

TEST_CASE("identical pieces make the output independent of routing") {
  TargetSpec s;
  s.name = "constant";
  s.value = -0.5;
  s.experts = 5;
  const PiecewiseTarget t = make_target(s);
  const Construction c = assemble(t, 8);
  const MoeNetwork bad = corrupt_gate_rows(c.net, 0, 3);
  for (const auto& p : t.factor(0).atlas->sample(257)) CHECK(bad.eval(p) == c.net.eval(p));
}

TEST_CASE("assemble dispatches on the target kind") {
  CHECK(assemble(fig3_target(), 8).report.construction == "thm4");
  CHECK(assemble(circle_sin(ChartKind::linear), 8).report.construction == "cor1");
  CHECK_THROWS(assemble_warmup_moe(circle_sin(ChartKind::linear), 8));
  CHECK_THROWS(assemble_deep_moe(fig3_target(), 8));
}

TEST_CASE("construction report serializes") {
  const Construction c = assemble_warmup_moe(fig3_target(), 8);
  const auto j = to_json(c.report);
  CHECK(j.at("construction") == "thm4");
  CHECK(j.at("active_params") == c.report.active_params);
  CHECK(j.at("factor_reports").size() == 2);
}
