// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.
#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "moeapprox/constructor.hpp"
#include "moeapprox/errors.hpp"
#include "moeapprox/harness.hpp"

using namespace moeapprox;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::uint64_t ulp_distance(double a, double b) {
  auto key = [](double v) {
    const auto u = std::bit_cast<std::int64_t>(v);
    return u < 0 ? std::numeric_limits<std::int64_t>::min() - u : u;
  };
  const std::int64_t ka = key(a);
  const std::int64_t kb = key(b);
  return ka > kb ? static_cast<std::uint64_t>(ka - kb) : static_cast<std::uint64_t>(kb - ka);
}

bool bit_equal(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (std::bit_cast<std::uint64_t>(a[i]) != std::bit_cast<std::uint64_t>(b[i])) return false;
  return true;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::path("acceptance_out") / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

PiecewiseTarget named(const std::string& name, std::size_t experts, std::optional<ChartKind> kind = {}) {
  TargetSpec s;
  s.name = name;
  s.experts = experts;
  if (kind) {
    s.charts = *kind;
    s.charts_set = true;
  }
  return make_target(s);
}

double tent(std::size_t i, double x) {
  const double lo = static_cast<double>(i) - 1.0;
  const double hi = static_cast<double>(i);
  if (!(x > lo && x < hi)) return 0.0;
  return std::min(x - lo, hi - x);
}

Outcome gadgets() {
  const std::size_t E = 8;
  const FfnNetwork g = build_indicator_gadget(E);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 8.0);
  std::size_t bad = 0;
  std::size_t n = 0;
  auto check = [&](double x) {
    const double in[] = {x};
    const Vector t = g.eval(in);
    for (std::size_t i = 1; i <= E; ++i) {
      const bool inside = x > static_cast<double>(i) - 1.0 && x < static_cast<double>(i);
      if ((t[i - 1] > 0.0) != inside || t[i - 1] != tent(i, x)) ++bad;
      if (!inside && std::bit_cast<std::uint64_t>(t[i - 1]) != 0) ++bad;
    }
    ++n;
  };
  for (int k = 0; k < 100000; ++k) check(u(rng));
  for (int k = 0; k <= 16; ++k) check(0.5 * k);
  const GadgetAudit lib = verify_gadgets(E, 100000, 1);
  return {bad == 0 && lib.pass(),
          std::to_string(n) + " points, " + std::to_string(bad) + " mismatches, library audit " +
              (lib.pass() ? "clean" : "dirty")};
}

Outcome warmup_routing() {
  const PiecewiseTarget t = fig3_target();
  const Construction c = assemble_warmup_moe(t, 64);
  const RoutingAuditSummary s = routing_audit(c.net, t, target_grid(t, 512, 1e-12));
  return {s.all_pass() && s.pass_fraction == 1.0,
          "pass fraction " + fmt("%.6f", s.pass_fraction) + " over " + std::to_string(s.checked) +
              " points (" + std::to_string(s.excluded) + " in band)"};
}

Outcome manifold_routing() {
  const PiecewiseTarget t = named("sin_circle", 4, ChartKind::linear);
  const Atlas& atlas = *t.factor(0).atlas;
  CertificationOptions opt;
  opt.max_width = 4096;
  opt.audit_samples = 4096;
  const PartitionFit fit = fit_partition_approximators(atlas, opt);
  const double fresh = partition_fit_error(atlas, fit.tau_net, 10007);
  const Construction c = assemble_shallow_moe(t, 64);
  const RoutingAuditSummary s = routing_audit(c.net, t, target_grid(t, 4096, 1e-12));
  const bool ok = fit.certified_tol <= 1.0 / 32.0 && fit.verification_points >= 4 * 4096 &&
                  fresh <= 1.0 / 16.0 && c.report.factor_reports[0].certified_tol <= 1.0 / 32.0 &&
                  s.all_pass();
  return {ok, "certified tol " + fmt("%.4g", fit.certified_tol) + " (<= 1/32) at width " +
                  std::to_string(fit.width) + ", fresh-sample tol " + fmt("%.4g", fresh) +
                  ", audit pass fraction " + fmt("%.6f", s.pass_fraction) + " over " +
                  std::to_string(s.checked)};
}

Outcome error_chain() {
  struct Case {
    std::string label;
    std::function<Construction()> build;
    PiecewiseTarget target;
    std::size_t grid;
  };
  const PiecewiseTarget ang = named("sin_circle", 4, ChartKind::angle);
  const PiecewiseTarget lin = named("sin_circle", 4, ChartKind::linear);
  const PiecewiseTarget torus = named("sin_torus", 4);
  const PiecewiseTarget fig3 = fig3_target();
  std::vector<Case> cases{
      {"thm2", [&] { return assemble_shallow_moe(ang, 64); }, ang, 4096},
      {"cor1", [&] { return assemble_shallow_moe(lin, 64); }, lin, 4096},
      {"thm3", [&] { return assemble_deep_moe(torus, 32); }, torus, 128},
      {"thm4", [&] { return assemble_warmup_moe(fig3, 64); }, fig3, 257},
  };
  bool ok = true;
  std::string detail;
  for (const auto& k : cases) {
    const Construction c = k.build();
    const ErrorChainReport r = audit_error_chain(c, k.target, target_grid(k.target, k.grid));
    const bool holds = c.report.construction == k.label &&
                       r.end_to_end <= r.max_expert_fit_error + 1e-9 && r.holds;
    ok = ok && holds;
    if (!detail.empty()) detail += "; ";
    detail += k.label + " " + fmt("%.3e", r.end_to_end) + " <= " + fmt("%.3e", r.max_expert_fit_error);
  }
  return {ok, detail};
}

Outcome rate() {
  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t widths[] = {8, 16, 32, 64, 128, 256};
  const RateSweep s = rate_sweep(fig3_target(), widths, 512, 1e-12);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {s.rate.slope <= -1.8 && secs < 60.0,
          "slope " + fmt("%.3f", s.rate.slope) + " (<= -1.8), " + fmt("%.1f", secs) + " s (< 60)"};
}

Outcome separation() {
  const std::size_t widths[] = {16, 32, 64, 128, 256};
  const ComparisonReport kinked = compare_moe_dense(named("fig3_slice", 3), widths, 65537);
  const ComparisonReport smooth = compare_moe_dense(named("smooth_sin", 3), widths, 65537);
  const bool ok = kinked.moe_rate.slope <= kinked.dense_rate.slope - 0.5 &&
                  std::abs(smooth.slope_gap) <= 0.3;
  return {ok, "kinked: moe " + fmt("%.3f", kinked.moe_rate.slope) + " vs dense " +
                  fmt("%.3f", kinked.dense_rate.slope) + "; smooth gap " + fmt("%.3f", smooth.slope_gap)};
}

Outcome top1_identity() {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> w(-1.0, 1.0);
  std::size_t bad = 0;
  for (int rep = 0; rep < 1000; ++rep) {
    const std::size_t E = 2 + static_cast<std::size_t>(rep % 7);
    const std::size_t d = 1 + static_cast<std::size_t>(rep % 4);
    std::vector<double> gate(E * d);
    for (double& v : gate) v = w(rng);
    // Occasional exact ties exercise the smallest-index rule.
    if (rep % 10 == 0) std::copy_n(gate.begin(), d, gate.begin() + static_cast<std::ptrdiff_t>(d));
    std::vector<FfnNetwork> experts;
    for (std::size_t i = 0; i < E; ++i) {
      DenseLayer a = DenseLayer::zeros(d, 6, true);
      DenseLayer b = DenseLayer::zeros(6, 2, false);
      for (double& v : a.weight) v = w(rng);
      for (double& v : a.bias) v = w(rng);
      for (double& v : b.weight) v = w(rng);
      for (double& v : b.bias) v = w(rng);
      experts.push_back(FfnNetwork({a, b}));
    }
    const MoeLayer layer(GatingNetwork::linear(E, d, gate), experts, 1);
    Vector x(d);
    for (double& v : x) v = 3.0 * w(rng);
    std::size_t best = 0;
    double top = -INFINITY;
    for (std::size_t i = 0; i < E; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) s += gate[i * d + j] * x[j];
      if (s > top) {
        top = s;
        best = i;
      }
    }
    if (!bit_equal(layer.eval(x), experts[best].eval(x))) ++bad;
  }
  return {bad == 0, std::to_string(bad) + " of 1000 cases differ"};
}

Outcome pass_through() {
  const PiecewiseTarget torus = named("sin_torus", 4);
  const Construction deep = assemble_deep_moe(torus, 32);
  std::uint64_t worst_excess = 0;
  std::uint64_t worst = 0;
  const auto xs = torus.factor(0).atlas->sample(500);
  const auto ys = torus.factor(1).atlas->sample(500);
  for (std::size_t k = 0; k < std::min(xs.size(), ys.size()); ++k) {
    Vector p = xs[k];
    p.insert(p.end(), ys[(k * 7) % ys.size()].begin(), ys[(k * 7) % ys.size()].end());
    MoeTrace trace;
    deep.net.eval(p, &trace);
    for (std::size_t l = 0; l < trace.states.size(); ++l)
      for (std::size_t i = 0; i < p.size(); ++i) {
        const std::uint64_t u = ulp_distance(trace.states[l][i], p[i]);
        worst = std::max(worst, u);
        if (u > l + 1) worst_excess = std::max(worst_excess, u - (l + 1));
      }
  }
  const PiecewiseTarget fig3 = fig3_target();
  const Construction warm = assemble_warmup_moe(fig3, 64);
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.0, 3.0);
  std::size_t inexact = 0;
  for (int k = 0; k < 1000; ++k) {
    const double p[] = {u(rng), u(rng)};
    MoeTrace trace;
    warm.net.eval(p, &trace);
    for (const auto& s : trace.states)
      if (s[0] != p[0] || s[1] != p[1]) ++inexact;
  }
  return {worst_excess == 0 && inexact == 0,
          "torus worst drift " + std::to_string(worst) + " ulp over " +
              std::to_string(deep.net.depth()) + " layers; warmup inexact states " + std::to_string(inexact)};
}

Outcome partition_of_unity() {
  std::size_t failures = 0;
  std::size_t samples = 0;
  auto check = [&](const Atlas& atlas) {
    const auto pts = atlas.sample(10000);
    const double floor = 1.0 / static_cast<double>(atlas.size());
    for (const auto& x : pts) {
      ++samples;
      const Vector rho = atlas.partition_values(x);
      double total = 0.0;
      double top = 0.0;
      for (std::size_t i = 0; i < rho.size(); ++i) {
        total += rho[i];
        top = std::max(top, rho[i]);
        if (rho[i] < 0.0) ++failures;
        if (rho[i] > 0.0 && !atlas.chart(i).contains(x)) ++failures;
      }
      if (std::abs(total - 1.0) > 1e-10) ++failures;
      if (top < floor) ++failures;
    }
  };
  check(build_circle_atlas(4, 0.25, ChartKind::linear));
  check(build_circle_atlas(4, 0.25, ChartKind::angle));
  check(build_torus_atlas(4, 0.25));
  return {failures == 0, std::to_string(samples) + " samples, " + std::to_string(failures) + " violations"};
}

Outcome serialization() {
  const PiecewiseTarget ang = named("sin_circle", 4, ChartKind::angle);
  const PiecewiseTarget lin = named("sin_circle", 4, ChartKind::linear);
  const PiecewiseTarget torus = named("sin_torus", 4);
  const PiecewiseTarget fig3 = fig3_target();
  const fs::path dir = scratch("serialization");
  std::size_t mismatches = 0;
  std::size_t nets = 0;
  auto roundtrip = [&](const Construction& c, const std::vector<Vector>& pts) {
    const fs::path p = dir / (c.report.construction + ".json");
    save_network(c.net, p);
    const MoeNetwork back = load_network(p);
    for (const auto& x : pts)
      if (!bit_equal(c.net.eval(x), back.eval(x))) ++mismatches;
    ++nets;
  };
  roundtrip(assemble_shallow_moe(ang, 32), ang.factor(0).atlas->sample(100));
  roundtrip(assemble_shallow_moe(lin, 32), lin.factor(0).atlas->sample(100));
  {
    const auto xs = torus.factor(0).atlas->sample(100);
    const auto ys = torus.factor(1).atlas->sample(100);
    std::vector<Vector> pts;
    for (std::size_t k = 0; k < 100; ++k) {
      Vector p = xs[k];
      p.insert(p.end(), ys[99 - k].begin(), ys[99 - k].end());
      pts.push_back(p);
    }
    roundtrip(assemble_deep_moe(torus, 16), pts);
  }
  {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(0.0, 3.0);
    std::vector<Vector> pts;
    for (int k = 0; k < 100; ++k) pts.push_back({u(rng), u(rng)});
    roundtrip(assemble_warmup_moe(fig3, 32), pts);
  }

  auto csv_of = [&](ExperimentKind kind, const std::string& target, const std::string& tag,
                    const std::string& file) {
    ExperimentConfig c;
    c.kind = kind;
    c.target.name = target;
    c.widths = {8, 16, 32};
    c.grid = 128;
    c.seed = 3;
    c.out = scratch(tag);
    run_experiment(c);
    return slurp(c.out / file);
  };
  const std::string r1 = csv_of(ExperimentKind::rate_sweep, "fig3", "rate_a", "rate.csv");
  const std::string r2 = csv_of(ExperimentKind::rate_sweep, "fig3", "rate_b", "rate.csv");
  const std::string c1 = csv_of(ExperimentKind::compare, "fig3_slice", "cmp_a", "compare.csv");
  const std::string c2 = csv_of(ExperimentKind::compare, "fig3_slice", "cmp_b", "compare.csv");
  const bool csv_ok = !r1.empty() && r1 == r2 && !c1.empty() && c1 == c2;
  return {mismatches == 0 && nets == 4 && csv_ok,
          std::to_string(nets) + " networks x 100 points, " + std::to_string(mismatches) +
              " mismatches; repeated CSVs " + (csv_ok ? "byte-identical" : "differ")};
}

Outcome negatives() {
  std::vector<std::string> notes;
  bool ok = true;

  const PiecewiseTarget fig3 = fig3_target();
  const Construction c = assemble_warmup_moe(fig3, 16);
  const RoutingAuditSummary s = routing_audit(corrupt_gate_rows(c.net, 0, 1), fig3, target_grid(fig3, 128));
  bool witnesses_ok = !s.witnesses.empty();
  for (const auto& w : s.witnesses)
    if (std::find(w.admissible.begin(), w.admissible.end(), w.selected) != w.admissible.end())
      witnesses_ok = false;
  ok = ok && !s.all_pass() && witnesses_ok;
  notes.push_back("corrupt gate: pass fraction " + fmt("%.3f", s.pass_fraction) + ", " +
                  std::to_string(s.witnesses.size()) + " witnesses");

  const Atlas circle = build_circle_atlas(4, 0.25, ChartKind::linear);
  std::vector<ScalarMap> pieces = circle_angle_function(circle, [](double th) { return std::sin(th); });
  const ScalarMap orig = pieces[2];
  pieces[2] = [orig](std::span<const double> u) { return orig(u) + 0.1; };
  bool overlap_ok = false;
  try {
    build_manifold_target({ManifoldFactor{circle, pieces, std::nullopt}}, "inconsistent");
  } catch (const ValidationError& e) {
    overlap_ok = e.witness().size() == 2 && e.discrepancy() > 0.05;
    notes.push_back("overlap: witness discrepancy " + fmt("%.3g", e.discrepancy()));
  }
  if (!overlap_ok) notes.push_back("overlap: no validation error");
  ok = ok && overlap_ok;

  CertificationOptions opt;
  opt.initial_width = 2;
  opt.max_width = 2;
  bool cert_ok = false;
  try {
    fit_partition_approximators(circle, opt);
  } catch (const CertificationError& e) {
    cert_ok = e.best_width() == 2 && std::isfinite(e.best_tolerance()) && e.best_tolerance() > 1.0 / 32.0;
    notes.push_back("under-width: best tol " + fmt("%.4g", e.best_tolerance()) + " at width " +
                    std::to_string(e.best_width()));
  }
  if (!cert_ok && notes.size() < 3) notes.push_back("under-width: no certification error");
  ok = ok && cert_ok;

  std::string detail;
  for (const auto& n : notes) detail += (detail.empty() ? "" : "; ") + n;
  return {ok, detail};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"indicator gadget exactness", gadgets},
      {"warmup routing exactness", warmup_routing},
      {"manifold routing exactness", manifold_routing},
      {"error-bound chain", error_chain},
      {"approximation rate", rate},
      {"MoE vs dense separation", separation},
      {"top-1 identity", top1_identity},
      {"deep pass-through", pass_through},
      {"partition of unity", partition_of_unity},
      {"serialization and determinism", serialization},
      {"negative tests", negatives},
  };
  int failed = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[k].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!o.pass) ++failed;
    std::printf("%s %2zu %s: %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", k + 1, criteria[k].first.c_str(),
                o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria failed\n", failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
