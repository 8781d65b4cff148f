#include "moeapprox/constructor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>
#include <string>

#include "moeapprox/approx_fit.hpp"
#include "moeapprox/errors.hpp"

namespace moeapprox {

namespace {

std::vector<std::size_t> iota(std::size_t start, std::size_t count) {
  std::vector<std::size_t> v(count);
  std::iota(v.begin(), v.end(), start);
  return v;
}

double max_norm(std::span<const Vector> pts) {
  double r = 0.0;
  for (const auto& p : pts) {
    double s = 0.0;
    for (double v : p) s += v * v;
    r = std::max(r, std::sqrt(s));
  }
  return r > 0.0 ? r : 1.0;
}

/// Points of [0,1]^d on a tensor grid with about `n` points in total.
std::vector<Vector> unit_cube_points(std::size_t d, std::size_t n) {
  const auto per_dim = std::max<std::size_t>(
      2, static_cast<std::size_t>(
             std::ceil(std::pow(static_cast<double>(n), 1.0 / static_cast<double>(d)))));
  const GridSpec g = GridSpec::uniform(0.0, 1.0, per_dim, d);
  std::vector<Vector> pts;
  pts.reserve(g.size());
  for (std::size_t k = 0; k < g.size(); ++k) pts.push_back(g.point(k));
  return pts;
}

std::size_t max_expert_width(const MoeLayer& layer) {
  std::size_t w = 0;
  for (const auto& e : layer.experts()) w = std::max(w, e.width());
  return w;
}

std::size_t max_expert_depth(const MoeNetwork& net) {
  std::size_t d = 0;
  for (const auto& layer : net.layers())
    for (const auto& e : layer.experts()) d = std::max(d, e.depth());
  return d;
}

void finish_report(ConstructionReport& r, const MoeNetwork& net) {
  r.layers = net.depth();
  r.expert_depth = max_expert_depth(net);
  r.layer_widths.clear();
  for (const auto& layer : net.layers()) r.layer_widths.push_back(max_expert_width(layer));
  r.max_expert_fit_error = 0.0;
  for (const auto& f : r.factor_reports)
    for (double e : f.expert_fit_errors) r.max_expert_fit_error = std::max(r.max_expert_fit_error, e);
  r.active_params = active_param_count(net);
  r.total_params = total_param_count(net);
}

/// The local map g_i of one chart as a two-layer network on [0,1]^d.
FitResult fit_local(const ScalarMap& g, std::size_t d, std::size_t width,
                    const ConstructionOptions& options, std::uint64_t seed) {
  if (d == 1)
    return fit_expert_1d([&](double u) { return g(std::span<const double>(&u, 1)); }, 0.0, 1.0,
                         width);
  return fit_ls_random_features(g, d, width, options.chart_samples_per_width * width, seed,
                                options.routing.ridge);
}

struct ChartExpert {
  FfnNetwork local;  ///< R^D -> R, reads the factor's own coordinates
  double local_error = 0.0;
  std::optional<double> chart_error;
  double expert_error = 0.0;
};

/// g_i o phi_i (linear chart) or g_i o psi_i with psi_i fitted to phi_i on U_i.
ChartExpert build_chart_expert(const Atlas& atlas, std::size_t i, const Subfunction& piece,
                               std::size_t width, const ConstructionOptions& options,
                               std::uint64_t seed) {
  const Chart& chart = atlas.chart(i);
  const std::size_t d = chart.intrinsic_dim();
  const std::size_t D = chart.ambient_dim();
  FitResult g = fit_local(piece.local, d, width, options, seed);

  ChartExpert out{g.net, g.sup_error, std::nullopt, 0.0};
  const auto verify_u = unit_cube_points(d, options.verify_points);
  std::vector<Vector> verify_x;
  verify_x.reserve(verify_u.size());
  for (const auto& u : verify_u) verify_x.push_back(chart.inverse(u));

  if (const LinearChartParams* lin = chart.linear()) {
    out.local = compose(g.net, chart_network(*lin));
  } else {
    const std::size_t n = std::max<std::size_t>(options.chart_samples_per_width * width, 256);
    std::vector<Vector> xs;
    std::vector<Vector> us;
    for (const auto& u : unit_cube_points(d, n)) {
      xs.push_back(chart.inverse(u));
      us.push_back(chart.forward(xs.back()));
    }
    RandomFeatureFit psi =
        fit_random_features(xs, us, width, seed ^ 0x5bd1e995ULL, options.routing.ridge, max_norm(xs));
    double chart_err = 0.0;
    for (const auto& x : verify_x) {
      const Vector a = chart.forward(x);
      const Vector b = psi.net.eval(x);
      for (std::size_t k = 0; k < d; ++k) chart_err = std::max(chart_err, std::abs(a[k] - b[k]));
    }
    out.chart_error = chart_err;
    out.local = compose(g.net, psi.net);
  }
  if (out.local.input_dim() != D) throw CompositionError("chart expert reads the wrong dimension");

  for (const auto& x : verify_x)
    out.expert_error = std::max(out.expert_error, std::abs(piece.eval(x) - out.local.eval(x)[0]));
  return out;
}

FactorReport certified_factor_report(const PartitionFit& fit) {
  FactorReport r;
  r.routing_exact = false;
  r.certified_tol = fit.certified_tol;
  r.target_tol = fit.target_tol;
  r.routing_width = fit.width;
  r.certification_history = fit.history;
  return r;
}

PartitionFit certify_factor(const Atlas& atlas, const CertificationOptions& opts,
                            std::size_t factor) {
  try {
    return fit_partition_approximators(atlas, opts);
  } catch (const CertificationError& e) {
    throw CertificationError("routing certification failed for factor " + std::to_string(factor) +
                                 ": " + e.what(),
                             e.best_tolerance(), e.best_width(), factor);
  }
}

/// Affine embed x -> (x, 0_L) and readout of the last L coordinates.
FfnNetwork embed_network(std::size_t in_dim, std::size_t slots) {
  const std::size_t out = in_dim + slots;
  std::vector<double> w(out * in_dim, 0.0);
  for (std::size_t k = 0; k < in_dim; ++k) w[k * in_dim + k] = 1.0;
  return affine_network(in_dim, out, std::move(w), std::vector<double>(out, 0.0));
}

FfnNetwork readout_network(std::size_t state_dim, std::size_t slots) {
  std::vector<double> w(slots * state_dim, 0.0);
  for (std::size_t k = 0; k < slots; ++k) w[k * state_dim + (state_dim - slots + k)] = 1.0;
  return affine_network(state_dim, slots, std::move(w), std::vector<double>(slots, 0.0));
}

bool all_charts_linear(const Atlas& atlas) {
  for (std::size_t i = 0; i < atlas.size(); ++i)
    if (!atlas.chart(i).linear()) return false;
  return true;
}

}  // namespace

FfnNetwork build_indicator_gadget(std::size_t experts) {
  if (experts == 0) throw SpecError("indicator gadget needs E >= 1");
  DenseLayer hidden = DenseLayer::zeros(1, 3 * experts, true);
  DenseLayer out = DenseLayer::zeros(3 * experts, experts, false);
  for (std::size_t i = 0; i < experts; ++i) {
    const auto lo = static_cast<double>(i);
    // Order (mid, left, right): -2 mid + left is exactly -right or the
    // falling edge, so adding right cancels without rounding.
    hidden.w(3 * i, 0) = 1.0;
    hidden.bias[3 * i] = -(lo + 0.5);
    hidden.w(3 * i + 1, 0) = 1.0;
    hidden.bias[3 * i + 1] = -lo;
    hidden.w(3 * i + 2, 0) = 1.0;
    hidden.bias[3 * i + 2] = -(lo + 1.0);
    out.w(i, 3 * i) = -2.0;
    out.w(i, 3 * i + 1) = 1.0;
    out.w(i, 3 * i + 2) = 1.0;
  }
  return FfnNetwork({std::move(hidden), std::move(out)});
}

double partition_fit_error(const Atlas& atlas, const FfnNetwork& tau_net, std::size_t points) {
  if (tau_net.output_dim() != atlas.size() || tau_net.input_dim() != atlas.ambient_dim())
    throw ShapeError("partition approximator does not match the atlas");
  const std::vector<Vector> pts = atlas.sample(points);
  const auto n = static_cast<std::ptrdiff_t>(pts.size());
  double err = 0.0;
#pragma omp parallel for reduction(max : err) schedule(static)
  for (std::ptrdiff_t k = 0; k < n; ++k) {
    const Vector& x = pts[static_cast<std::size_t>(k)];
    const Vector rho = atlas.partition_values(x);
    const Vector tau = tau_net.eval(x);
    for (std::size_t i = 0; i < rho.size(); ++i) err = std::max(err, std::abs(rho[i] - tau[i]));
  }
  return err;
}

PartitionFit fit_partition_approximators(const Atlas& atlas, const CertificationOptions& options) {
  if (options.initial_width == 0 || options.max_width == 0)
    throw SpecError("certification widths must be positive");
  const std::size_t E = atlas.size();
  const double target = options.safety / (4.0 * static_cast<double>(E));
  const std::size_t verify = 4 * options.audit_samples;

  double best_tol = std::numeric_limits<double>::infinity();
  std::size_t best_width = 0;
  std::vector<std::pair<std::size_t, double>> history;
  for (std::size_t width = std::min(options.initial_width, options.max_width);
       width <= options.max_width; width *= 2) {
    const std::vector<Vector> xs =
        atlas.sample(std::max<std::size_t>(options.samples_per_width * width, 1024));
    std::vector<Vector> ys;
    ys.reserve(xs.size());
    for (const auto& x : xs) ys.push_back(atlas.partition_values(x));
    RandomFeatureFit fit =
        fit_random_features(xs, ys, width, options.seed, options.ridge, max_norm(xs));
    const double tol = partition_fit_error(atlas, fit.net, verify);
    history.emplace_back(width, tol);
    if (tol < best_tol) {
      best_tol = tol;
      best_width = width;
    }
    if (tol <= target) {
      PartitionFit out{std::move(fit.net), tol, target, width, atlas.sample(verify).size(),
                       std::move(history)};
      return out;
    }
  }
  throw CertificationError("partition approximators reached " + std::to_string(best_tol) +
                               " > " + std::to_string(target) + " within max_width " +
                               std::to_string(options.max_width),
                           best_tol, best_width);
}

GatingNetwork RoutingBlock::gating() const {
  return GatingNetwork::linear(experts, state_dim + experts, gate_matrix);
}

RoutingBlock build_routing_block(const FfnNetwork& tau_net, std::size_t state_dim,
                                 std::size_t experts, const RoutingLayout& layout,
                                 double certified_tol) {
  if (tau_net.output_dim() != experts)
    throw ShapeError("routing network emits " + std::to_string(tau_net.output_dim()) +
                     " scores for " + std::to_string(experts) + " experts");
  std::vector<std::size_t> reads = layout.tau_inputs;
  if (reads.empty()) reads = iota(0, tau_net.input_dim());
  if (reads.size() != tau_net.input_dim())
    throw ShapeError("routing layout reads the wrong number of coordinates");
  std::vector<bool> nonneg = layout.nonneg;
  if (nonneg.empty()) nonneg.assign(state_dim, false);
  if (nonneg.size() != state_dim) throw ShapeError("routing layout nonneg has wrong length");

  const FfnNetwork parts[] = {identity_network(tau_net.depth(), nonneg),
                              lift_input(tau_net, state_dim, reads)};
  const FfnNetwork expert = ffn_concat(parts);
  std::vector<double> gate(experts * (state_dim + experts), 0.0);
  for (std::size_t i = 0; i < experts; ++i) gate[i * (state_dim + experts) + state_dim + i] = 1.0;

  return RoutingBlock{MoeLayer(GatingNetwork::constant(experts, state_dim),
                               std::vector<FfnNetwork>(experts, expert), 1),
                      std::move(gate),
                      state_dim,
                      experts,
                      tau_net,
                      certified_tol};
}

FfnNetwork chart_network(const LinearChartParams& chart) {
  const std::size_t D = chart.ambient_dim;
  const std::size_t d = chart.intrinsic_dim;
  std::vector<double> w(d * D);
  std::vector<double> b(d);
  for (std::size_t k = 0; k < d; ++k) {
    double shift = chart.shift[k];
    for (std::size_t r = 0; r < D; ++r) {
      w[k * D + r] = chart.scale * chart.basis[r * d + k];
      shift -= chart.basis[r * d + k] * chart.center[r];
    }
    b[k] = chart.scale * shift;
  }
  return affine_network(D, d, std::move(w), std::move(b));
}

FfnNetwork build_expert_shallow(const FfnNetwork& g, const FfnNetwork& psi,
                                std::size_t input_dim) {
  const auto reads = iota(0, psi.input_dim());
  return compose(g, lift_input(psi, input_dim, reads));
}

FfnNetwork build_expert_shallow(const FfnNetwork& g, const LinearChartParams& chart,
                                std::size_t input_dim) {
  const auto reads = iota(0, chart.ambient_dim);
  return compose(g, lift_input(chart_network(chart), input_dim, reads));
}

FfnNetwork build_slot_expert(const FfnNetwork& local, std::size_t state_dim, std::size_t extra,
                             std::span<const std::size_t> reads, std::size_t slot,
                             const std::vector<bool>& nonneg) {
  if (slot >= state_dim) throw ShapeError("slot outside the state");
  if (nonneg.size() != state_dim) throw ShapeError("nonneg flags must cover the state");
  if (local.output_dim() != 1) throw ShapeError("slot experts write a single value");
  const std::size_t in = state_dim + extra;

  std::vector<std::size_t> others;
  std::vector<bool> others_nonneg;
  for (std::size_t k = 0; k < state_dim; ++k) {
    if (k == slot) continue;
    others.push_back(k);
    others_nonneg.push_back(nonneg[k]);
  }
  const FfnNetwork value = lift_input(local, in, reads);
  if (others.empty()) return value;
  const FfnNetwork parts[] = {lift_input(identity_network(local.depth(), others_nonneg), in, others),
                              value};
  const FfnNetwork stacked = ffn_concat(parts);
  std::vector<std::size_t> order(state_dim);
  for (std::size_t k = 0; k < state_dim; ++k)
    order[k] = k < slot ? k : (k == slot ? state_dim - 1 : k - 1);
  return select_outputs(stacked, order);
}

Construction assemble_shallow_moe(const PiecewiseTarget& target, std::size_t expert_width,
                                  const ConstructionOptions& options) {
  if (target.kind() != PiecewiseTarget::Kind::product_manifold || target.factor_count() != 1)
    throw SpecError("the shallow construction needs a single-factor manifold target");
  const TargetFactor& factor = target.factor(0);
  const Atlas& atlas = *factor.atlas;
  const std::size_t E = atlas.size();
  const std::size_t D = atlas.ambient_dim();

  CertificationOptions copts = options.routing;
  copts.seed = options.seed;
  const PartitionFit fit = certify_factor(atlas, copts, 0);
  RoutingBlock block = build_routing_block(fit.tau_net, D, E, {}, fit.certified_tol);

  FactorReport fr = certified_factor_report(fit);
  std::vector<FfnNetwork> experts;
  for (std::size_t i = 0; i < E; ++i) {
    ChartExpert ce =
        build_chart_expert(atlas, i, factor.pieces[i], expert_width, options, options.seed + i);
    experts.push_back(lift_input(ce.local, D + E, iota(0, D)));
    fr.expert_fit_errors.push_back(ce.expert_error);
    fr.local_fit_errors.push_back(ce.local_error);
    if (ce.chart_error) fr.chart_fit_errors.push_back(*ce.chart_error);
  }

  std::vector<MoeLayer> layers;
  GatingNetwork gate = block.gating();
  layers.push_back(std::move(block.prelayer));
  layers.emplace_back(std::move(gate), std::move(experts), 1);

  ConstructionReport r;
  r.construction = all_charts_linear(atlas) ? "cor1" : "thm2";
  r.target = target.name();
  r.factors = 1;
  r.experts = E;
  r.expert_width = expert_width;
  r.layout.push_back({0, 1, 0});
  r.factor_reports.push_back(std::move(fr));
  MoeNetwork net(std::nullopt, std::move(layers), std::nullopt);
  finish_report(r, net);
  return {std::move(net), std::move(r)};
}

Construction assemble_warmup_moe(const PiecewiseTarget& target, std::size_t expert_width) {
  if (target.kind() != PiecewiseTarget::Kind::cube_grid)
    throw SpecError("the warmup construction needs a cube-grid target");
  const std::size_t L = target.factor_count();
  const std::size_t S = 2 * L;
  std::vector<bool> nonneg(S, false);
  std::fill(nonneg.begin(), nonneg.begin() + static_cast<std::ptrdiff_t>(L), true);

  ConstructionReport r;
  r.construction = "thm4";
  r.target = target.name();
  r.factors = L;
  r.expert_width = expert_width;
  std::vector<MoeLayer> layers;
  for (std::size_t l = 0; l < L; ++l) {
    const std::size_t E = target.pieces(l);
    r.experts = std::max(r.experts, E);
    RoutingLayout layout{{l}, nonneg};
    RoutingBlock block = build_routing_block(build_indicator_gadget(E), S, E, layout, 0.0);

    FactorReport fr;
    fr.routing_exact = true;
    std::vector<FfnNetwork> experts;
    const std::size_t reads[] = {l};
    for (std::size_t i = 0; i < E; ++i) {
      const ScalarMap& f = target.factor(l).pieces[i].eval;
      FitResult g = fit_expert_1d([&](double z) { return f(std::span<const double>(&z, 1)); },
                                  static_cast<double>(i), static_cast<double>(i + 1),
                                  expert_width);
      experts.push_back(build_slot_expert(g.net, S, E, reads, L + l, nonneg));
      fr.expert_fit_errors.push_back(g.sup_error);
      fr.local_fit_errors.push_back(g.sup_error);
    }
    GatingNetwork gate = block.gating();
    r.layout.push_back({layers.size(), layers.size() + 1, L + l});
    layers.push_back(std::move(block.prelayer));
    layers.emplace_back(std::move(gate), std::move(experts), 1);
    r.factor_reports.push_back(std::move(fr));
  }
  MoeNetwork net(embed_network(L, L), std::move(layers), readout_network(S, L));
  finish_report(r, net);
  return {std::move(net), std::move(r)};
}

Construction assemble_deep_moe(const PiecewiseTarget& target, std::size_t expert_width,
                               const ConstructionOptions& options) {
  if (target.kind() != PiecewiseTarget::Kind::product_manifold)
    throw SpecError("the deep construction needs a product-manifold target");
  const std::size_t L = target.factor_count();
  const std::size_t in = target.input_dim();
  const std::size_t S = in + L;
  const std::vector<bool> nonneg(S, false);

  ConstructionReport r;
  r.construction = "thm3";
  r.target = target.name();
  r.factors = L;
  r.expert_width = expert_width;
  std::vector<MoeLayer> layers;
  for (std::size_t l = 0; l < L; ++l) {
    const TargetFactor& factor = target.factor(l);
    const Atlas& atlas = *factor.atlas;
    const std::size_t E = atlas.size();
    r.experts = std::max(r.experts, E);
    const auto reads = iota(target.factor_offset(l), factor.dim);

    CertificationOptions copts = options.routing;
    copts.seed = options.seed + l;
    const PartitionFit fit = certify_factor(atlas, copts, l);
    RoutingBlock block = build_routing_block(fit.tau_net, S, E, {reads, nonneg}, fit.certified_tol);

    FactorReport fr = certified_factor_report(fit);
    std::vector<FfnNetwork> experts;
    for (std::size_t i = 0; i < E; ++i) {
      ChartExpert ce = build_chart_expert(atlas, i, factor.pieces[i], expert_width, options,
                                          options.seed + 1000 * l + i);
      experts.push_back(build_slot_expert(ce.local, S, E, reads, in + l, nonneg));
      fr.expert_fit_errors.push_back(ce.expert_error);
      fr.local_fit_errors.push_back(ce.local_error);
      if (ce.chart_error) fr.chart_fit_errors.push_back(*ce.chart_error);
    }
    GatingNetwork gate = block.gating();
    r.layout.push_back({layers.size(), layers.size() + 1, in + l});
    layers.push_back(std::move(block.prelayer));
    layers.emplace_back(std::move(gate), std::move(experts), 1);
    r.factor_reports.push_back(std::move(fr));
  }
  MoeNetwork net(embed_network(in, L), std::move(layers), readout_network(S, L));
  finish_report(r, net);
  return {std::move(net), std::move(r)};
}

Construction assemble(const PiecewiseTarget& target, std::size_t expert_width,
                      const ConstructionOptions& options) {
  if (target.kind() == PiecewiseTarget::Kind::cube_grid)
    return assemble_warmup_moe(target, expert_width);
  if (target.factor_count() == 1) return assemble_shallow_moe(target, expert_width, options);
  return assemble_deep_moe(target, expert_width, options);
}

ErrorChainReport audit_error_chain(const Construction& c, const PiecewiseTarget& target,
                                   const GridSpec& grid) {
  grid.validate();
  const MoeNetwork& net = c.net;
  const auto& layout = c.report.layout;
  const std::size_t L = target.factor_count();
  if (layout.size() != L) throw ShapeError("construction layout does not match the target");

  auto empty_errors = [&] {
    std::vector<std::vector<double>> e(L);
    for (std::size_t l = 0; l < L; ++l) e[l].assign(target.pieces(l), 0.0);
    return e;
  };
  ErrorChainReport out;
  out.grid_expert_errors = empty_errors();
  GridMax best;
  const auto n = static_cast<std::ptrdiff_t>(grid.size());
  bool failed = false;
  std::string failure;

#pragma omp parallel
  {
    auto local_errors = empty_errors();
    GridMax local;
#pragma omp for schedule(static)
    for (std::ptrdiff_t k = 0; k < n; ++k) {
      const auto idx = static_cast<std::size_t>(k);
      try {
        const Vector x = grid.point(idx);
        if (grid.excluded(x)) {
          ++local.excluded;
          continue;
        }
        MoeTrace trace;
        const Vector y = net.eval(x, &trace);
        const Vector t = eval_target(target, x);
        double e = 0.0;
        for (std::size_t j = 0; j < y.size(); ++j) e = std::max(e, std::abs(y[j] - t[j]));
        if (!std::isfinite(e)) throw EvaluationError("non-finite network output", x);
        ++local.evaluated;
        if (local.evaluated == 1 || e > local.value) {
          local.value = e;
          local.index = idx;
        }
        for (std::size_t l = 0; l < L; ++l) {
          const auto x_l = target.factor_slice(x, l);
          const MoeLayer& layer = net.layers()[layout[l].expert_layer];
          const Vector& input = trace.states[layout[l].expert_layer - 1];
          for (std::size_t i : region_index(target, l, x_l)) {
            const double v = layer.experts()[i].eval(input)[layout[l].value_slot];
            const double fe = std::abs(target.factor(l).pieces[i].eval(x_l) - v);
            local_errors[l][i] = std::max(local_errors[l][i], fe);
          }
        }
      } catch (const std::exception& ex) {
#pragma omp critical(moeapprox_chain_fail)
        {
          failed = true;
          failure = ex.what();
        }
      }
    }
#pragma omp critical(moeapprox_chain_reduce)
    {
      if (local.evaluated > 0 &&
          (best.evaluated == 0 || local.value > best.value ||
           (local.value == best.value && local.index < best.index))) {
        best.value = local.value;
        best.index = local.index;
      }
      best.evaluated += local.evaluated;
      best.excluded += local.excluded;
      for (std::size_t l = 0; l < L; ++l)
        for (std::size_t i = 0; i < local_errors[l].size(); ++i)
          out.grid_expert_errors[l][i] = std::max(out.grid_expert_errors[l][i], local_errors[l][i]);
    }
  }
  if (failed) throw Error("error-chain audit failed: " + failure);

  out.end_to_end = best.value;
  out.evaluated = best.evaluated;
  out.excluded = best.excluded;
  if (best.evaluated > 0) out.argmax = grid.point(best.index);
  out.max_expert_fit_error = c.report.max_expert_fit_error;
  for (const auto& fl : out.grid_expert_errors)
    for (double e : fl) out.max_expert_fit_error = std::max(out.max_expert_fit_error, e);
  out.holds = out.end_to_end <= out.max_expert_fit_error + kErrorChainSlack;
  return out;
}

GridSpec target_grid(const PiecewiseTarget& target, std::size_t points_per_dim,
                     double boundary_band) {
  GridSpec g;
  std::vector<VectorMap> maps;
  std::vector<std::size_t> param_dims;
  for (std::size_t l = 0; l < target.factor_count(); ++l) {
    const TargetFactor& f = target.factor(l);
    if (f.atlas) {
      const ManifoldDomain& dom = f.atlas->domain();
      g.lower.insert(g.lower.end(), dom.lower.begin(), dom.lower.end());
      g.upper.insert(g.upper.end(), dom.upper.begin(), dom.upper.end());
      maps.push_back(dom.map);
      param_dims.push_back(dom.lower.size());
    } else {
      g.lower.push_back(0.0);
      g.upper.push_back(static_cast<double>(f.pieces.size()));
      maps.push_back([](std::span<const double> p) { return Vector(p.begin(), p.end()); });
      param_dims.push_back(1);
    }
  }
  g.counts.assign(g.lower.size(), points_per_dim);
  g.map = [maps, param_dims](std::span<const double> p) {
    Vector x;
    std::size_t off = 0;
    for (std::size_t l = 0; l < maps.size(); ++l) {
      const Vector part = maps[l](p.subspan(off, param_dims[l]));
      x.insert(x.end(), part.begin(), part.end());
      off += param_dims[l];
    }
    return x;
  };
  g.boundary_band = boundary_band;
  auto t = std::make_shared<const PiecewiseTarget>(target);
  g.exclude = [t, boundary_band](std::span<const double> x) {
    for (std::size_t l = 0; l < t->factor_count(); ++l)
      if (t->boundary_distance(l, t->factor_slice(x, l)) < boundary_band) return true;
    return false;
  };
  return g;
}

nlohmann::json to_json(const ConstructionReport& report) {
  nlohmann::json factors = nlohmann::json::array();
  for (std::size_t l = 0; l < report.factor_reports.size(); ++l) {
    const auto& f = report.factor_reports[l];
    nlohmann::json hist = nlohmann::json::array();
    for (const auto& [w, tol] : f.certification_history) hist.push_back({{"width", w}, {"tol", tol}});
    nlohmann::json j = {{"expert_fit_errors", f.expert_fit_errors},
                        {"local_fit_errors", f.local_fit_errors},
                        {"chart_fit_errors", f.chart_fit_errors},
                        {"routing_exact", f.routing_exact},
                        {"certified_tol", f.certified_tol},
                        {"target_tol", f.target_tol},
                        {"routing_width", f.routing_width},
                        {"certification_history", hist}};
    if (l < report.layout.size()) {
      j["prelayer"] = report.layout[l].prelayer;
      j["expert_layer"] = report.layout[l].expert_layer;
      j["value_slot"] = report.layout[l].value_slot;
    }
    factors.push_back(std::move(j));
  }
  return {{"construction", report.construction},
          {"target", report.target},
          {"factors", report.factors},
          {"experts", report.experts},
          {"layers", report.layers},
          {"expert_depth", report.expert_depth},
          {"expert_width", report.expert_width},
          {"layer_widths", report.layer_widths},
          {"max_expert_fit_error", report.max_expert_fit_error},
          {"active_params", report.active_params},
          {"total_params", report.total_params},
          {"factor_reports", factors}};
}

}  // namespace moeapprox
