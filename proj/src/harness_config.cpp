#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <numbers>
#include <set>
#include <sstream>
#include <string>

#include "moeapprox/errors.hpp"
#include "moeapprox/harness.hpp"
#include "toml.hpp"

namespace moeapprox {

namespace {

using nlohmann::json;

void check_keys(const json& j, const std::string& where, const std::set<std::string>& allowed) {
  if (!j.is_object()) throw ConfigError(where + " must be a table");
  for (const auto& [key, _] : j.items())
    if (!allowed.contains(key)) throw ConfigError("unknown key '" + key + "' in " + where);
}

template <typename T>
T get(const json& j, const std::string& key, const std::string& where) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("bad value for '" + key + "' in " + where + ": " + e.what());
  }
}

std::size_t get_count(const json& j, const std::string& key, const std::string& where) {
  if (!j.at(key).is_number_integer() || j.at(key).get<long long>() < 0)
    throw ConfigError("'" + key + "' in " + where + " must be a nonnegative integer");
  return j.at(key).get<std::size_t>();
}

TargetSpec target_from_json(const json& j) {
  check_keys(j, "[target]", {"name", "E", "L", "overlap_frac", "charts", "coefficients", "value"});
  TargetSpec t;
  if (j.contains("name")) t.name = get<std::string>(j, "name", "[target]");
  if (j.contains("E")) t.experts = get_count(j, "E", "[target]");
  if (j.contains("L")) t.factors = get_count(j, "L", "[target]");
  if (j.contains("overlap_frac")) t.overlap_frac = get<double>(j, "overlap_frac", "[target]");
  if (j.contains("charts")) {
    const auto c = get<std::string>(j, "charts", "[target]");
    if (c == "linear") t.charts = ChartKind::linear;
    else if (c == "angle") t.charts = ChartKind::angle;
    else throw ConfigError("charts must be 'linear' or 'angle', got '" + c + "'");
    t.charts_set = true;
  }
  if (j.contains("coefficients"))
    t.coefficients = get<std::vector<std::vector<double>>>(j, "coefficients", "[target]");
  if (j.contains("value")) t.value = get<double>(j, "value", "[target]");
  return t;
}

std::size_t pieces_or(const TargetSpec& s, std::size_t fallback) {
  return s.experts.value_or(fallback);
}

void require_fixed(const TargetSpec& s, std::size_t E, std::size_t L) {
  if (s.experts && *s.experts != E)
    throw ConfigError("target '" + s.name + "' has E = " + std::to_string(E));
  if (s.factors && *s.factors != L)
    throw ConfigError("target '" + s.name + "' has L = " + std::to_string(L));
}

PiecewiseTarget replicated_cube(const TargetSpec& s, std::size_t E,
                                const std::function<double(std::size_t, double)>& piece,
                                std::optional<int> smoothness, int continuity) {
  const std::size_t L = s.factors.value_or(1);
  if (E == 0 || L == 0) throw ConfigError("target needs E >= 1 and L >= 1");
  std::vector<std::vector<std::function<double(double)>>> pieces(L);
  for (auto& fl : pieces)
    for (std::size_t i = 1; i <= E; ++i) fl.push_back([piece, i](double z) { return piece(i, z); });
  return cube_grid_target(std::move(pieces), s.name, smoothness, continuity);
}

Atlas circle_for(const TargetSpec& s, ChartKind default_kind) {
  const std::size_t E = pieces_or(s, 4);
  try {
    return build_circle_atlas(E, s.overlap_frac, s.charts_set ? s.charts : default_kind);
  } catch (const SpecError& e) {
    throw ConfigError(std::string("bad circle atlas: ") + e.what());
  }
}

PiecewiseTarget circle_target(const TargetSpec& s, std::function<double(double)> f,
                              ChartKind default_kind) {
  if (s.factors && *s.factors != 1) throw ConfigError("target '" + s.name + "' has L = 1");
  Atlas atlas = circle_for(s, default_kind);
  auto local = circle_angle_function(atlas, std::move(f));
  return build_manifold_target({ManifoldFactor{atlas, std::move(local), std::nullopt}}, s.name);
}

PiecewiseTarget build_registered(const TargetSpec& s) {
  if (s.name == "fig3") {
    require_fixed(s, 3, 2);
    return fig3_target();
  }
  if (s.name == "fig3_slice") {
    require_fixed(s, 3, 1);
    const PiecewiseTarget full = fig3_target();
    TargetFactor first = full.factor(0);
    return PiecewiseTarget(PiecewiseTarget::Kind::cube_grid, {std::move(first)}, "fig3_slice", 0);
  }
  if (s.name == "abs_kink")
    return replicated_cube(
        s, pieces_or(s, 3),
        [](std::size_t i, double z) { return std::abs(z - (static_cast<double>(i) - 0.5)) - 0.5; },
        0, 0);
  if (s.name == "smooth_sin")
    return replicated_cube(
        s, pieces_or(s, 1), [](std::size_t, double z) { return std::sin(2.0 * z); }, std::nullopt,
        std::numeric_limits<int>::max());
  if (s.name == "poly") {
    if (s.coefficients.empty()) throw ConfigError("poly target needs coefficients");
    if (s.experts && *s.experts != s.coefficients.size())
      throw ConfigError("poly target: E differs from the number of coefficient lists");
    const auto coeffs = s.coefficients;
    return replicated_cube(
        s, coeffs.size(),
        [coeffs](std::size_t i, double z) {
          const double t = z - static_cast<double>(i - 1);
          double acc = 0.0;
          for (auto it = coeffs[i - 1].rbegin(); it != coeffs[i - 1].rend(); ++it) acc = acc * t + *it;
          return acc;
        },
        std::nullopt, 0);
  }
  if (s.name == "constant") {
    const double c = s.value;
    return circle_target(s, [c](double) { return c; }, ChartKind::linear);
  }
  if (s.name == "sin_circle")
    return circle_target(s, [](double t) { return std::sin(t); }, ChartKind::linear);
  if (s.name == "sin_torus") {
    if (s.factors && *s.factors != 2) throw ConfigError("sin_torus has L = 2");
    Atlas a = circle_for(s, ChartKind::angle);
    Atlas b = circle_for(s, ChartKind::angle);
    auto ga = circle_angle_function(a, [](double t) { return std::sin(t); });
    auto gb = circle_angle_function(b, [](double t) { return std::cos(2.0 * t); });
    return build_manifold_target({ManifoldFactor{a, std::move(ga), std::nullopt},
                                  ManifoldFactor{b, std::move(gb), std::nullopt}},
                                 s.name);
  }
  throw ConfigError("unknown target '" + s.name + "'");
}

}  // namespace

std::string to_string(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::construct: return "construct";
    case ExperimentKind::audit: return "audit";
    case ExperimentKind::rate_sweep: return "rate_sweep";
    case ExperimentKind::compare: return "compare";
    case ExperimentKind::verify_gadgets: return "verify_gadgets";
  }
  return "construct";
}

ExperimentKind parse_experiment_kind(const std::string& name) {
  if (name == "construct") return ExperimentKind::construct;
  if (name == "audit") return ExperimentKind::audit;
  if (name == "rate_sweep" || name == "rate") return ExperimentKind::rate_sweep;
  if (name == "compare") return ExperimentKind::compare;
  if (name == "verify_gadgets" || name == "gadgets") return ExperimentKind::verify_gadgets;
  throw ConfigError("unknown experiment kind '" + name + "'");
}

std::vector<std::string> target_names() {
  return {"fig3",     "fig3_slice", "abs_kink",   "poly",
          "smooth_sin", "constant", "sin_circle", "sin_torus"};
}

PiecewiseTarget make_target(const TargetSpec& spec) {
  PiecewiseTarget t = build_registered(spec);
  const OverlapReport r = validate_overlap_consistency(t, 4096, 1e-9);
  if (!r.pass)
    throw ValidationError("target '" + spec.name + "' is inconsistent on region overlaps",
                          r.witness, r.witness_discrepancy);
  return t;
}

void ExperimentConfig::validate() const {
  if (width < 2) throw ConfigError("width must be at least 2");
  if (grid < 2) throw ConfigError("grid must be at least 2");
  if (!(boundary_band >= 0.0)) throw ConfigError("boundary_band must be nonnegative");
  for (std::size_t k = 0; k < widths.size(); ++k) {
    if (widths[k] < 2) throw ConfigError("widths must be at least 2");
    if (k > 0 && widths[k] <= widths[k - 1]) throw ConfigError("widths must be strictly increasing");
  }
  if ((kind == ExperimentKind::rate_sweep || kind == ExperimentKind::compare) && widths.size() < 3)
    throw ConfigError("rate fits need at least 3 widths");
  if (expect != "separation" && expect != "parity")
    throw ConfigError("compare.expect must be 'separation' or 'parity'");
  if (gadget_experts == 0 || gadget_points == 0)
    throw ConfigError("gadget audit needs E >= 1 and points >= 1");
  if (certification.initial_width == 0 || certification.max_width == 0 ||
      certification.audit_samples == 0)
    throw ConfigError("certification widths and samples must be positive");
  if (!(certification.safety > 0.0 && certification.safety <= 1.0))
    throw ConfigError("certification.safety must lie in (0, 1]");
}

ExperimentConfig config_from_json(const json& j) {
  check_keys(j, "config",
             {"kind", "seed", "out", "width", "widths", "grid", "boundary_band", "target",
              "certification", "audit", "compare", "rate", "gadgets"});
  ExperimentConfig c;
  const std::string top = "config";
  if (j.contains("kind")) c.kind = parse_experiment_kind(get<std::string>(j, "kind", top));
  if (j.contains("seed")) c.seed = get<std::uint64_t>(j, "seed", top);
  if (j.contains("out")) c.out = get<std::string>(j, "out", top);
  if (j.contains("width")) c.width = get_count(j, "width", top);
  if (j.contains("widths")) c.widths = get<std::vector<std::size_t>>(j, "widths", top);
  if (j.contains("grid")) c.grid = get_count(j, "grid", top);
  if (j.contains("boundary_band")) c.boundary_band = get<double>(j, "boundary_band", top);
  if (j.contains("target")) c.target = target_from_json(j.at("target"));
  if (j.contains("certification")) {
    const json& s = j.at("certification");
    const std::string w = "[certification]";
    check_keys(s, w, {"initial_width", "max_width", "audit_samples", "safety",
                      "samples_per_width", "ridge"});
    auto& o = c.certification;
    if (s.contains("initial_width")) o.initial_width = get_count(s, "initial_width", w);
    if (s.contains("max_width")) o.max_width = get_count(s, "max_width", w);
    if (s.contains("audit_samples")) o.audit_samples = get_count(s, "audit_samples", w);
    if (s.contains("safety")) o.safety = get<double>(s, "safety", w);
    if (s.contains("samples_per_width")) o.samples_per_width = get_count(s, "samples_per_width", w);
    if (s.contains("ridge")) o.ridge = get<double>(s, "ridge", w);
  }
  if (j.contains("audit")) {
    const json& s = j.at("audit");
    check_keys(s, "[audit]", {"corrupt_gate"});
    if (s.contains("corrupt_gate")) {
      const auto rows = get<std::vector<std::size_t>>(s, "corrupt_gate", "[audit]");
      if (rows.size() != 2) throw ConfigError("audit.corrupt_gate needs two row indices");
      c.corrupt_gate = std::make_pair(rows[0], rows[1]);
    }
  }
  if (j.contains("compare")) {
    const json& s = j.at("compare");
    check_keys(s, "[compare]", {"expect", "method"});
    if (s.contains("expect")) c.expect = get<std::string>(s, "expect", "[compare]");
    if (s.contains("method")) {
      const auto m = get<std::string>(s, "method", "[compare]");
      if (m == "pwl_global_1d") c.dense_method = DenseMethod::pwl_global_1d;
      else if (m == "ls_random_features") c.dense_method = DenseMethod::ls_random_features;
      else throw ConfigError("unknown dense method '" + m + "'");
    }
  }
  if (j.contains("rate")) {
    const json& s = j.at("rate");
    check_keys(s, "[rate]", {"max_slope"});
    if (s.contains("max_slope")) c.max_slope = get<double>(s, "max_slope", "[rate]");
  }
  if (j.contains("gadgets")) {
    const json& s = j.at("gadgets");
    check_keys(s, "[gadgets]", {"E", "points"});
    if (s.contains("E")) c.gadget_experts = get_count(s, "E", "[gadgets]");
    if (s.contains("points")) c.gadget_points = get_count(s, "points", "[gadgets]");
  }
  c.validate();
  return c;
}

ExperimentConfig parse_config(const std::string& text) {
  const auto first = text.find_first_not_of(" \t\r\n");
  json j;
  if (first != std::string::npos && text[first] == '{') {
    try {
      j = json::parse(text);
    } catch (const json::parse_error& e) {
      throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
  } else {
    try {
      const toml::table tbl = toml::parse(text);
      std::ostringstream os;
      os << toml::json_formatter{tbl};
      j = json::parse(os.str());
    } catch (const toml::parse_error& e) {
      const auto& where = e.source().begin;
      throw ConfigError("config is not valid TOML (line " + std::to_string(where.line) +
                        ", column " + std::to_string(where.column) +
                        "): " + std::string(e.description()));
    }
  }
  return config_from_json(j);
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

}  // namespace moeapprox
