#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "moeapprox/approx_fit.hpp"
#include "moeapprox/constructor.hpp"
#include "moeapprox/grid.hpp"
#include "moeapprox/moe.hpp"
#include "moeapprox/targets.hpp"

namespace moeapprox {

enum class ExperimentKind { construct, audit, rate_sweep, compare, verify_gadgets };

std::string to_string(ExperimentKind kind);
ExperimentKind parse_experiment_kind(const std::string& name);

/// Built-in target selector. Unused fields are ignored by targets that do
/// not take them.
struct TargetSpec {
  std::string name = "fig3";
  std::optional<std::size_t> experts;   ///< E (pieces or charts per factor)
  std::optional<std::size_t> factors;   ///< L
  double overlap_frac = 0.25;
  ChartKind charts = ChartKind::linear;
  bool charts_set = false;
  std::vector<std::vector<double>> coefficients;  ///< poly: one list per piece
  double value = 1.0;                             ///< constant
};

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::construct;
  TargetSpec target;
  std::size_t width = 64;
  std::vector<std::size_t> widths{8, 16, 32, 64, 128, 256};
  std::size_t grid = 512;         ///< points per parameter dimension
  double boundary_band = 1e-12;
  std::uint64_t seed = 0;
  std::filesystem::path out = "out";
  CertificationOptions certification;
  /// audit: swap these two rows of every routing gate matrix first.
  std::optional<std::pair<std::size_t, std::size_t>> corrupt_gate;
  /// compare: "separation" (MoE slope <= dense slope - 0.5) or "parity" (|gap| <= 0.3).
  std::string expect = "separation";
  DenseMethod dense_method = DenseMethod::pwl_global_1d;
  /// rate_sweep: fail the run when the fitted slope exceeds this.
  std::optional<double> max_slope;
  std::size_t gadget_experts = 8;
  std::size_t gadget_points = 100000;

  /// Throws ConfigError on a broken invariant.
  void validate() const;
};

/// Parses a TOML document (or JSON when the text starts with '{').
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);
ExperimentConfig config_from_json(const nlohmann::json& j);

/// Registry: fig3, fig3_slice, abs_kink, poly, smooth_sin, constant,
/// sin_circle, sin_torus.
PiecewiseTarget make_target(const TargetSpec& spec);
std::vector<std::string> target_names();

struct RoutingWitness {
  Vector point;
  std::size_t factor = 0;
  std::size_t selected = 0;
  std::vector<std::size_t> admissible;
};

struct RoutingAuditSummary {
  std::size_t checked = 0;
  std::size_t passed = 0;
  std::size_t excluded = 0;
  double pass_fraction = 0.0;
  std::vector<RoutingWitness> witnesses;  ///< first failures by grid index, at most 10

  bool all_pass() const noexcept { return checked > 0 && passed == checked; }
};

inline constexpr std::size_t kMaxWitnesses = 10;

/// Checks at every grid point outside the boundary band that the expert
/// chosen for factor l (read at layer 2l + 1) owns a region containing x_l.
RoutingAuditSummary routing_audit(const MoeNetwork& net, const PiecewiseTarget& target,
                                  const GridSpec& grid);

namespace serial {
RoutingAuditSummary routing_audit(const MoeNetwork& net, const PiecewiseTarget& target,
                                  const GridSpec& grid);
}  // namespace serial

/// Copy of `net` with rows a and b of every linear gate that routes on
/// scores (the [0 | I] layers) swapped.
MoeNetwork corrupt_gate_rows(const MoeNetwork& net, std::size_t a, std::size_t b);

struct ComparisonRow {
  std::size_t m = 0;
  double moe_error = 0.0;
  std::size_t moe_active_params = 0;
  std::size_t dense_width = 0;
  double dense_error = 0.0;
  std::size_t dense_params = 0;
  bool clamped = false;
};

struct ComparisonReport {
  std::vector<ComparisonRow> rows;
  RateReport moe_rate;
  RateReport dense_rate;
  double slope_gap = 0.0;  ///< moe slope - dense slope
  std::size_t grid_points = 0;
};

/// Dense width matched to the MoE budget: the smallest m' whose two-layer
/// network has at least `active_params` parameters and whose uniform knots on
/// a target of `pieces` unit pieces miss every interior breakpoint, i.e.
/// gcd(m' - 1, pieces) = 1.
std::size_t matched_dense_width(std::size_t active_params, std::size_t pieces = 1);

/// Both arms on one shared 1-d grid. Slopes are fitted against each arm's
/// own hidden width.
ComparisonReport compare_moe_dense(const PiecewiseTarget& target,
                                   std::span<const std::size_t> widths, std::size_t grid_points,
                                   DenseMethod method = DenseMethod::pwl_global_1d,
                                   std::uint64_t seed = 0);

struct RatePointRecord {
  std::size_t m = 0;
  double error = 0.0;
  std::size_t active_params = 0;
  std::string construction;
  bool clamped = false;
  bool refinement_ok = true;
};

struct RateSweep {
  std::vector<RatePointRecord> points;
  RateReport rate;
};

/// Grid for measuring a construction of width m: cube-grid targets get at
/// least `min_points` points per dimension, with every knot midpoint of the
/// interpolants on the grid; manifold targets use target_grid.
GridSpec sweep_grid(const PiecewiseTarget& target, std::size_t m, std::size_t min_points,
                    double boundary_band);

RateSweep rate_sweep(const PiecewiseTarget& target, std::span<const std::size_t> widths,
                     std::size_t min_points, double boundary_band,
                     const ConstructionOptions& options = {});

struct GadgetAudit {
  std::size_t experts = 0;
  std::size_t points = 0;
  std::size_t sign_failures = 0;   ///< tau_i > 0 disagrees with x in (i-1, i)
  std::size_t value_failures = 0;  ///< differs from the closed-form tent
  Vector first_failure;

  bool pass() const noexcept { return sign_failures == 0 && value_failures == 0; }
};

/// Seeded uniform points on [0, E] plus every integer and half-integer.
GadgetAudit verify_gadgets(std::size_t experts, std::size_t points, std::uint64_t seed);

void save_network(const MoeNetwork& net, const std::filesystem::path& path);
/// Throws ParseError (with the file and byte position) on malformed input.
MoeNetwork load_network(const std::filesystem::path& path);

/// Rate-sweep CSV with header m,error,active_params,construction,target,seed.
std::string rate_csv(const RateSweep& sweep, const std::string& target, std::uint64_t seed);
std::string comparison_csv(const ComparisonReport& report, const std::string& target,
                           std::uint64_t seed);

struct PlotSeries {
  std::string label;
  std::vector<std::pair<double, double>> points;
};

/// Log-log line plot rendered as a standalone SVG document.
std::string svg_loglog_plot(const std::string& title, const std::string& x_label,
                            const std::string& y_label, std::span<const PlotSeries> series);

struct Check {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct RunResult {
  std::vector<Check> checks;
  nlohmann::json index;  ///< {"version":1,"artifacts":[...]}
  std::filesystem::path index_path;

  bool passed() const noexcept;
};

/// Runs the pipeline, writes artifacts plus index.json under config.out.
RunResult run_experiment(const ExperimentConfig& config);

/// Human-readable summary of a saved network.
std::string describe_network(const MoeNetwork& net);

nlohmann::json to_json(const RoutingAuditSummary& audit);
nlohmann::json to_json(const ErrorChainReport& chain);
nlohmann::json to_json(const ErrorReport& report);
nlohmann::json to_json(const RateReport& report);

}  // namespace moeapprox
