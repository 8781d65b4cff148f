#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "moeapprox/ffn.hpp"
#include "moeapprox/grid.hpp"
#include "moeapprox/moe.hpp"
#include "moeapprox/targets.hpp"

namespace moeapprox {

/// tau_i(x) = ReLU(x - (i-1)) + ReLU(x - i) - 2 ReLU(x - (i - 1/2)) for
/// i = 1..E as one two-layer network of width 3E. tau_i > 0 exactly on
/// (i-1, i) and is exactly 0.0 elsewhere.
FfnNetwork build_indicator_gadget(std::size_t experts);

struct CertificationOptions {
  std::size_t initial_width = 8;
  std::size_t max_width = 4096;
  /// Audit resolution; the verification set is 4x denser.
  std::size_t audit_samples = 4096;
  /// Certify against safety / (4E).
  double safety = 0.5;
  std::size_t samples_per_width = 10;
  double ridge = 1e-10;
  std::uint64_t seed = 0;
};

struct PartitionFit {
  FfnNetwork tau_net;            ///< R^D -> R^E, concatenation of the E fits
  double certified_tol = 0.0;    ///< max_i sup over the verification set |rho_i - tau_i|
  double target_tol = 0.0;       ///< safety / (4E)
  std::size_t width = 0;         ///< per-tau hidden width that passed
  std::size_t verification_points = 0;
  std::vector<std::pair<std::size_t, double>> history;  ///< (width, tolerance) per attempt
};

/// Fits tau_i ~ rho_i with random-feature two-layer networks, doubling the
/// width until the verification sup error is at most target_tol. Throws
/// CertificationError with the best tolerance when max_width is not enough.
PartitionFit fit_partition_approximators(const Atlas& atlas, const CertificationOptions& options);

/// Sup over the verification set of |rho_i - tau_i|, maximised over i.
double partition_fit_error(const Atlas& atlas, const FfnNetwork& tau_net, std::size_t points);

/// Layer 2l-1 (all experts output (state, tau(x_l)) under constant gating)
/// and the [0 | I] gating matrix of layer 2l.
struct RoutingBlock {
  MoeLayer prelayer;
  std::vector<double> gate_matrix;  ///< experts x (state_dim + experts), row-major
  std::size_t state_dim = 0;
  std::size_t experts = 0;
  FfnNetwork tau_net;
  double certified_tol = 0.0;

  GatingNetwork gating() const;
};

struct RoutingLayout {
  std::vector<std::size_t> tau_inputs;  ///< state coordinates tau reads; default: leading ones
  std::vector<bool> nonneg;             ///< per state coordinate; default: all signed
};

RoutingBlock build_routing_block(const FfnNetwork& tau_net, std::size_t state_dim,
                                 std::size_t experts, const RoutingLayout& layout = {},
                                 double certified_tol = 0.0);

/// Affine network of a linear chart.
FfnNetwork chart_network(const LinearChartParams& chart);

/// g o psi reading the first psi.input_dim() coordinates of an input of
/// length input_dim (the trailing routing scores are ignored). Depth 3.
FfnNetwork build_expert_shallow(const FfnNetwork& g, const FfnNetwork& psi, std::size_t input_dim);
/// g o phi for a linear chart; phi is folded into the first layer. Depth 2.
FfnNetwork build_expert_shallow(const FfnNetwork& g, const LinearChartParams& chart,
                                std::size_t input_dim);

/// Expert of a deep block: reads `reads` from (state, scores), writes
/// local(x_l) into state coordinate `slot` and copies every other state
/// coordinate through.
FfnNetwork build_slot_expert(const FfnNetwork& local, std::size_t state_dim, std::size_t extra,
                             std::span<const std::size_t> reads, std::size_t slot,
                             const std::vector<bool>& nonneg);

struct ConstructionOptions {
  CertificationOptions routing;
  /// Points per chart (or piece) used to measure expert errors.
  std::size_t verify_points = 16384;
  std::size_t chart_samples_per_width = 10;
  std::uint64_t seed = 0;
};

/// Where factor l lives in a constructed network.
struct FactorLayout {
  std::size_t prelayer = 0;      ///< layer index computing tau_l
  std::size_t expert_layer = 0;  ///< layer index routed by tau_l
  std::size_t value_slot = 0;    ///< coordinate of the expert output holding f_l
};

struct FactorReport {
  std::vector<double> expert_fit_errors;  ///< sup over the piece's region of |f_{l,i} - expert|
  std::vector<double> local_fit_errors;   ///< g alone on its own domain
  std::vector<double> chart_fit_errors;   ///< psi vs phi; empty for linear charts
  bool routing_exact = false;             ///< indicator gadget (no certification needed)
  double certified_tol = 0.0;
  double target_tol = 0.0;
  std::size_t routing_width = 0;
  std::vector<std::pair<std::size_t, double>> certification_history;
};

struct ConstructionReport {
  std::string construction;  ///< thm2, cor1, thm3, thm4
  std::string target;
  std::size_t factors = 0;
  std::size_t experts = 0;
  std::size_t layers = 0;
  std::size_t expert_depth = 0;   ///< max expert depth over layers
  std::size_t expert_width = 0;   ///< requested local width m
  std::vector<std::size_t> layer_widths;  ///< max expert width per layer, read from the network
  std::vector<FactorLayout> layout;
  std::vector<FactorReport> factor_reports;
  double max_expert_fit_error = 0.0;
  std::size_t active_params = 0;
  std::size_t total_params = 0;
};

struct Construction {
  MoeNetwork net;
  ConstructionReport report;
};

/// Depth-2 MoE for a single-factor manifold target: linear charts give the
/// depth-2 experts g_i o phi_i, nonlinear charts the depth-3 g_i o psi_i.
Construction assemble_shallow_moe(const PiecewiseTarget& target, std::size_t expert_width,
                                  const ConstructionOptions& options = {});

/// Depth-2L MoE for a cube-grid target with exact indicator routing and
/// piecewise-linear experts of `expert_width` knots.
Construction assemble_warmup_moe(const PiecewiseTarget& target, std::size_t expert_width);

/// Depth-2L MoE for a product-manifold target: embed (x, 0_L), one certified
/// routing block and one slot-writing expert layer per factor, readout of the
/// last L coordinates.
Construction assemble_deep_moe(const PiecewiseTarget& target, std::size_t expert_width,
                               const ConstructionOptions& options = {});

/// Picks the construction matching the target's kind and factor count.
Construction assemble(const PiecewiseTarget& target, std::size_t expert_width,
                      const ConstructionOptions& options = {});

/// Grid audit of the final error estimate: the end-to-end error next to each
/// expert's own error over the grid points of its region.
struct ErrorChainReport {
  double end_to_end = 0.0;
  Vector argmax;
  std::vector<std::vector<double>> grid_expert_errors;  ///< [factor][piece]
  double max_expert_fit_error = 0.0;  ///< max of the grid and the report values
  std::size_t evaluated = 0;
  std::size_t excluded = 0;
  bool holds = false;                 ///< end_to_end <= max_expert_fit_error + slack
};

inline constexpr double kErrorChainSlack = 1e-9;

ErrorChainReport audit_error_chain(const Construction& c, const PiecewiseTarget& target,
                                   const GridSpec& grid);

/// Grid over the target's natural domain: [0,E]^L for cube grids, angle
/// boxes mapped onto circles for circle factors, with the boundary band
/// excluded.
GridSpec target_grid(const PiecewiseTarget& target, std::size_t points_per_dim,
                     double boundary_band = 1e-12);

nlohmann::json to_json(const ConstructionReport& report);

}  // namespace moeapprox
