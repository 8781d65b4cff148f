#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "json.hpp"

namespace moeapprox {

using Vector = std::vector<double>;

/// One affine map y = W x + b, optionally followed by ReLU.
struct DenseLayer {
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  std::vector<double> weight;  ///< row-major, out_dim x in_dim
  std::vector<double> bias;    ///< out_dim
  bool relu = false;

  double w(std::size_t row, std::size_t col) const { return weight[row * in_dim + col]; }
  double& w(std::size_t row, std::size_t col) { return weight[row * in_dim + col]; }

  static DenseLayer zeros(std::size_t in_dim, std::size_t out_dim, bool relu);
};

/// Dense feedforward ReLU network. Immutable after construction, so it can be
/// shared across threads and evaluated concurrently.
class FfnNetwork {
 public:
  /// Validates that layer dimensions chain and that the last layer is linear.
  explicit FfnNetwork(std::vector<DenseLayer> layers);

  std::size_t input_dim() const noexcept { return layers_.front().in_dim; }
  std::size_t output_dim() const noexcept { return layers_.back().out_dim; }
  /// Number of affine maps.
  std::size_t depth() const noexcept { return layers_.size(); }
  /// Largest hidden dimension; 0 for a single affine map.
  std::size_t width() const noexcept;
  std::size_t param_count() const noexcept;

  const std::vector<DenseLayer>& layers() const noexcept { return layers_; }

  Vector eval(std::span<const double> x) const;

 private:
  /// Nonzero weights by column, for sparse layers only.
  struct SparseCols {
    std::vector<std::uint32_t> start;  ///< in_dim + 1 offsets; empty when dense
    std::vector<std::uint32_t> rows;
    std::vector<double> values;
  };

  void apply(std::size_t t, const Vector& h, Vector& out) const;

  std::vector<DenseLayer> layers_;
  std::vector<SparseCols> sparse_;
};

/// Knots of a continuous piecewise-linear function.
struct PwlSpec {
  std::vector<double> knots;  ///< strictly increasing
  std::vector<double> values;
};

/// Two-layer network reproducing the piecewise-linear interpolant of `spec`
/// on [first knot, last knot] and extending its end slopes outside. Hidden
/// width equals the knot count: ReLU(x - t0) and ReLU(t0 - x) carry the first
/// slope, one hinge per interior knot carries each change of slope.
FfnNetwork encode_pwl(const PwlSpec& spec);

/// Runs every network on the same input and concatenates the outputs.
/// Hidden layers are stacked block-diagonally, so all nets must share input
/// dimension and depth.
FfnNetwork ffn_concat(std::span<const FfnNetwork> nets);

/// Output (x[0:passthrough_dims], net(x)). Copies of x travel through the
/// hidden layers as ReLU(x) when the domain is nonnegative and as
/// ReLU(x) - ReLU(-x) otherwise; both are exact in floating point.
FfnNetwork ffn_with_passthrough(const FfnNetwork& net, std::size_t passthrough_dims,
                                bool nonneg_domain);

// Network algebra used by the constructions.

/// Single linear map (depth 1).
FfnNetwork affine_network(std::size_t in_dim, std::size_t out_dim, std::vector<double> weight,
                          std::vector<double> bias);

/// Identity on `dim` coordinates realised with `depth` affine maps.
/// `nonneg[i]` selects the one-neuron form for coordinate i.
FfnNetwork identity_network(std::size_t depth, const std::vector<bool>& nonneg);

/// outer(inner(x)); the last affine map of `inner` is folded into the first
/// affine map of `outer`, so depth = depth(outer) + depth(inner) - 1.
FfnNetwork compose(const FfnNetwork& outer, const FfnNetwork& inner);

/// Re-reads `net` from a wider input: net input j is coordinate coords[j].
FfnNetwork lift_input(const FfnNetwork& net, std::size_t new_input_dim,
                      std::span<const std::size_t> coords);

/// Output j of the result is output order[j] of `net` (rows copied).
FfnNetwork select_outputs(const FfnNetwork& net, std::span<const std::size_t> order);

nlohmann::json to_json(const FfnNetwork& net);
FfnNetwork ffn_from_json(const nlohmann::json& j);

}  // namespace moeapprox
