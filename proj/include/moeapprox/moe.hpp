#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "json.hpp"
#include "moeapprox/ffn.hpp"

namespace moeapprox {

/// Routing score function g: R^d_in -> R^E. Linear (W_R x) by default; an
/// MLP gate is available as an option.
class GatingNetwork {
 public:
  enum class Mode { linear, mlp };

  /// `weight` is row-major, experts x in_dim.
  static GatingNetwork linear(std::size_t experts, std::size_t in_dim, std::vector<double> weight);
  /// W_R = 0: every expert scores the same.
  static GatingNetwork constant(std::size_t experts, std::size_t in_dim);
  static GatingNetwork mlp(FfnNetwork net);

  Mode mode() const noexcept { return mode_; }
  std::size_t expert_count() const noexcept { return experts_; }
  std::size_t input_dim() const noexcept { return in_dim_; }
  std::size_t param_count() const noexcept;
  const std::vector<double>& weight() const noexcept { return weight_; }
  const FfnNetwork& network() const;

  Vector scores(std::span<const double> x) const;

 private:
  GatingNetwork() = default;
  Mode mode_ = Mode::linear;
  std::size_t experts_ = 0;
  std::size_t in_dim_ = 0;
  std::vector<double> weight_;
  std::optional<FfnNetwork> net_;
};

/// Indices of the k largest scores, largest first; equal scores are ordered
/// by smaller index.
std::vector<std::size_t> top_k_indices(std::span<const double> scores, std::size_t k);

/// Softmax of scores[selected] with max subtraction.
Vector softmax_weights(std::span<const double> scores, std::span<const std::size_t> selected);

/// Gating plus a bank of E experts sharing input and output dimension.
/// Only the top-K experts run for a given input. Per-expert evaluation
/// counters are atomic so concurrent sweeps can still audit sparsity.
class MoeLayer {
 public:
  MoeLayer(GatingNetwork gating, std::vector<FfnNetwork> experts, std::size_t top_k = 1);
  MoeLayer(const MoeLayer& other);
  MoeLayer& operator=(const MoeLayer& other);
  MoeLayer(MoeLayer&&) noexcept = default;
  MoeLayer& operator=(MoeLayer&&) noexcept = default;
  ~MoeLayer() = default;

  std::size_t input_dim() const noexcept { return experts_.front().input_dim(); }
  std::size_t output_dim() const noexcept { return experts_.front().output_dim(); }
  std::size_t expert_count() const noexcept { return experts_.size(); }
  std::size_t top_k() const noexcept { return top_k_; }
  const GatingNetwork& gating() const noexcept { return gating_; }
  const std::vector<FfnNetwork>& experts() const noexcept { return experts_; }

  Vector gate_scores(std::span<const double> x) const;

  /// Weighted sum of the selected experts. With K = 1 the selected expert's
  /// output is returned unscaled. `selected`, when given, receives the
  /// chosen indices.
  Vector eval(std::span<const double> x, std::vector<std::size_t>* selected = nullptr) const;

  std::uint64_t eval_count(std::size_t expert) const;
  void reset_counters() const noexcept;

 private:
  GatingNetwork gating_;
  std::vector<FfnNetwork> experts_;
  std::size_t top_k_;
  std::unique_ptr<std::atomic<std::uint64_t>[]> counters_;
};

/// Selected expert indices per layer and the state emitted by every layer.
struct MoeTrace {
  std::vector<std::vector<std::size_t>> selected;
  std::vector<Vector> states;
};

/// embed -> MoE layers -> readout. Embed and readout are optional dense maps.
class MoeNetwork {
 public:
  MoeNetwork(std::optional<FfnNetwork> embed, std::vector<MoeLayer> layers,
             std::optional<FfnNetwork> readout);

  std::size_t input_dim() const noexcept { return input_dim_; }
  std::size_t output_dim() const noexcept { return output_dim_; }
  std::size_t depth() const noexcept { return layers_.size(); }
  const std::optional<FfnNetwork>& embed() const noexcept { return embed_; }
  const std::optional<FfnNetwork>& readout() const noexcept { return readout_; }
  const std::vector<MoeLayer>& layers() const noexcept { return layers_; }

  Vector eval(std::span<const double> x, MoeTrace* trace = nullptr) const;

 private:
  std::optional<FfnNetwork> embed_;
  std::vector<MoeLayer> layers_;
  std::optional<FfnNetwork> readout_;
  std::size_t input_dim_ = 0;
  std::size_t output_dim_ = 0;
};

/// Parameters touched per input: embed + readout + per layer the gate and K
/// experts. Throws AccountingError when experts in a layer differ in size.
std::size_t active_param_count(const MoeNetwork& net);

/// Parameters stored, all experts included.
std::size_t total_param_count(const MoeNetwork& net);

inline constexpr int kNetworkFormatVersion = 1;

nlohmann::json to_json(const MoeNetwork& net);
/// Rejects documents whose "version" is not kNetworkFormatVersion.
MoeNetwork moe_from_json(const nlohmann::json& j);

}  // namespace moeapprox
