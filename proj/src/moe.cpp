#include "moeapprox/moe.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "moeapprox/errors.hpp"

namespace moeapprox {

GatingNetwork GatingNetwork::linear(std::size_t experts, std::size_t in_dim,
                                    std::vector<double> weight) {
  if (experts == 0 || in_dim == 0) throw SpecError("gating needs E >= 1 and input_dim >= 1");
  if (weight.size() != experts * in_dim)
    throw SpecError("gating weight must have E x input_dim entries");
  GatingNetwork g;
  g.mode_ = Mode::linear;
  g.experts_ = experts;
  g.in_dim_ = in_dim;
  g.weight_ = std::move(weight);
  return g;
}

GatingNetwork GatingNetwork::constant(std::size_t experts, std::size_t in_dim) {
  return linear(experts, in_dim, std::vector<double>(experts * in_dim, 0.0));
}

GatingNetwork GatingNetwork::mlp(FfnNetwork net) {
  GatingNetwork g;
  g.mode_ = Mode::mlp;
  g.experts_ = net.output_dim();
  g.in_dim_ = net.input_dim();
  g.net_ = std::move(net);
  return g;
}

std::size_t GatingNetwork::param_count() const noexcept {
  return mode_ == Mode::linear ? weight_.size() : net_->param_count();
}

const FfnNetwork& GatingNetwork::network() const {
  if (!net_) throw SpecError("linear gating has no network");
  return *net_;
}

Vector GatingNetwork::scores(std::span<const double> x) const {
  if (x.size() != in_dim_)
    throw ShapeError("gating expects " + std::to_string(in_dim_) + " inputs, got " +
                     std::to_string(x.size()));
  if (mode_ == Mode::mlp) return net_->eval(x);
  Vector s(experts_);
  for (std::size_t e = 0; e < experts_; ++e) {
    const double* row = weight_.data() + e * in_dim_;
    double acc = 0.0;
    for (std::size_t c = 0; c < in_dim_; ++c) acc += row[c] * x[c];
    s[e] = acc;
  }
  return s;
}

std::vector<std::size_t> top_k_indices(std::span<const double> scores, std::size_t k) {
  if (k == 0 || k > scores.size()) throw SpecError("top-K needs 1 <= K <= E");
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](std::size_t a, std::size_t b) {
                      if (scores[a] != scores[b]) return scores[a] > scores[b];
                      return a < b;
                    });
  idx.resize(k);
  return idx;
}

Vector softmax_weights(std::span<const double> scores, std::span<const std::size_t> selected) {
  double top = -INFINITY;
  for (std::size_t i : selected) top = std::max(top, scores[i]);
  Vector w(selected.size());
  double total = 0.0;
  for (std::size_t k = 0; k < selected.size(); ++k) {
    w[k] = std::exp(scores[selected[k]] - top);
    total += w[k];
  }
  for (double& v : w) v /= total;
  return w;
}

MoeLayer::MoeLayer(GatingNetwork gating, std::vector<FfnNetwork> experts, std::size_t top_k)
    : gating_(std::move(gating)), experts_(std::move(experts)), top_k_(top_k) {
  if (experts_.empty()) throw SpecError("MoE layer needs at least one expert");
  if (top_k_ == 0 || top_k_ > experts_.size()) throw SpecError("MoE layer needs 1 <= K <= E");
  if (gating_.expert_count() != experts_.size())
    throw SpecError("gating emits " + std::to_string(gating_.expert_count()) +
                    " scores for " + std::to_string(experts_.size()) + " experts");
  for (const auto& e : experts_)
    if (e.input_dim() != experts_.front().input_dim() ||
        e.output_dim() != experts_.front().output_dim())
      throw CompositionError("experts in one layer must share input and output dimension");
  if (gating_.input_dim() != input_dim())
    throw CompositionError("gating and experts read different input dimensions");
  counters_ = std::make_unique<std::atomic<std::uint64_t>[]>(experts_.size());
  reset_counters();
}

MoeLayer::MoeLayer(const MoeLayer& other)
    : gating_(other.gating_), experts_(other.experts_), top_k_(other.top_k_) {
  counters_ = std::make_unique<std::atomic<std::uint64_t>[]>(experts_.size());
  for (std::size_t e = 0; e < experts_.size(); ++e)
    counters_[e].store(other.counters_[e].load(std::memory_order_relaxed),
                       std::memory_order_relaxed);
}

MoeLayer& MoeLayer::operator=(const MoeLayer& other) {
  if (this != &other) {
    MoeLayer copy(other);
    *this = std::move(copy);
  }
  return *this;
}

Vector MoeLayer::gate_scores(std::span<const double> x) const { return gating_.scores(x); }

Vector MoeLayer::eval(std::span<const double> x, std::vector<std::size_t>* selected) const {
  const Vector scores = gate_scores(x);
  const auto chosen = top_k_indices(scores, top_k_);
  if (selected) *selected = chosen;
  for (std::size_t e : chosen) counters_[e].fetch_add(1, std::memory_order_relaxed);
  if (chosen.size() == 1) return experts_[chosen.front()].eval(x);

  const Vector w = softmax_weights(scores, chosen);
  Vector y(output_dim(), 0.0);
  for (std::size_t k = 0; k < chosen.size(); ++k) {
    const Vector fk = experts_[chosen[k]].eval(x);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += w[k] * fk[i];
  }
  return y;
}

std::uint64_t MoeLayer::eval_count(std::size_t expert) const {
  if (expert >= experts_.size()) throw SpecError("expert index out of range");
  return counters_[expert].load(std::memory_order_relaxed);
}

void MoeLayer::reset_counters() const noexcept {
  for (std::size_t e = 0; e < experts_.size(); ++e)
    counters_[e].store(0, std::memory_order_relaxed);
}

MoeNetwork::MoeNetwork(std::optional<FfnNetwork> embed, std::vector<MoeLayer> layers,
                       std::optional<FfnNetwork> readout)
    : embed_(std::move(embed)), layers_(std::move(layers)), readout_(std::move(readout)) {
  std::size_t dim = 0;
  if (embed_) {
    input_dim_ = embed_->input_dim();
    dim = embed_->output_dim();
  } else if (!layers_.empty()) {
    input_dim_ = layers_.front().input_dim();
    dim = input_dim_;
  } else if (readout_) {
    input_dim_ = readout_->input_dim();
    dim = input_dim_;
  } else {
    throw CompositionError("MoE network needs an embed, a layer or a readout");
  }
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    if (layers_[l].input_dim() != dim)
      throw CompositionError("MoE layer " + std::to_string(l) + " reads " +
                             std::to_string(layers_[l].input_dim()) + " values, receives " +
                             std::to_string(dim));
    dim = layers_[l].output_dim();
  }
  if (readout_) {
    if (readout_->input_dim() != dim) throw CompositionError("readout input dimension mismatch");
    dim = readout_->output_dim();
  }
  output_dim_ = dim;
}

Vector MoeNetwork::eval(std::span<const double> x, MoeTrace* trace) const {
  if (x.size() != input_dim_)
    throw ShapeError("MoE network expects " + std::to_string(input_dim_) + " inputs, got " +
                     std::to_string(x.size()));
  if (trace) {
    trace->selected.clear();
    trace->states.clear();
  }
  Vector state = embed_ ? embed_->eval(x) : Vector(x.begin(), x.end());
  for (const auto& layer : layers_) {
    std::vector<std::size_t> chosen;
    state = layer.eval(state, trace ? &chosen : nullptr);
    if (trace) {
      trace->selected.push_back(std::move(chosen));
      trace->states.push_back(state);
    }
  }
  if (readout_) state = readout_->eval(state);
  return state;
}

std::size_t active_param_count(const MoeNetwork& net) {
  std::size_t n = 0;
  if (net.embed()) n += net.embed()->param_count();
  if (net.readout()) n += net.readout()->param_count();
  for (std::size_t l = 0; l < net.layers().size(); ++l) {
    const auto& layer = net.layers()[l];
    const std::size_t per_expert = layer.experts().front().param_count();
    for (const auto& e : layer.experts())
      if (e.param_count() != per_expert)
        throw AccountingError("layer " + std::to_string(l) +
                              " has experts of different parameter counts");
    n += layer.gating().param_count() + layer.top_k() * per_expert;
  }
  return n;
}

std::size_t total_param_count(const MoeNetwork& net) {
  std::size_t n = 0;
  if (net.embed()) n += net.embed()->param_count();
  if (net.readout()) n += net.readout()->param_count();
  for (const auto& layer : net.layers()) {
    n += layer.gating().param_count();
    for (const auto& e : layer.experts()) n += e.param_count();
  }
  return n;
}

namespace {

nlohmann::json gating_to_json(const GatingNetwork& g) {
  if (g.mode() == GatingNetwork::Mode::mlp)
    return {{"mode", "mlp"}, {"network", to_json(g.network())}};
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t e = 0; e < g.expert_count(); ++e) {
    auto first = g.weight().begin() + static_cast<std::ptrdiff_t>(e * g.input_dim());
    rows.push_back(std::vector<double>(first, first + static_cast<std::ptrdiff_t>(g.input_dim())));
  }
  return {{"mode", "linear"}, {"experts", g.expert_count()}, {"input_dim", g.input_dim()},
          {"weight", std::move(rows)}};
}

GatingNetwork gating_from_json(const nlohmann::json& j) {
  const auto mode = j.at("mode").get<std::string>();
  if (mode == "mlp") return GatingNetwork::mlp(ffn_from_json(j.at("network")));
  if (mode != "linear") throw ParseError("unknown gating mode '" + mode + "'");
  const auto experts = j.at("experts").get<std::size_t>();
  const auto in_dim = j.at("input_dim").get<std::size_t>();
  std::vector<double> w;
  w.reserve(experts * in_dim);
  const auto& rows = j.at("weight");
  if (rows.size() != experts) throw ParseError("gating weight row count differs from experts");
  for (const auto& row : rows) {
    if (row.size() != in_dim) throw ParseError("gating weight row has wrong length");
    for (const auto& v : row) w.push_back(v.get<double>());
  }
  return GatingNetwork::linear(experts, in_dim, std::move(w));
}

}  // namespace

nlohmann::json to_json(const MoeNetwork& net) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& layer : net.layers()) {
    nlohmann::json experts = nlohmann::json::array();
    for (const auto& e : layer.experts()) experts.push_back(to_json(e));
    layers.push_back({{"K", layer.top_k()},
                      {"gating", gating_to_json(layer.gating())},
                      {"experts", std::move(experts)}});
  }
  return {{"format", "moe-network"},
          {"version", kNetworkFormatVersion},
          {"input_dim", net.input_dim()},
          {"output_dim", net.output_dim()},
          {"embed", net.embed() ? to_json(*net.embed()) : nlohmann::json(nullptr)},
          {"readout", net.readout() ? to_json(*net.readout()) : nlohmann::json(nullptr)},
          {"layers", std::move(layers)}};
}

MoeNetwork moe_from_json(const nlohmann::json& j) {
  try {
    if (!j.is_object()) throw ParseError("network document must be a JSON object");
    const int version = j.at("version").get<int>();
    if (version != kNetworkFormatVersion)
      throw ParseError("unsupported network format version " + std::to_string(version) +
                       " (this build reads version " + std::to_string(kNetworkFormatVersion) +
                       ")");
    std::optional<FfnNetwork> embed;
    std::optional<FfnNetwork> readout;
    if (!j.at("embed").is_null()) embed = ffn_from_json(j.at("embed"));
    if (!j.at("readout").is_null()) readout = ffn_from_json(j.at("readout"));
    std::vector<MoeLayer> layers;
    for (const auto& jl : j.at("layers")) {
      std::vector<FfnNetwork> experts;
      for (const auto& je : jl.at("experts")) experts.push_back(ffn_from_json(je));
      layers.emplace_back(gating_from_json(jl.at("gating")), std::move(experts),
                          jl.at("K").get<std::size_t>());
    }
    MoeNetwork net(std::move(embed), std::move(layers), std::move(readout));
    if (net.input_dim() != j.at("input_dim").get<std::size_t>() ||
        net.output_dim() != j.at("output_dim").get<std::size_t>())
      throw ParseError("declared dimensions disagree with stored layers");
    return net;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("MoE network JSON: ") + e.what());
  } catch (const ParseError&) {
    throw;
  } catch (const Error& e) {
    throw ParseError(std::string("MoE network JSON: ") + e.what());
  }
}

}  // namespace moeapprox
