#include "moeapprox/ffn.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "moeapprox/errors.hpp"

namespace moeapprox {

namespace {

void check_layer(const DenseLayer& layer, std::size_t index) {
  if (layer.in_dim == 0 || layer.out_dim == 0)
    throw CompositionError("layer " + std::to_string(index) + " has a zero dimension");
  if (layer.weight.size() != layer.in_dim * layer.out_dim)
    throw CompositionError("layer " + std::to_string(index) + " weight has " +
                           std::to_string(layer.weight.size()) + " entries, expected " +
                           std::to_string(layer.in_dim * layer.out_dim));
  if (layer.bias.size() != layer.out_dim)
    throw CompositionError("layer " + std::to_string(index) + " bias length mismatch");
}

}  // namespace

DenseLayer DenseLayer::zeros(std::size_t in_dim, std::size_t out_dim, bool relu) {
  DenseLayer layer;
  layer.in_dim = in_dim;
  layer.out_dim = out_dim;
  layer.weight.assign(in_dim * out_dim, 0.0);
  layer.bias.assign(out_dim, 0.0);
  layer.relu = relu;
  return layer;
}

FfnNetwork::FfnNetwork(std::vector<DenseLayer> layers) : layers_(std::move(layers)) {
  if (layers_.empty()) throw CompositionError("network needs at least one affine map");
  for (std::size_t t = 0; t < layers_.size(); ++t) {
    check_layer(layers_[t], t);
    if (t > 0 && layers_[t].in_dim != layers_[t - 1].out_dim)
      throw CompositionError("layer " + std::to_string(t) + " reads " +
                             std::to_string(layers_[t].in_dim) + " inputs but layer " +
                             std::to_string(t - 1) + " emits " +
                             std::to_string(layers_[t - 1].out_dim));
  }
  if (layers_.back().relu) throw CompositionError("final affine map must be linear");
  sparse_.resize(layers_.size());
  for (std::size_t t = 0; t < layers_.size(); ++t) {
    const auto& layer = layers_[t];
    const auto nnz = static_cast<std::size_t>(
        std::count_if(layer.weight.begin(), layer.weight.end(), [](double v) { return v != 0.0; }));
    const bool finite = std::all_of(layer.weight.begin(), layer.weight.end(),
                                    [](double v) { return std::isfinite(v); });
    if (!finite || 2 * nnz > layer.weight.size() || layer.weight.size() > UINT32_MAX) continue;
    auto& sp = sparse_[t];
    sp.start.reserve(layer.in_dim + 1);
    sp.rows.reserve(nnz);
    sp.values.reserve(nnz);
    sp.start.push_back(0);
    for (std::size_t c = 0; c < layer.in_dim; ++c) {
      for (std::size_t r = 0; r < layer.out_dim; ++r) {
        const double v = layer.w(r, c);
        if (v == 0.0) continue;
        sp.rows.push_back(static_cast<std::uint32_t>(r));
        sp.values.push_back(v);
      }
      sp.start.push_back(static_cast<std::uint32_t>(sp.rows.size()));
    }
  }
}

std::size_t FfnNetwork::width() const noexcept {
  std::size_t w = 0;
  for (std::size_t t = 0; t + 1 < layers_.size(); ++t) w = std::max(w, layers_[t].out_dim);
  return w;
}

std::size_t FfnNetwork::param_count() const noexcept {
  std::size_t n = 0;
  for (const auto& layer : layers_) n += layer.weight.size() + layer.bias.size();
  return n;
}

void FfnNetwork::apply(std::size_t t, const Vector& h, Vector& out) const {
  const auto& layer = layers_[t];
  const auto& sp = sparse_[t];
  const std::size_t in = layer.in_dim;
  out.assign(layer.bias.begin(), layer.bias.end());
  bool sparse = !sp.start.empty();
  if (sparse) {
    // Columns in ascending order keep each row's summation order, and the
    // skipped terms are exact zeros, so only the sign of a zero sum can differ.
    for (std::size_t c = 0; c < in; ++c) {
      const double hc = h[c];
      if (hc == 0.0) continue;
      if (!std::isfinite(hc)) {
        sparse = false;
        out.assign(layer.bias.begin(), layer.bias.end());
        break;
      }
      for (std::uint32_t k = sp.start[c]; k < sp.start[c + 1]; ++k) out[sp.rows[k]] += sp.values[k] * hc;
    }
  }
  if (!sparse) {
    for (std::size_t r = 0; r < layer.out_dim; ++r) {
      const double* row = layer.weight.data() + r * in;
      double acc = out[r];
      for (std::size_t c = 0; c < in; ++c) acc += row[c] * h[c];
      out[r] = acc;
    }
  }
  // Zero sums are normalised to +0 on both paths. NaN survives the ReLU: the
  // comparison is false.
  double* v = out.data();
  const std::size_t n = out.size();
  if (layer.relu) {
    for (std::size_t r = 0; r < n; ++r) v[r] = v[r] < 0.0 ? 0.0 : v[r] + 0.0;
  } else {
    for (std::size_t r = 0; r < n; ++r) v[r] += 0.0;
  }
}

Vector FfnNetwork::eval(std::span<const double> x) const {
  if (x.size() != input_dim())
    throw ShapeError("network expects " + std::to_string(input_dim()) + " inputs, got " +
                     std::to_string(x.size()));
  thread_local Vector a;
  thread_local Vector b;
  a.assign(x.begin(), x.end());
  for (std::size_t t = 0; t < layers_.size(); ++t) {
    apply(t, a, b);
    a.swap(b);
  }
  return a;
}

FfnNetwork encode_pwl(const PwlSpec& spec) {
  const auto& t = spec.knots;
  const auto& v = spec.values;
  if (t.size() < 2) throw SpecError("piecewise-linear spec needs at least 2 knots");
  if (v.size() != t.size()) throw SpecError("knot and value counts differ");
  for (std::size_t k = 0; k + 1 < t.size(); ++k)
    if (!(t[k] < t[k + 1])) throw SpecError("knot abscissae must be strictly increasing");

  const std::size_t n = t.size();
  std::vector<double> slope(n - 1);
  for (std::size_t k = 0; k + 1 < n; ++k) slope[k] = (v[k + 1] - v[k]) / (t[k + 1] - t[k]);

  DenseLayer hidden = DenseLayer::zeros(1, n, true);
  DenseLayer out = DenseLayer::zeros(n, 1, false);
  hidden.w(0, 0) = 1.0;
  hidden.bias[0] = -t[0];
  hidden.w(1, 0) = -1.0;
  hidden.bias[1] = t[0];
  out.w(0, 0) = slope[0];
  out.w(0, 1) = -slope[0];
  for (std::size_t k = 1; k + 1 < n; ++k) {
    hidden.w(k + 1, 0) = 1.0;
    hidden.bias[k + 1] = -t[k];
    out.w(0, k + 1) = slope[k] - slope[k - 1];
  }
  out.bias[0] = v[0];
  return FfnNetwork({std::move(hidden), std::move(out)});
}

FfnNetwork ffn_concat(std::span<const FfnNetwork> nets) {
  if (nets.empty()) throw CompositionError("cannot concatenate an empty list of networks");
  const std::size_t in = nets.front().input_dim();
  const std::size_t depth = nets.front().depth();
  for (const auto& net : nets) {
    if (net.input_dim() != in) throw CompositionError("concatenated networks differ in input_dim");
    if (net.depth() != depth) throw CompositionError("concatenated networks differ in depth");
  }

  std::vector<DenseLayer> layers;
  layers.reserve(depth);
  for (std::size_t t = 0; t < depth; ++t) {
    std::size_t rows = 0;
    std::size_t cols = 0;
    const bool relu = nets.front().layers()[t].relu;
    for (const auto& net : nets) {
      const auto& src = net.layers()[t];
      if (src.relu != relu) throw CompositionError("activation flags differ across networks");
      rows += src.out_dim;
      cols += src.in_dim;
    }
    if (t == 0) cols = in;
    DenseLayer dst = DenseLayer::zeros(cols, rows, relu);
    std::size_t r0 = 0;
    std::size_t c0 = 0;
    for (const auto& net : nets) {
      const auto& src = net.layers()[t];
      const std::size_t col_offset = (t == 0) ? 0 : c0;
      for (std::size_t r = 0; r < src.out_dim; ++r) {
        for (std::size_t c = 0; c < src.in_dim; ++c) dst.w(r0 + r, col_offset + c) = src.w(r, c);
        dst.bias[r0 + r] = src.bias[r];
      }
      r0 += src.out_dim;
      c0 += src.in_dim;
    }
    layers.push_back(std::move(dst));
  }
  return FfnNetwork(std::move(layers));
}

FfnNetwork affine_network(std::size_t in_dim, std::size_t out_dim, std::vector<double> weight,
                          std::vector<double> bias) {
  DenseLayer layer;
  layer.in_dim = in_dim;
  layer.out_dim = out_dim;
  layer.weight = std::move(weight);
  layer.bias = std::move(bias);
  layer.relu = false;
  return FfnNetwork({std::move(layer)});
}

FfnNetwork identity_network(std::size_t depth, const std::vector<bool>& nonneg) {
  const std::size_t dim = nonneg.size();
  if (depth == 0 || dim == 0) throw CompositionError("identity network needs depth and dim >= 1");
  if (depth == 1) {
    DenseLayer layer = DenseLayer::zeros(dim, dim, false);
    for (std::size_t i = 0; i < dim; ++i) layer.w(i, i) = 1.0;
    return FfnNetwork({std::move(layer)});
  }

  std::size_t hidden = 0;
  for (bool nn : nonneg) hidden += nn ? 1 : 2;

  std::vector<DenseLayer> layers;
  DenseLayer first = DenseLayer::zeros(dim, hidden, true);
  DenseLayer last = DenseLayer::zeros(hidden, dim, false);
  std::size_t h = 0;
  for (std::size_t i = 0; i < dim; ++i) {
    first.w(h, i) = 1.0;
    last.w(i, h) = 1.0;
    ++h;
    if (!nonneg[i]) {
      first.w(h, i) = -1.0;
      last.w(i, h) = -1.0;
      ++h;
    }
  }
  layers.push_back(std::move(first));
  for (std::size_t t = 1; t + 1 < depth; ++t) {
    DenseLayer mid = DenseLayer::zeros(hidden, hidden, true);
    for (std::size_t k = 0; k < hidden; ++k) mid.w(k, k) = 1.0;
    layers.push_back(std::move(mid));
  }
  layers.push_back(std::move(last));
  return FfnNetwork(std::move(layers));
}

FfnNetwork ffn_with_passthrough(const FfnNetwork& net, std::size_t passthrough_dims,
                                bool nonneg_domain) {
  if (passthrough_dims > net.input_dim())
    throw ShapeError("cannot pass through " + std::to_string(passthrough_dims) +
                     " coordinates of a " + std::to_string(net.input_dim()) + "-input network");
  if (passthrough_dims == 0) return net;
  std::vector<std::size_t> coords(passthrough_dims);
  for (std::size_t i = 0; i < passthrough_dims; ++i) coords[i] = i;
  const FfnNetwork id = lift_input(
      identity_network(net.depth(), std::vector<bool>(passthrough_dims, nonneg_domain)),
      net.input_dim(), coords);
  const FfnNetwork parts[] = {id, net};
  return ffn_concat(parts);
}

FfnNetwork compose(const FfnNetwork& outer, const FfnNetwork& inner) {
  if (outer.input_dim() != inner.output_dim())
    throw CompositionError("compose: outer reads " + std::to_string(outer.input_dim()) +
                           " values, inner emits " + std::to_string(inner.output_dim()));
  const auto& a = inner.layers().back();
  const auto& b = outer.layers().front();
  DenseLayer merged = DenseLayer::zeros(a.in_dim, b.out_dim, b.relu);
  for (std::size_t r = 0; r < b.out_dim; ++r) {
    double bias = b.bias[r];
    for (std::size_t k = 0; k < b.in_dim; ++k) bias += b.w(r, k) * a.bias[k];
    merged.bias[r] = bias;
    for (std::size_t c = 0; c < a.in_dim; ++c) {
      double acc = 0.0;
      for (std::size_t k = 0; k < b.in_dim; ++k) acc += b.w(r, k) * a.w(k, c);
      merged.w(r, c) = acc;
    }
  }
  std::vector<DenseLayer> layers(inner.layers().begin(), inner.layers().end() - 1);
  layers.push_back(std::move(merged));
  layers.insert(layers.end(), outer.layers().begin() + 1, outer.layers().end());
  return FfnNetwork(std::move(layers));
}

FfnNetwork lift_input(const FfnNetwork& net, std::size_t new_input_dim,
                      std::span<const std::size_t> coords) {
  if (coords.size() != net.input_dim())
    throw CompositionError("lift_input: coordinate map length differs from input_dim");
  std::vector<bool> used(new_input_dim, false);
  for (std::size_t c : coords) {
    if (c >= new_input_dim) throw CompositionError("lift_input: coordinate out of range");
    if (used[c]) throw CompositionError("lift_input: repeated coordinate");
    used[c] = true;
  }
  std::vector<DenseLayer> layers = net.layers();
  const DenseLayer& src = net.layers().front();
  DenseLayer first = DenseLayer::zeros(new_input_dim, src.out_dim, src.relu);
  first.bias = src.bias;
  for (std::size_t r = 0; r < src.out_dim; ++r)
    for (std::size_t j = 0; j < coords.size(); ++j) first.w(r, coords[j]) = src.w(r, j);
  layers.front() = std::move(first);
  return FfnNetwork(std::move(layers));
}

FfnNetwork select_outputs(const FfnNetwork& net, std::span<const std::size_t> order) {
  if (order.empty()) throw CompositionError("select_outputs: empty output selection");
  const DenseLayer& src = net.layers().back();
  DenseLayer last = DenseLayer::zeros(src.in_dim, order.size(), false);
  for (std::size_t j = 0; j < order.size(); ++j) {
    if (order[j] >= src.out_dim) throw CompositionError("select_outputs: index out of range");
    std::copy_n(src.weight.begin() + static_cast<std::ptrdiff_t>(order[j] * src.in_dim),
                src.in_dim, last.weight.begin() + static_cast<std::ptrdiff_t>(j * src.in_dim));
    last.bias[j] = src.bias[order[j]];
  }
  std::vector<DenseLayer> layers = net.layers();
  layers.back() = std::move(last);
  return FfnNetwork(std::move(layers));
}

nlohmann::json to_json(const FfnNetwork& net) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& layer : net.layers()) {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t r = 0; r < layer.out_dim; ++r) {
      auto first = layer.weight.begin() + static_cast<std::ptrdiff_t>(r * layer.in_dim);
      rows.push_back(std::vector<double>(first, first + static_cast<std::ptrdiff_t>(layer.in_dim)));
    }
    layers.push_back({{"weight", std::move(rows)}, {"bias", layer.bias}, {"relu", layer.relu}});
  }
  return {{"input_dim", net.input_dim()}, {"output_dim", net.output_dim()}, {"layers", layers}};
}

FfnNetwork ffn_from_json(const nlohmann::json& j) {
  try {
    const auto in = j.at("input_dim").get<std::size_t>();
    const auto out = j.at("output_dim").get<std::size_t>();
    std::vector<DenseLayer> layers;
    for (const auto& jl : j.at("layers")) {
      DenseLayer layer;
      const auto& rows = jl.at("weight");
      layer.bias = jl.at("bias").get<std::vector<double>>();
      layer.relu = jl.at("relu").get<bool>();
      layer.out_dim = rows.size();
      layer.in_dim = rows.empty() ? 0 : rows.front().size();
      for (const auto& row : rows) {
        if (row.size() != layer.in_dim) throw ParseError("ragged weight matrix");
        for (const auto& v : row) layer.weight.push_back(v.get<double>());
      }
      layers.push_back(std::move(layer));
    }
    FfnNetwork net(std::move(layers));
    if (net.input_dim() != in || net.output_dim() != out)
      throw ParseError("declared input_dim/output_dim disagree with stored matrices");
    return net;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("network JSON: ") + e.what());
  } catch (const CompositionError& e) {
    throw ParseError(std::string("network JSON: ") + e.what());
  }
}

}  // namespace moeapprox
