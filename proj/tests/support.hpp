#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>

#include "moeapprox/ffn.hpp"

namespace testsupport {

/// Distance in units in the last place between two finite doubles.
inline std::uint64_t ulp_distance(double a, double b) {
  if (a == b) return 0;
  auto key = [](double v) {
    const auto bits = std::bit_cast<std::int64_t>(v);
    return bits < 0 ? std::numeric_limits<std::int64_t>::min() - bits : bits;
  };
  const std::int64_t ka = key(a);
  const std::int64_t kb = key(b);
  return ka > kb ? static_cast<std::uint64_t>(ka) - static_cast<std::uint64_t>(kb)
                 : static_cast<std::uint64_t>(kb) - static_cast<std::uint64_t>(ka);
}

inline bool bit_equal(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (std::bit_cast<std::uint64_t>(a[i]) != std::bit_cast<std::uint64_t>(b[i])) return false;
  return true;
}

/// |a - b| <= rel * |b|. doctest::Approx adds a unit scale, which makes it
/// an absolute check for small values.
inline bool rel_close(double a, double b, double rel) { return std::abs(a - b) <= rel * std::abs(b); }

/// Plain dense forward pass, the reference for FfnNetwork::eval.
inline moeapprox::Vector reference_eval(const moeapprox::FfnNetwork& net, std::span<const double> x) {
  moeapprox::Vector h(x.begin(), x.end());
  for (const auto& layer : net.layers()) {
    moeapprox::Vector next(layer.out_dim);
    for (std::size_t r = 0; r < layer.out_dim; ++r) {
      double acc = layer.bias[r];
      for (std::size_t c = 0; c < layer.in_dim; ++c) acc += layer.w(r, c) * h[c];
      next[r] = layer.relu ? std::max(acc, 0.0) : acc;
    }
    h = std::move(next);
  }
  return h;
}

}  // namespace testsupport
