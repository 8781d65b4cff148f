#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "doctest.h"
#include "moeapprox/errors.hpp"
#include "moeapprox/moe.hpp"
#include "support.hpp"

using namespace moeapprox;

namespace {

FfnNetwork random_expert(std::mt19937_64& rng, std::size_t in, std::size_t hidden, std::size_t out) {
  std::uniform_real_distribution<double> w(-1.0, 1.0);
  DenseLayer a = DenseLayer::zeros(in, hidden, true);
  DenseLayer b = DenseLayer::zeros(hidden, out, false);
  for (double& v : a.weight) v = w(rng);
  for (double& v : a.bias) v = w(rng);
  for (double& v : b.weight) v = w(rng);
  for (double& v : b.bias) v = w(rng);
  return FfnNetwork({a, b});
}

MoeLayer random_layer(std::mt19937_64& rng, std::size_t e, std::size_t in, std::size_t k) {
  std::uniform_real_distribution<double> w(-1.0, 1.0);
  std::vector<double> gate(e * in);
  for (double& v : gate) v = w(rng);
  std::vector<FfnNetwork> experts;
  for (std::size_t i = 0; i < e; ++i) experts.push_back(random_expert(rng, in, 5, in));
  return MoeLayer(GatingNetwork::linear(e, in, gate), experts, k);
}

/// Experts that output a constant, so the layer output identifies them.
MoeLayer tagged_layer(std::size_t e, std::vector<double> gate, std::size_t in, std::size_t k) {
  std::vector<FfnNetwork> experts;
  for (std::size_t i = 0; i < e; ++i)
    experts.push_back(affine_network(in, 1, std::vector<double>(in, 0.0), {static_cast<double>(i + 1)}));
  return MoeLayer(GatingNetwork::linear(e, in, std::move(gate)), experts, k);
}

}  // namespace

TEST_CASE("gate scores of the [0 | I] matrix read the trailing coordinates") {
  const std::size_t d = 3;
  const std::size_t e = 4;
  std::vector<double> w(e * (d + e), 0.0);
  for (std::size_t i = 0; i < e; ++i) w[i * (d + e) + d + i] = 1.0;
  const GatingNetwork g = GatingNetwork::linear(e, d + e, w);
  const double x[] = {7.0, -3.0, 2.0, 0.1, 0.4, 0.2, 0.3};
  CHECK(g.scores(x) == Vector{0.1, 0.4, 0.2, 0.3});
  CHECK(GatingNetwork::constant(e, d + e).scores(x) == Vector(e, 0.0));
  const GatingNetwork id = GatingNetwork::linear(2, 2, {1, 0, 0, 1});
  const double y[] = {0.2, 0.9};
  CHECK(id.scores(y) == Vector{0.2, 0.9});
}

TEST_CASE("top_k ties go to the smallest index") {
  const double s[] = {0.3, 0.9, 0.9, 0.1};
  CHECK(top_k_indices(s, 1) == std::vector<std::size_t>{1});
  CHECK(top_k_indices(s, 3) == std::vector<std::size_t>{1, 2, 0});
  const double flat[] = {0.0, 0.0, 0.0};
  CHECK(top_k_indices(flat, 1) == std::vector<std::size_t>{0});
  CHECK_THROWS_AS(top_k_indices(flat, 0), SpecError);
  CHECK_THROWS_AS(top_k_indices(flat, 4), SpecError);
}

TEST_CASE("K = 1 returns the selected expert's output") {
  const MoeLayer layer = tagged_layer(3, {0.1, 0.0, 0.9, 0.0, 0.3, 0.0}, 2, 1);
  const double x[] = {1.0, 5.0};
  std::vector<std::size_t> chosen;
  CHECK(layer.eval(x, &chosen) == Vector{2.0});
  CHECK(chosen == std::vector<std::size_t>{1});

  const MoeLayer flat = tagged_layer(3, std::vector<double>(6, 0.0), 2, 1);
  CHECK(flat.eval(x) == Vector{1.0});
}

TEST_CASE("K = 2 softmax weights follow the closed form") {
  const double s[] = {std::log(1.0), std::log(3.0)};
  const std::size_t sel[] = {1, 0};
  const Vector w = softmax_weights(s, sel);
  CHECK(w[0] == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(w[1] == doctest::Approx(0.25).epsilon(1e-15));

  const MoeLayer layer = tagged_layer(2, {std::log(1.0), std::log(3.0)}, 1, 2);
  const double x[] = {1.0};
  CHECK(layer.eval(x)[0] == doctest::Approx(0.25 * 1.0 + 0.75 * 2.0).epsilon(1e-15));
}

TEST_CASE("softmax weights are positive, sum to one and ignore a score shift") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-20.0, 20.0);
  std::uniform_real_distribution<double> shift(-100.0, 100.0);
  for (int rep = 0; rep < 500; ++rep) {
    const std::size_t e = 2 + rep % 7;
    const std::size_t k = 1 + rep % e;
    Vector s(e);
    for (double& v : s) v = u(rng);
    const auto sel = top_k_indices(s, k);
    const Vector w = softmax_weights(s, sel);
    double total = 0.0;
    for (double v : w) {
      CHECK(v > 0.0);
      total += v;
    }
    CHECK(std::abs(total - 1.0) <= 1e-15);

    const double c = shift(rng);
    Vector t = s;
    for (double& v : t) v += c;
    const auto sel2 = top_k_indices(t, k);
    CHECK(sel2 == sel);
    const Vector w2 = softmax_weights(t, sel2);
    for (std::size_t i = 0; i < w.size(); ++i) CHECK(std::abs(w[i] - w2[i]) <= 1e-12);
  }
}

TEST_CASE("top-1 layer output bit-equals the argmax expert") {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (int rep = 0; rep < 200; ++rep) {
    const MoeLayer layer = random_layer(rng, 2 + rep % 6, 3, 1);
    const double x[] = {u(rng), u(rng), u(rng)};
    const Vector s = layer.gate_scores(x);
    const auto best = static_cast<std::size_t>(std::max_element(s.begin(), s.end()) - s.begin());
    CHECK(testsupport::bit_equal(layer.eval(x), layer.experts()[best].eval(x)));
  }
}

TEST_CASE("only selected experts are evaluated") {
  const MoeLayer layer = tagged_layer(3, {0.0, 0.0, 1.0, 0.0, 0.0, 0.0}, 2, 1);
  layer.reset_counters();
  const double x[] = {1.0, 0.0};
  for (int k = 0; k < 5; ++k) layer.eval(x);
  CHECK(layer.eval_count(0) == 0);
  CHECK(layer.eval_count(1) == 5);
  CHECK(layer.eval_count(2) == 0);
}

TEST_CASE("layer construction validates experts and K") {
  std::mt19937_64 rng(13);
  std::vector<FfnNetwork> mixed{random_expert(rng, 2, 3, 2), random_expert(rng, 3, 3, 2)};
  CHECK_THROWS(MoeLayer(GatingNetwork::constant(2, 2), mixed, 1));
  std::vector<FfnNetwork> ok{random_expert(rng, 2, 3, 2), random_expert(rng, 2, 3, 2)};
  CHECK_THROWS(MoeLayer(GatingNetwork::constant(2, 2), ok, 3));
  CHECK_THROWS(MoeLayer(GatingNetwork::constant(3, 2), ok, 1));
}

TEST_CASE("network with identity experts returns its input") {
  std::vector<FfnNetwork> experts(3, identity_network(2, std::vector<bool>{false, false, false}));
  std::vector<double> gate{0.5, -1.0, 2.0, 1.0, 0.0, 0.3, -0.2, 0.7, 0.1};
  MoeNetwork net(std::nullopt, {MoeLayer(GatingNetwork::linear(3, 3, gate), experts, 1)}, std::nullopt);
  const double x[] = {0.25, -4.0, 3.5};
  MoeTrace trace;
  CHECK(net.eval(x, &trace) == Vector{0.25, -4.0, 3.5});
  CHECK(trace.selected.size() == 1);
  CHECK(trace.states.size() == 1);
}

TEST_CASE("embed, no layers, last-L readout gives zeros") {
  const std::size_t d = 3;
  const std::size_t l = 2;
  std::vector<double> we((d + l) * d, 0.0);
  for (std::size_t i = 0; i < d; ++i) we[i * d + i] = 1.0;
  std::vector<double> wr(l * (d + l), 0.0);
  for (std::size_t i = 0; i < l; ++i) wr[i * (d + l) + d + i] = 1.0;
  MoeNetwork net(affine_network(d, d + l, we, Vector(d + l, 0.0)), {},
                 affine_network(d + l, l, wr, Vector(l, 0.0)));
  const double x[] = {1.0, -2.0, 3.0};
  CHECK(net.eval(x) == Vector{0.0, 0.0});
}

TEST_CASE("trace holds one selection per layer") {
  std::mt19937_64 rng(14);
  std::vector<MoeLayer> layers;
  for (int k = 0; k < 4; ++k) layers.push_back(random_layer(rng, 3, 2, 1 + k % 2));
  MoeNetwork net(std::nullopt, layers, std::nullopt);
  const double x[] = {0.1, 0.2};
  MoeTrace trace;
  net.eval(x, &trace);
  REQUIRE(trace.selected.size() == 4);
  for (std::size_t k = 0; k < 4; ++k) CHECK(trace.selected[k].size() == 1 + k % 2);
}

TEST_CASE("active parameter accounting") {
  std::mt19937_64 rng(15);
  std::vector<FfnNetwork> experts{random_expert(rng, 2, 3, 1), random_expert(rng, 2, 3, 1)};
  CHECK(experts[0].param_count() == 13);
  MoeNetwork net(std::nullopt, {MoeLayer(GatingNetwork::linear(2, 2, {1, 0, 0, 1}), experts, 1)},
                 std::nullopt);
  CHECK(active_param_count(net) == 17);
  CHECK(total_param_count(net) == 30);

  std::vector<FfnNetwork> one{experts[0]};
  MoeNetwork single(std::nullopt, {MoeLayer(GatingNetwork::linear(1, 2, {1, 1}), one, 1)}, std::nullopt);
  CHECK(active_param_count(single) == 13 + 2);

  std::vector<FfnNetwork> four(4, experts[0]);
  MoeNetwork wide(std::nullopt, {MoeLayer(GatingNetwork::constant(4, 2), four, 1)}, std::nullopt);
  CHECK(active_param_count(wide) == 13 + 8);

  std::vector<FfnNetwork> uneven{random_expert(rng, 2, 3, 1), random_expert(rng, 2, 4, 1)};
  MoeNetwork bad(std::nullopt, {MoeLayer(GatingNetwork::constant(2, 2), uneven, 1)}, std::nullopt);
  CHECK_THROWS_AS(active_param_count(bad), AccountingError);
}

TEST_CASE("MoE JSON round trip and version check") {
  std::mt19937_64 rng(16);
  std::vector<MoeLayer> layers{random_layer(rng, 3, 2, 1), random_layer(rng, 4, 2, 2)};
  MoeNetwork net(affine_network(2, 2, {1, 0.5, -0.25, 1}, {0.1, 0.2}), layers, std::nullopt);
  const auto j = to_json(net);
  const MoeNetwork back = moe_from_json(nlohmann::json::parse(j.dump()));
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int k = 0; k < 100; ++k) {
    const double x[] = {u(rng), u(rng)};
    CHECK(testsupport::bit_equal(net.eval(x), back.eval(x)));
  }
  auto wrong = j;
  wrong["version"] = 99;
  CHECK_THROWS_AS(moe_from_json(wrong), ParseError);
}
