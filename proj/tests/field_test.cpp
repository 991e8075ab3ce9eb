// Copyright 2026 The bionerf-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "bionerf/field.hpp"
#include "bionerf/model.hpp"

namespace bionerf {
namespace {

using TD = Tensor<double>;

FieldConfig tiny_config(Index hidden = 1) {
  FieldConfig c;
  c.pos_width = 1;
  c.dir_width = 1;
  c.hidden = hidden;
  c.color_hidden = 1;
  return c;
}

void set(Tensor<double>& t, std::vector<double> v) {
  auto m = t.mutable_values();
  ASSERT_EQ(m.size(), v.size());
  std::copy(v.begin(), v.end(), m.begin());
}

void set_dense(Dense<double>& d, double w, double b) {
  set(d.weight, std::vector<double>(d.weight.numel(), w));
  set(d.bias, std::vector<double>(d.bias.numel(), b));
}

template <class P>
void zero_all(P& params) {
  params.visit([](const std::string&, Tensor<double>& t) {
    for (auto& v : t.mutable_values()) v = 0.0;
  });
}

TD random_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(s.numel());
  for (auto& x : v) x = uniform(rng, lo, hi);
  return TD::from(std::move(s), std::move(v));
}

TEST(InitParams, SameSeedIsBitIdentical) {
  auto cfg = FieldConfig::from(EncodingConfig{}, 32, 16);
  auto a = init_bionerf_params<float>(cfg, 11);
  auto b = init_bionerf_params<float>(cfg, 11);
  auto c = init_bionerf_params<float>(cfg, 12);
  std::vector<float> va, vb, vc;
  a.visit([&](const std::string&, Tensor<float>& t) { va.insert(va.end(), t.values().begin(), t.values().end()); });
  b.visit([&](const std::string&, Tensor<float>& t) { vb.insert(vb.end(), t.values().begin(), t.values().end()); });
  c.visit([&](const std::string&, Tensor<float>& t) { vc.insert(vc.end(), t.values().begin(), t.values().end()); });
  EXPECT_EQ(va, vb);
  EXPECT_NE(va, vc);
}

TEST(InitParams, BiasesAreZero) {
  auto p = init_bionerf_params<float>(FieldConfig::from(EncodingConfig{}, 16, 8), 1);
  int biases = 0;
  p.visit([&](const std::string& name, Tensor<float>& t) {
    if (name.ends_with(".bias")) {
      ++biases;
      for (float v : t.values()) EXPECT_EQ(v, 0.0f) << name;
    }
  });
  // Extraction 6, filters 4, modulation 1, memory 1, density head 3, color head 2.
  EXPECT_EQ(biases, 17);
}

TEST(InitParams, WeightSpreadMatchesUniformMoment) {
  auto p = init_bionerf_params<double>(FieldConfig::from(EncodingConfig{}, 256, 128), 3);
  const auto w = p.extract_delta[1].weight.values();
  ASSERT_EQ(w.size(), 256u * 256u);
  double mean = 0.0, sq = 0.0;
  for (double v : w) mean += v;
  mean /= static_cast<double>(w.size());
  for (double v : w) sq += (v - mean) * (v - mean);
  const double sd = std::sqrt(sq / static_cast<double>(w.size()));
  const double expected = (2.0 / 16.0) / std::sqrt(12.0);
  EXPECT_NEAR(sd, expected, 0.1 * expected);
}

TEST(InitParams, ParameterCountsAtFullWidth) {
  auto cfg = FieldConfig::from(EncodingConfig{}, 256, 128);
  EXPECT_EQ(init_bionerf_params<float>(cfg, 0).parameter_count(), 1072004u);
  // 8-layer trunk with a skip at layer 5, density, feature, view and rgb layers.
  EXPECT_EQ(init_nerf_params<float>(cfg, 0).parameter_count(), 595844u);
}

TEST(ExtractFeatures, ZeroWeightsGiveZero) {
  auto p = init_bionerf_params<double>(FieldConfig::from(EncodingConfig{}, 8, 4), 0);
  zero_all(p);
  Rng rng = make_rng({1});
  auto f = extract_positional_features(p, random_tensor(Shape{5, 63}, rng));
  for (double v : f.h_delta.values()) EXPECT_EQ(v, 0.0);
  for (double v : f.h_c.values()) EXPECT_EQ(v, 0.0);
}

TEST(ExtractFeatures, ColorWeightsDoNotTouchDensityPath) {
  auto p = init_bionerf_params<double>(FieldConfig::from(EncodingConfig{}, 8, 4), 0);
  Rng rng = make_rng({2});
  auto x = random_tensor(Shape{5, 63}, rng);
  auto before = extract_positional_features(p, x);
  for (auto& layer : p.extract_c)
    for (auto& v : layer.weight.mutable_values()) v += 0.3;
  auto after = extract_positional_features(p, x);
  for (Index i = 0; i < before.h_delta.numel(); ++i) EXPECT_EQ(before.h_delta[i], after.h_delta[i]);
  bool changed = false;
  for (Index i = 0; i < before.h_c.numel(); ++i) changed |= before.h_c[i] != after.h_c[i];
  EXPECT_TRUE(changed);
}

TEST(ExtractFeatures, ScalarReluChain) {
  auto p = init_bionerf_params<double>(tiny_config(), 0);
  set_dense(p.extract_delta[0], 2.0, -1.0);
  set_dense(p.extract_delta[1], -1.0, 3.0);
  set_dense(p.extract_delta[2], 0.5, 0.0);
  set_dense(p.extract_c[0], -1.0, 0.0);
  set_dense(p.extract_c[1], 1.0, 0.0);
  set_dense(p.extract_c[2], 1.0, 0.0);
  auto f = extract_positional_features(p, TD::from(Shape{1, 1}, {1.5}));
  // relu(2*1.5-1)=2, relu(-2+3)=1, relu(0.5)=0.5
  EXPECT_DOUBLE_EQ(f.h_delta.item(), 0.5);
  EXPECT_DOUBLE_EQ(f.h_c.item(), 0.0);
}

TEST(ExtractFeatures, WidthMismatch) {
  auto p = init_bionerf_params<double>(FieldConfig::from(EncodingConfig{}, 8, 4), 0);
  EXPECT_THROW(extract_positional_features(p, TD::zeros(Shape{2, 62})), DimensionError);
}

TEST(ComputeFilters, ZeroParamsGiveHalfGates) {
  auto p = init_bionerf_params<double>(FieldConfig::from(EncodingConfig{}, 8, 4), 0);
  zero_all(p);
  Rng rng = make_rng({3});
  auto f = compute_filters(p, random_tensor(Shape{3, 8}, rng), random_tensor(Shape{3, 8}, rng));
  for (const auto* t : {&f.f_delta, &f.f_c, &f.f_psi, &f.f_mu})
    for (double v : t->values()) EXPECT_EQ(v, 0.5);
  for (double v : f.gamma.values()) EXPECT_EQ(v, 0.0);
}

TEST(ComputeFilters, DensityFilterReadsOnlyDensityFeatures) {
  auto p = init_bionerf_params<double>(FieldConfig::from(EncodingConfig{}, 8, 4), 5);
  Rng rng = make_rng({4});
  auto hd = random_tensor(Shape{3, 8}, rng);
  auto a = compute_filters(p, hd, random_tensor(Shape{3, 8}, rng));
  auto b = compute_filters(p, hd, random_tensor(Shape{3, 8}, rng));
  for (Index i = 0; i < a.f_delta.numel(); ++i) EXPECT_EQ(a.f_delta[i], b.f_delta[i]);
}

TEST(ComputeFilters, ScalarSigmoid) {
  auto p = init_bionerf_params<double>(tiny_config(), 0);
  set_dense(p.filter_delta, 1.0, 0.0);
  auto f = compute_filters(p, TD::from(Shape{1, 1}, {2.0}), TD::from(Shape{1, 1}, {0.0}));
  EXPECT_NEAR(f.f_delta.item(), 0.880797, 1e-6);
}

Filters<double> scalar_filters(double f_mu, double gamma, double f_psi) {
  Filters<double> f;
  f.f_delta = TD::from(Shape{1, 1}, {0.5});
  f.f_c = TD::from(Shape{1, 1}, {0.5});
  f.f_psi = TD::from(Shape{1, 1}, {f_psi});
  f.f_mu = TD::from(Shape{1, 1}, {f_mu});
  f.gamma = TD::from(Shape{1, 1}, {gamma});
  return f;
}

TEST(UpdateMemory, StatelessZeroParams) {
  auto p = init_bionerf_params<double>(FieldConfig::from(EncodingConfig{}, 8, 4), 0);
  zero_all(p);
  MemoryState<double> state(MemoryMode::stateless, 4, 8);
  Rng rng = make_rng({6});
  auto f = compute_filters(p, random_tensor(Shape{4, 8}, rng), random_tensor(Shape{4, 8}, rng));
  auto psi = update_memory(p, f, state.read(0, 4));
  for (double v : psi.values()) EXPECT_EQ(v, 0.0);
}

TEST(UpdateMemory, HandEvaluation) {
  auto p = init_bionerf_params<double>(tiny_config(), 0);
  set_dense(p.memory, 1.0, 0.0);
  auto psi = update_memory(p, scalar_filters(0.5, 0.8, 0.5), TD::from(Shape{1, 1}, {0.2}));
  EXPECT_NEAR(psi.item(), 0.462117, 1e-6);
  EXPECT_DOUBLE_EQ(psi.item(), std::tanh(0.5));
}

TEST(UpdateMemory, ClosedForgetGateIgnoresPreviousMemory) {
  auto p = init_bionerf_params<double>(FieldConfig::from(EncodingConfig{}, 8, 4), 2);
  for (auto& v : p.filter_psi.bias.mutable_values()) v = -60.0;
  Rng rng = make_rng({7});
  auto f = compute_filters(p, random_tensor(Shape{3, 8}, rng), random_tensor(Shape{3, 8}, rng));
  auto a = update_memory(p, f, random_tensor(Shape{3, 8}, rng));
  auto b = update_memory(p, f, random_tensor(Shape{3, 8}, rng));
  for (Index i = 0; i < a.numel(); ++i) EXPECT_NEAR(a[i], b[i], 1e-20);
}

TEST(UpdateMemory, BatchMismatch) {
  auto p = init_bionerf_params<double>(FieldConfig::from(EncodingConfig{}, 8, 4), 0);
  Rng rng = make_rng({8});
  auto f = compute_filters(p, random_tensor(Shape{3, 8}, rng), random_tensor(Shape{3, 8}, rng));
  EXPECT_THROW(update_memory(p, f, TD::zeros(Shape{4, 8})), StateShapeError);
}

TEST(MemoryState, ReadWriteAndModes) {
  MemoryState<double> carried(MemoryMode::carried, 4, 2);
  carried.write(1, TD::from(Shape{2, 2}, {1, 2, 3, 4}));
  auto r = carried.read(1, 2);
  EXPECT_EQ(r[0], 1.0);
  EXPECT_EQ(r[3], 4.0);
  EXPECT_THROW(carried.read(3, 2), StateShapeError);
  EXPECT_THROW(carried.write(0, TD::zeros(Shape{1, 3})), StateShapeError);

  MemoryState<double> stateless(MemoryMode::stateless, 4, 2);
  stateless.write(0, TD::from(Shape{2, 2}, {1, 2, 3, 4}));
  const auto zeros = stateless.read(0, 4);
  for (double v : zeros.values()) EXPECT_EQ(v, 0.0);
}

TEST(ContextualInference, ZeroMemoryLeavesPositionPath) {
  auto p = init_bionerf_params<double>(FieldConfig::from(EncodingConfig{}, 8, 4), 9);
  Rng rng = make_rng({9});
  auto l = random_tensor(Shape{3, 63}, rng);
  auto d = random_tensor(Shape{3, 27}, rng);
  auto psi = TD::zeros(Shape{3, 8});
  auto fa = compute_filters(p, random_tensor(Shape{3, 8}, rng), random_tensor(Shape{3, 8}, rng));
  auto fb = compute_filters(p, random_tensor(Shape{3, 8}, rng), random_tensor(Shape{3, 8}, rng));
  auto [da, ca] = contextual_inference(p, psi, fa, l, d);
  auto [db, cb] = contextual_inference(p, psi, fb, l, d);
  for (Index i = 0; i < da.numel(); ++i) EXPECT_EQ(da[i], db[i]);
}

TEST(ContextualInference, DensityIgnoresDirection) {
  auto p = init_bionerf_params<double>(FieldConfig::from(EncodingConfig{}, 8, 4), 10);
  Rng rng = make_rng({10});
  auto l = random_tensor(Shape{3, 63}, rng);
  auto psi = random_tensor(Shape{3, 8}, rng);
  auto f = compute_filters(p, random_tensor(Shape{3, 8}, rng), random_tensor(Shape{3, 8}, rng));
  auto [da, ca] = contextual_inference(p, psi, f, l, random_tensor(Shape{3, 27}, rng));
  auto [db, cb] = contextual_inference(p, psi, f, l, random_tensor(Shape{3, 27}, rng));
  EXPECT_EQ(da.shape(), (Shape{3, 1}));
  EXPECT_EQ(ca.shape(), (Shape{3, 3}));
  for (Index i = 0; i < da.numel(); ++i) EXPECT_EQ(da[i], db[i]);
  bool color_changed = false;
  for (Index i = 0; i < ca.numel(); ++i) color_changed |= ca[i] != cb[i];
  EXPECT_TRUE(color_changed);
}

TEST(ContextualInference, ScalarHandChain) {
  auto p = init_bionerf_params<double>(tiny_config(), 0);
  // density: [psi*f_delta, l] -> relu -> relu -> linear
  set(p.density_head[0].weight, {2.0, -1.0});
  set(p.density_head[0].bias, {0.5});
  set_dense(p.density_head[1], 3.0, -1.0);
  set_dense(p.density_head[2], -0.5, 0.25);
  // color: [psi*f_c, d] -> relu -> linear(3)
  set(p.color_head[0].weight, {1.0, 1.0});
  set(p.color_head[0].bias, {0.0});
  set(p.color_head[1].weight, {1.0, -2.0, 0.5});
  set(p.color_head[1].bias, {0.0, 1.0, 0.0});
  Filters<double> f = scalar_filters(0.5, 0.5, 0.5);
  f.f_delta = TD::from(Shape{1, 1}, {0.25});
  f.f_c = TD::from(Shape{1, 1}, {0.5});
  auto [delta, c] = contextual_inference(p, TD::from(Shape{1, 1}, {0.8}), f, TD::from(Shape{1, 1}, {0.3}),
                                         TD::from(Shape{1, 1}, {0.6}));
  // psi*f_delta = 0.2; a = relu(2*0.2 - 0.3 + 0.5) = 0.6; b = relu(1.8 - 1) = 0.8; delta = -0.4 + 0.25
  EXPECT_NEAR(delta.item(), -0.15, 1e-15);
  // psi*f_c = 0.4; h = relu(0.4 + 0.6) = 1
  EXPECT_NEAR(c[0], 1.0, 1e-15);
  EXPECT_NEAR(c[1], -1.0, 1e-15);
  EXPECT_NEAR(c[2], 0.5, 1e-15);
}

TEST(FieldForward, StatelessIsDeterministicWithShapes) {
  auto cfg = FieldConfig::from(EncodingConfig{2, 1, true}, 8, 4);
  auto p = init_bionerf_params<double>(cfg, 4);
  Rng rng = make_rng({11});
  auto x = random_tensor(Shape{6, cfg.pos_width}, rng);
  auto d = random_tensor(Shape{6, cfg.dir_width}, rng);
  MemoryState<double> s1(MemoryMode::stateless, 6, 8), s2(MemoryMode::stateless, 6, 8);
  auto a = field_forward(p, x, d, s1);
  auto b = field_forward(p, x, d, s2);
  EXPECT_EQ(a.delta.shape(), (Shape{6, 1}));
  EXPECT_EQ(a.c.shape(), (Shape{6, 3}));
  for (Index i = 0; i < a.delta.numel(); ++i) EXPECT_EQ(a.delta[i], b.delta[i]);
  for (Index i = 0; i < a.c.numel(); ++i) EXPECT_EQ(a.c[i], b.c[i]);
}

TEST(FieldForward, CarriedModeUpdatesBuffer) {
  auto cfg = FieldConfig::from(EncodingConfig{2, 1, true}, 8, 4);
  auto p = init_bionerf_params<double>(cfg, 4);
  Rng rng = make_rng({12});
  auto x = random_tensor(Shape{6, cfg.pos_width}, rng);
  auto d = random_tensor(Shape{6, cfg.dir_width}, rng);
  MemoryState<double> s(MemoryMode::carried, 6, 8);
  auto a = field_forward(p, x, d, s);
  for (Index i = 0; i < a.psi.numel(); ++i) EXPECT_EQ(s.psi()[i], a.psi[i]);
  auto b = field_forward(p, x, d, s);
  for (Index i = 0; i < a.psi.numel(); ++i) EXPECT_EQ(b.psi_prev[i], a.psi[i]);
  MemoryState<double> wrong(MemoryMode::carried, 5, 8);
  EXPECT_THROW(field_forward(p, x, d, wrong), StateShapeError);
}

TEST(FieldForward, GradientMatchesFiniteDifferences) {
  auto cfg = FieldConfig::from(EncodingConfig{2, 1, true}, 8, 4);
  auto p = init_bionerf_params<double>(cfg, 21);
  Rng rng = make_rng({13});
  auto x = random_tensor(Shape{4, cfg.pos_width}, rng);
  auto d = random_tensor(Shape{4, cfg.dir_width}, rng);
  auto psi0 = random_tensor(Shape{4, 8}, rng, -0.5, 0.5);
  auto loss = [&]() {
    MemoryState<double> s(MemoryMode::carried, 4, 8);
    std::copy(psi0.values().begin(), psi0.values().end(), s.mutable_psi().begin());
    auto out = field_forward(p, x, d, s);
    return add(sum(hadamard(out.delta, out.delta)), sum(sigmoid(out.c)));
  };
  p.visit([](const std::string&, Tensor<double>& t) { t.zero_grad(); });
  backward(loss());
  p.visit([&](const std::string& name, Tensor<double>& t) {
    const std::vector<double> analytic(t.grad().begin(), t.grad().end());
    for (Index i = 0; i < t.numel(); ++i) {
      const double orig = t[i];
      t.mutable_values()[i] = orig + 1e-6;
      const double lp = loss().item();
      t.mutable_values()[i] = orig - 1e-6;
      const double lm = loss().item();
      t.mutable_values()[i] = orig;
      const double fd = (lp - lm) / 2e-6;
      ASSERT_NEAR(analytic[i], fd, 1e-6 + 1e-4 * std::abs(fd)) << name << "[" << i << "]";
    }
  });
}

TEST(BaselineNerf, ZeroWeights) {
  auto cfg = FieldConfig::from(EncodingConfig{}, 16, 8);
  auto p = init_nerf_params<double>(cfg, 0);
  zero_all(p);
  Rng rng = make_rng({14});
  auto [delta, c] = baseline_nerf_forward(p, random_tensor(Shape{3, 63}, rng), random_tensor(Shape{3, 27}, rng));
  for (double v : delta.values()) EXPECT_EQ(v, 0.0);
  for (double v : c.values()) EXPECT_EQ(v, 0.0);
}

TEST(BaselineNerf, DensityIgnoresDirection) {
  auto cfg = FieldConfig::from(EncodingConfig{}, 16, 8);
  auto p = init_nerf_params<double>(cfg, 1);
  Rng rng = make_rng({15});
  auto x = random_tensor(Shape{3, 63}, rng);
  auto [da, ca] = baseline_nerf_forward(p, x, random_tensor(Shape{3, 27}, rng));
  auto [db, cb] = baseline_nerf_forward(p, x, random_tensor(Shape{3, 27}, rng));
  for (Index i = 0; i < da.numel(); ++i) EXPECT_EQ(da[i], db[i]);
}

TEST(RadianceField, QueryEncodesInputs) {
  ModelConfig mc;
  mc.hidden = 8;
  mc.color_hidden = 4;
  RadianceField<float> field(mc, 3);
  Rng rng = make_rng({16});
  std::vector<float> pv(15), dv(15);
  for (auto& v : pv) v = static_cast<float>(uniform(rng, -1, 1));
  for (auto& v : dv) v = static_cast<float>(uniform(rng, -1, 1));
  MemoryState<float> mem(MemoryMode::carried, 5, 8);
  auto [delta, c] = field.query(Tensor<float>::from(Shape{5, 3}, pv), Tensor<float>::from(Shape{5, 3}, dv), &mem, 0);
  EXPECT_EQ(delta.shape(), (Shape{5, 1}));
  EXPECT_EQ(c.shape(), (Shape{5, 3}));
  EXPECT_THROW(field.query(Tensor<float>::from(Shape{5, 3}, pv), Tensor<float>::from(Shape{5, 3}, dv), nullptr, 0),
               Error);
}

}  // namespace
}  // namespace bionerf
