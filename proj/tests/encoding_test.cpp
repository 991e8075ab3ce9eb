// Copyright 2026 The bionerf-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numbers>

#include "bionerf/encoding.hpp"
#include "bionerf/random.hpp"

namespace bionerf {
namespace {

using TD = Tensor<double>;

TEST(PositionalEncode, ZeroInputWithRaw) {
  auto y = positional_encode(TD::zeros(Shape{1, 3}), 2, true);
  ASSERT_EQ(y.shape(), (Shape{1, 15}));
  // Raw components, then (sin, cos) per frequency and component.
  for (Index k = 0; k < 3; ++k) EXPECT_EQ(y(0, k), 0.0);
  for (Index l = 0; l < 2; ++l) {
    for (Index k = 0; k < 3; ++k) {
      EXPECT_EQ(y(0, 3 + (l * 3 + k) * 2), 0.0);
      EXPECT_EQ(y(0, 3 + (l * 3 + k) * 2 + 1), 1.0);
    }
  }
}

TEST(PositionalEncode, HalfWithoutRaw) {
  auto y = positional_encode(TD::from(Shape{1, 1}, {0.5}), 1, false);
  ASSERT_EQ(y.shape(), (Shape{1, 2}));
  EXPECT_NEAR(y(0, 0), std::sin(std::numbers::pi / 2), 1e-15);
  EXPECT_NEAR(y(0, 1), std::cos(std::numbers::pi / 2), 1e-15);
}

TEST(PositionalEncode, Width) {
  EXPECT_EQ(positional_encode(TD::zeros(Shape{1, 3}), 10, true).shape(), (Shape{1, 63}));
  EXPECT_EQ(positional_encode(TD::zeros(Shape{4, 3}), 4, true).shape(), (Shape{4, 27}));
  EncodingConfig c;
  EXPECT_EQ(c.pos_width(), 63u);
  EXPECT_EQ(c.dir_width(), 27u);
}

TEST(PositionalEncode, MatchesDirectTrig) {
  Rng rng = make_rng({3});
  std::vector<double> v(30);
  for (auto& x : v) x = uniform(rng, -4.0, 4.0);
  auto p = TD::from(Shape{10, 3}, v);
  auto y = positional_encode(p, 10, false);
  double worst = 0.0;
  for (Index r = 0; r < 10; ++r) {
    for (Index l = 0; l < 10; ++l) {
      for (Index k = 0; k < 3; ++k) {
        const double arg = std::ldexp(std::numbers::pi, static_cast<int>(l)) * v[r * 3 + k];
        worst = std::max(worst, std::abs(y(r, (l * 3 + k) * 2) - std::sin(arg)));
        worst = std::max(worst, std::abs(y(r, (l * 3 + k) * 2 + 1) - std::cos(arg)));
      }
    }
  }
  EXPECT_LT(worst, 1e-9);
}

TEST(PositionalEncode, ValuesBounded) {
  Rng rng = make_rng({4});
  std::vector<float> v(3000);
  for (auto& x : v) x = static_cast<float>(uniform(rng, -100.0, 100.0));
  auto y = positional_encode(Tensor<float>::from(Shape{1000, 3}, v), 10, false);
  for (float e : y.values()) {
    EXPECT_LE(e, 1.0f);
    EXPECT_GE(e, -1.0f);
  }
}

TEST(PositionalEncode, NonFiniteInputRejected) {
  auto p = TD::from(Shape{1, 3}, {0.0, std::numeric_limits<double>::quiet_NaN(), 0.0});
  EXPECT_THROW(positional_encode(p, 2, true), NumericInputError);
  auto q = TD::from(Shape{1, 3}, {std::numeric_limits<double>::infinity(), 0.0, 0.0});
  EXPECT_THROW(positional_encode(q, 2, true), NumericInputError);
}

TEST(PositionalEncode, GradientMatchesFiniteDifferences) {
  Rng rng = make_rng({5});
  std::vector<double> v(6), wts(2 * (3 + 2 * 3 * 3));
  for (auto& x : v) x = uniform(rng, -1.0, 1.0);
  for (auto& x : wts) x = uniform(rng, -1.0, 1.0);
  auto weights = TD::from(Shape{2, 21}, wts);
  auto loss_of = [&](const std::vector<double>& pv, TD* leaf) {
    auto p = TD::from(Shape{2, 3}, pv, true);
    if (leaf) *leaf = p;
    return sum(hadamard(positional_encode(p, 3, true), weights));
  };
  TD p;
  backward(loss_of(v, &p));
  for (Index i = 0; i < 6; ++i) {
    auto vp = v, vm = v;
    vp[i] += 1e-6;
    vm[i] -= 1e-6;
    const double fd = (loss_of(vp, nullptr).item() - loss_of(vm, nullptr).item()) / 2e-6;
    EXPECT_NEAR(p.grad()[i], fd, 1e-5 * std::max(1.0, std::abs(fd)));
  }
}

}  // namespace
}  // namespace bionerf
