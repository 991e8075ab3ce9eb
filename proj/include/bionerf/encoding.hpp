// Copyright 2026 The bionerf-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>

#include "bionerf/tensor.hpp"

namespace bionerf {

struct EncodingConfig {
  Index l_pos = 10;
  Index l_dir = 4;
  bool include_input = true;

  static constexpr Index width(Index frequencies, bool include_input, Index components = 3) {
    return components * ((include_input ? 1 : 0) + 2 * frequencies);
  }
  Index pos_width() const { return width(l_pos, include_input); }
  Index dir_width() const { return width(l_dir, include_input); }

  void validate() const {
    if (l_pos < 1 || l_dir < 1) throw ConfigError("encoding frequencies must be >= 1");
  }
};

namespace detail {

// sin/cos of the doubled angle.
inline void next_octave(double& s, double& c) {
  const double s2 = 2.0 * s * c;
  c = (c - s) * (c + s);
  s = s2;
}

}  // namespace detail

/// Sinusoidal lifting of each input column.
///
/// Column layout for an input row (x_0..x_{k-1}): the raw values first when
/// `include_input`, then for every frequency 2^l·π (l = 0..L-1) and every
/// component the pair sin, cos.
template <class T>
Tensor<T> positional_encode(const Tensor<T>& p, Index frequencies, bool include_input) {
  detail::require_rank2(p.shape(), "positional_encode", "p");
  if (frequencies < 1) throw ConfigError("positional encoding needs at least one frequency");
  for (T v : p.values()) {
    if (!std::isfinite(v)) throw NumericInputError("positional_encode received " + std::to_string(v));
  }
  const Index n = p.shape()[0], k = p.shape()[1];
  const Index raw = include_input ? k : 0;
  const Index width = raw + 2 * frequencies * k;
  return make_op<T>(
      "positional_encode", Shape{n, width}, {p},
      [=](detail::Node<T>& self) {
        const T* in = self.inputs[0]->value.data();
        T* out = self.value.data();
        for (Index i = 0; i < n; ++i) {
          const T* x = in + i * k;
          T* row = out + i * width;
          for (Index c = 0; c < raw; ++c) row[c] = x[c];
          for (Index c = 0; c < k; ++c) {
            double s = std::sin(std::numbers::pi * static_cast<double>(x[c]));
            double co = std::cos(std::numbers::pi * static_cast<double>(x[c]));
            for (Index l = 0; l < frequencies; ++l) {
              T* dst = row + raw + 2 * k * l + 2 * c;
              dst[0] = static_cast<T>(std::clamp(s, -1.0, 1.0));
              dst[1] = static_cast<T>(std::clamp(co, -1.0, 1.0));
              detail::next_octave(s, co);
            }
          }
        }
      },
      [=](detail::Node<T>& self) {
        const T* in = self.inputs[0]->value.data();
        const T* g = self.grad.data();
        T* dp = self.inputs[0]->grad_buffer().data();
        for (Index i = 0; i < n; ++i) {
          const T* x = in + i * k;
          const T* grow = g + i * width;
          for (Index c = 0; c < raw; ++c) dp[i * k + c] += grow[c];
          for (Index c = 0; c < k; ++c) {
            double s = std::sin(std::numbers::pi * static_cast<double>(x[c]));
            double co = std::cos(std::numbers::pi * static_cast<double>(x[c]));
            double omega = std::numbers::pi;
            double acc = 0.0;
            for (Index l = 0; l < frequencies; ++l, omega *= 2.0) {
              const T* gl = grow + raw + 2 * k * l + 2 * c;
              acc += omega * (gl[0] * co - gl[1] * s);
              detail::next_octave(s, co);
            }
            dp[i * k + c] += static_cast<T>(acc);
          }
        }
      });
}

}  // namespace bionerf
