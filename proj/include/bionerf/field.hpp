// Copyright 2026 The bionerf-cpp Authors
// SPDX-License-Identifier: Apache-2.0

// Radiance fields: the gated-memory BioNeRF field and the plain NeRF MLP used
// as the matched-budget baseline.
//
// BioNeRF pipeline for a batch of z rows:
//   1. h_delta = M_delta(x), h_c = M_c(x)            two 3-layer ReLU MLPs
//   2. f_delta = sigmoid(W h_delta + b)               density filter
//      f_c     = sigmoid(W h_c + b)                   color filter
//      f_psi   = sigmoid(W [h_delta, h_c] + b)        memory (forget) filter
//      f_mu    = sigmoid(W [h_delta, h_c] + b)        modulation filter
//      gamma   = tanh(W [h_delta, h_c] + b)           pre-modulation
//   3. mu  = f_mu * gamma
//      psi = tanh(W_psi (mu + f_psi * psi_prev) + b_psi)
//   4. delta = M'_delta([psi * f_delta, x]),  c = M'_c([psi * f_c, d])
// All products in steps 3 and 4 are elementwise.

#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "bionerf/encoding.hpp"
#include "bionerf/random.hpp"
#include "bionerf/tensor.hpp"

namespace bionerf {

enum class FieldKind { bionerf, nerf };
enum class MemoryMode { carried, stateless };

inline const char* to_string(FieldKind k) { return k == FieldKind::bionerf ? "bionerf" : "nerf"; }
inline const char* to_string(MemoryMode m) { return m == MemoryMode::carried ? "carried" : "stateless"; }

struct FieldConfig {
  Index pos_width = EncodingConfig{}.pos_width();
  Index dir_width = EncodingConfig{}.dir_width();
  Index hidden = 256;
  Index color_hidden = 128;
  // Baseline NeRF trunk: `nerf_depth` layers, the input of layer `nerf_skip`
  // is concatenated with the encoded position.
  Index nerf_depth = 8;
  Index nerf_skip = 5;

  static FieldConfig from(const EncodingConfig& enc, Index hidden = 256, Index color_hidden = 128) {
    FieldConfig c;
    c.pos_width = enc.pos_width();
    c.dir_width = enc.dir_width();
    c.hidden = hidden;
    c.color_hidden = color_hidden;
    return c;
  }
};

template <class T>
struct Dense {
  Tensor<T> weight;  // [in, out]
  Tensor<T> bias;    // [out]

  Index in() const { return weight.shape()[0]; }
  Index out() const { return weight.shape()[1]; }
  Tensor<T> operator()(const Tensor<T>& x) const { return affine(x, weight, bias); }
};

namespace detail {

// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero.
template <class T>
Dense<T> init_dense(Index in, Index out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::vector<T> w(in * out);
  for (auto& v : w) v = static_cast<T>(uniform(rng, -bound, bound));
  return Dense<T>{Tensor<T>::from(Shape{in, out}, std::move(w), true), Tensor<T>::zeros(Shape{out}, true)};
}

constexpr Index dense_count(Index in, Index out) { return in * out + out; }

template <class T, class F>
void visit_dense(const std::string& name, Dense<T>& d, F& f) {
  f(name + ".weight", d.weight);
  f(name + ".bias", d.bias);
}

}  // namespace detail

/// Weights of one BioNeRF field instance.
template <class T>
struct BioNerfParams {
  FieldConfig config;
  std::array<Dense<T>, 3> extract_delta;
  std::array<Dense<T>, 3> extract_c;
  Dense<T> filter_delta;
  Dense<T> filter_c;
  Dense<T> filter_psi;
  Dense<T> filter_mu;
  Dense<T> pre_modulation;
  Dense<T> memory;
  std::array<Dense<T>, 3> density_head;
  std::array<Dense<T>, 2> color_head;

  template <class F>
  void visit(F&& f) {
    for (Index i = 0; i < 3; ++i) detail::visit_dense("extract_delta." + std::to_string(i), extract_delta[i], f);
    for (Index i = 0; i < 3; ++i) detail::visit_dense("extract_c." + std::to_string(i), extract_c[i], f);
    detail::visit_dense("filter_delta", filter_delta, f);
    detail::visit_dense("filter_c", filter_c, f);
    detail::visit_dense("filter_psi", filter_psi, f);
    detail::visit_dense("filter_mu", filter_mu, f);
    detail::visit_dense("pre_modulation", pre_modulation, f);
    detail::visit_dense("memory", memory, f);
    for (Index i = 0; i < 3; ++i) detail::visit_dense("density_head." + std::to_string(i), density_head[i], f);
    for (Index i = 0; i < 2; ++i) detail::visit_dense("color_head." + std::to_string(i), color_head[i], f);
  }

  Index parameter_count() {
    Index n = 0;
    visit([&](const std::string&, Tensor<T>& t) { n += t.numel(); });
    return n;
  }

  static constexpr Index expected_parameter_count(const FieldConfig& c) {
    using detail::dense_count;
    const Index h = c.hidden;
    return 2 * (dense_count(c.pos_width, h) + 2 * dense_count(h, h))  // extraction blocks
           + 2 * dense_count(h, h)                                     // f_delta, f_c
           + 3 * dense_count(2 * h, h)                                 // f_psi, f_mu, gamma
           + dense_count(h, h)                                         // memory
           + dense_count(h + c.pos_width, h) + dense_count(h, h) + dense_count(h, 1)
           + dense_count(h + c.dir_width, c.color_hidden) + dense_count(c.color_hidden, 3);
  }
};

template <class T>
BioNerfParams<T> init_bionerf_params(const FieldConfig& config, std::uint64_t seed) {
  Rng rng = make_rng({seed, 0xB10});
  const Index h = config.hidden;
  BioNerfParams<T> p;
  p.config = config;
  p.extract_delta = {detail::init_dense<T>(config.pos_width, h, rng), detail::init_dense<T>(h, h, rng),
                     detail::init_dense<T>(h, h, rng)};
  p.extract_c = {detail::init_dense<T>(config.pos_width, h, rng), detail::init_dense<T>(h, h, rng),
                 detail::init_dense<T>(h, h, rng)};
  p.filter_delta = detail::init_dense<T>(h, h, rng);
  p.filter_c = detail::init_dense<T>(h, h, rng);
  p.filter_psi = detail::init_dense<T>(2 * h, h, rng);
  p.filter_mu = detail::init_dense<T>(2 * h, h, rng);
  p.pre_modulation = detail::init_dense<T>(2 * h, h, rng);
  p.memory = detail::init_dense<T>(h, h, rng);
  p.density_head = {detail::init_dense<T>(h + config.pos_width, h, rng), detail::init_dense<T>(h, h, rng),
                    detail::init_dense<T>(h, 1, rng)};
  p.color_head = {detail::init_dense<T>(h + config.dir_width, config.color_hidden, rng),
                  detail::init_dense<T>(config.color_hidden, 3, rng)};
  if (p.parameter_count() != BioNerfParams<T>::expected_parameter_count(config)) {
    throw Error("BioNeRF parameter count does not match its layout");
  }
  return p;
}

/// Recurrent memory buffer, one row per batch slot.
template <class T>
class MemoryState {
 public:
  MemoryState() = default;
  MemoryState(MemoryMode mode, Index rows, Index width)
      : mode_(mode), rows_(rows), width_(width), psi_(rows * width, T(0)) {}

  MemoryMode mode() const noexcept { return mode_; }
  Index rows() const noexcept { return rows_; }
  Index width() const noexcept { return width_; }
  std::span<const T> psi() const noexcept { return psi_; }
  std::span<T> mutable_psi() noexcept { return psi_; }

  /// Completed training iterations that updated the buffer.
  std::uint64_t iteration = 0;

  /// Previous memory for rows [begin, begin + count) as a constant tensor.
  /// Stateless mode always yields zeros.
  Tensor<T> read(Index begin, Index count) const {
    if (mode_ == MemoryMode::stateless) return Tensor<T>::zeros(Shape{count, width_});
    check_range(begin, count);
    std::vector<T> v(psi_.begin() + begin * width_, psi_.begin() + (begin + count) * width_);
    return Tensor<T>::from(Shape{count, width_}, std::move(v));
  }

  /// Stores an updated memory slice, detached from its graph. No-op when stateless.
  void write(Index begin, const Tensor<T>& psi) {
    if (mode_ == MemoryMode::stateless) return;
    if (psi.shape().rank() != 2 || psi.shape()[1] != width_) {
      throw StateShapeError("memory width " + std::to_string(width_) + " given " + psi.shape().str());
    }
    check_range(begin, psi.shape()[0]);
    std::copy(psi.values().begin(), psi.values().end(), psi_.begin() + begin * width_);
  }

  void reset() { std::fill(psi_.begin(), psi_.end(), T(0)); }

 private:
  void check_range(Index begin, Index count) const {
    if (begin + count > rows_) {
      throw StateShapeError("rows [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                            ") exceed buffer of " + std::to_string(rows_) + " rows");
    }
  }

  MemoryMode mode_ = MemoryMode::stateless;
  Index rows_ = 0;
  Index width_ = 0;
  std::vector<T> psi_;
};

template <class T>
struct Filters {
  Tensor<T> f_delta;
  Tensor<T> f_c;
  Tensor<T> f_psi;
  Tensor<T> f_mu;
  Tensor<T> gamma;
};

template <class T>
struct PositionalFeatures {
  Tensor<T> h_delta;
  Tensor<T> h_c;
};

template <class T>
struct FieldOutput {
  Tensor<T> delta;     // [z, 1] raw density
  Tensor<T> c;         // [z, 3] raw color
  Tensor<T> psi_prev;  // [z, h] memory read at the start of the pass
  Tensor<T> psi;       // [z, h] updated memory
  Filters<T> filters;
};

namespace detail {

template <class T, std::size_t N>
Tensor<T> relu_chain(const std::array<Dense<T>, N>& layers, Tensor<T> x) {
  for (const auto& layer : layers) x = relu(layer(x));
  return x;
}

}  // namespace detail

template <class T>
PositionalFeatures<T> extract_positional_features(const BioNerfParams<T>& params, const Tensor<T>& x_enc) {
  return {detail::relu_chain(params.extract_delta, x_enc), detail::relu_chain(params.extract_c, x_enc)};
}

template <class T>
Filters<T> compute_filters(const BioNerfParams<T>& params, const Tensor<T>& h_delta, const Tensor<T>& h_c) {
  const auto joint = concat(h_delta, h_c);
  return Filters<T>{
      sigmoid(params.filter_delta(h_delta)),
      sigmoid(params.filter_c(h_c)),
      sigmoid(params.filter_psi(joint)),
      sigmoid(params.filter_mu(joint)),
      tanh(params.pre_modulation(joint)),
  };
}

/// psi = tanh(W_psi (f_mu * gamma + f_psi * psi_prev) + b_psi). `psi_prev`
/// is a constant: no gradient flows into earlier iterations.
template <class T>
Tensor<T> update_memory(const BioNerfParams<T>& params, const Filters<T>& filters, const Tensor<T>& psi_prev) {
  if (psi_prev.shape() != filters.f_psi.shape()) {
    throw StateShapeError("memory " + psi_prev.shape().str() + " vs batch " + filters.f_psi.shape().str());
  }
  const auto mu = hadamard(filters.f_mu, filters.gamma);
  return tanh(params.memory(add(mu, hadamard(filters.f_psi, psi_prev))));
}

/// Density from [psi * f_delta, l], color from [psi * f_c, d]. Outputs are
/// pre-activation; the compositor applies ReLU and sigmoid.
template <class T>
std::pair<Tensor<T>, Tensor<T>> contextual_inference(const BioNerfParams<T>& params, const Tensor<T>& psi,
                                                     const Filters<T>& filters, const Tensor<T>& l,
                                                     const Tensor<T>& d) {
  const auto& dh = params.density_head;
  auto h = concat(hadamard(psi, filters.f_delta), l);
  h = relu(dh[1](relu(dh[0](h))));
  auto delta = dh[2](h);

  const auto& ch = params.color_head;
  auto hc = concat(hadamard(psi, filters.f_c), d);
  auto c = ch[1](relu(ch[0](hc)));
  return {std::move(delta), std::move(c)};
}

/// Full BioNeRF pass over rows [row_begin, row_begin + z) of the memory
/// buffer; the updated memory is written back into `state`.
template <class T>
FieldOutput<T> field_forward(const BioNerfParams<T>& params, const Tensor<T>& x_enc, const Tensor<T>& d_enc,
                             MemoryState<T>& state, Index row_begin) {
  detail::require_rank2(x_enc.shape(), "field_forward", "x_enc");
  detail::require_rank2(d_enc.shape(), "field_forward", "d_enc");
  if (x_enc.shape()[1] != params.config.pos_width || d_enc.shape()[1] != params.config.dir_width) {
    throw DimensionError("field_forward: encodings " + x_enc.shape().str() + ", " + d_enc.shape().str() +
                         " do not match field widths " + std::to_string(params.config.pos_width) + ", " +
                         std::to_string(params.config.dir_width));
  }
  if (state.width() != params.config.hidden) {
    throw StateShapeError("memory width " + std::to_string(state.width()) + " vs hidden " +
                          std::to_string(params.config.hidden));
  }
  const Index z = x_enc.shape()[0];
  FieldOutput<T> out;
  const auto features = extract_positional_features(params, x_enc);
  out.filters = compute_filters(params, features.h_delta, features.h_c);
  out.psi_prev = state.read(row_begin, z);
  out.psi = update_memory(params, out.filters, out.psi_prev);
  std::tie(out.delta, out.c) = contextual_inference(params, out.psi, out.filters, x_enc, d_enc);
  state.write(row_begin, out.psi);
  return out;
}

/// Whole-batch pass; in carried mode the batch must match the buffer rows.
template <class T>
FieldOutput<T> field_forward(const BioNerfParams<T>& params, const Tensor<T>& x_enc, const Tensor<T>& d_enc,
                             MemoryState<T>& state) {
  if (state.mode() == MemoryMode::carried && x_enc.shape()[0] != state.rows()) {
    throw StateShapeError("batch of " + std::to_string(x_enc.shape()[0]) + " rows vs memory of " +
                          std::to_string(state.rows()) + " rows");
  }
  return field_forward(params, x_enc, d_enc, state, 0);
}

/// Weights of the baseline NeRF MLP.
template <class T>
struct NerfParams {
  FieldConfig config;
  std::vector<Dense<T>> trunk;
  Dense<T> density;
  Dense<T> feature;
  Dense<T> view;
  Dense<T> rgb;

  template <class F>
  void visit(F&& f) {
    for (Index i = 0; i < trunk.size(); ++i) detail::visit_dense("trunk." + std::to_string(i), trunk[i], f);
    detail::visit_dense("density", density, f);
    detail::visit_dense("feature", feature, f);
    detail::visit_dense("view", view, f);
    detail::visit_dense("rgb", rgb, f);
  }

  Index parameter_count() {
    Index n = 0;
    visit([&](const std::string&, Tensor<T>& t) { n += t.numel(); });
    return n;
  }

  static constexpr Index expected_parameter_count(const FieldConfig& c) {
    using detail::dense_count;
    const Index w = c.hidden;
    Index n = dense_count(c.pos_width, w);
    for (Index i = 1; i < c.nerf_depth; ++i) n += dense_count(i == c.nerf_skip ? w + c.pos_width : w, w);
    return n + dense_count(w, 1) + dense_count(w, w) + dense_count(w + c.dir_width, c.color_hidden) +
           dense_count(c.color_hidden, 3);
  }
};

template <class T>
NerfParams<T> init_nerf_params(const FieldConfig& config, std::uint64_t seed) {
  Rng rng = make_rng({seed, 0x4E});
  const Index w = config.hidden;
  NerfParams<T> p;
  p.config = config;
  p.trunk.push_back(detail::init_dense<T>(config.pos_width, w, rng));
  for (Index i = 1; i < config.nerf_depth; ++i) {
    p.trunk.push_back(detail::init_dense<T>(i == config.nerf_skip ? w + config.pos_width : w, w, rng));
  }
  p.density = detail::init_dense<T>(w, 1, rng);
  p.feature = detail::init_dense<T>(w, w, rng);
  p.view = detail::init_dense<T>(w + config.dir_width, config.color_hidden, rng);
  p.rgb = detail::init_dense<T>(config.color_hidden, 3, rng);
  if (p.parameter_count() != NerfParams<T>::expected_parameter_count(config)) {
    throw Error("NeRF parameter count does not match its layout");
  }
  return p;
}

template <class T>
std::pair<Tensor<T>, Tensor<T>> baseline_nerf_forward(const NerfParams<T>& params, const Tensor<T>& x_enc,
                                                      const Tensor<T>& d_enc) {
  if (x_enc.shape().rank() != 2 || x_enc.shape()[1] != params.config.pos_width) {
    throw DimensionError("baseline_nerf_forward: x_enc " + x_enc.shape().str());
  }
  Tensor<T> h = x_enc;
  for (Index i = 0; i < params.trunk.size(); ++i) {
    if (i == params.config.nerf_skip) h = concat(h, x_enc);
    h = relu(params.trunk[i](h));
  }
  auto delta = params.density(h);
  auto feature = params.feature(h);
  auto c = params.rgb(relu(params.view(concat(feature, d_enc))));
  return {std::move(delta), std::move(c)};
}

}  // namespace bionerf
