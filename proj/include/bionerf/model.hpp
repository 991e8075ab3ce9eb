// Copyright 2026 The bionerf-cpp Authors
// SPDX-License-Identifier: Apache-2.0

// Coarse/fine pair of radiance fields with their memory buffers.

#pragma once

#include <string>

#include "bionerf/encoding.hpp"
#include "bionerf/field.hpp"
#include "bionerf/rendering.hpp"

namespace bionerf {

struct ModelConfig {
  FieldKind kind = FieldKind::bionerf;
  MemoryMode memory = MemoryMode::carried;
  EncodingConfig encoding;
  Index hidden = 256;
  Index color_hidden = 128;
  Index nerf_depth = 8;
  Index nerf_skip = 5;

  FieldConfig field_config() const {
    auto c = FieldConfig::from(encoding, hidden, color_hidden);
    c.nerf_depth = nerf_depth;
    c.nerf_skip = nerf_skip;
    return c;
  }
};

/// One field instance (BioNeRF or baseline) behind a common query surface.
template <class T>
class RadianceField {
 public:
  RadianceField() = default;
  RadianceField(const ModelConfig& config, std::uint64_t seed) : config_(config) {
    config.encoding.validate();
    if (config.kind == FieldKind::bionerf) {
      bio_ = init_bionerf_params<T>(config.field_config(), seed);
    } else {
      nerf_ = init_nerf_params<T>(config.field_config(), seed);
    }
  }

  FieldKind kind() const noexcept { return config_.kind; }
  const ModelConfig& config() const noexcept { return config_; }
  BioNerfParams<T>& bionerf() { return bio_; }
  NerfParams<T>& nerf() { return nerf_; }

  /// Encodes positions/directions and evaluates the field. `memory` is used
  /// only by BioNeRF; rows [row_begin, row_begin + R) of it are read and
  /// updated.
  std::pair<Tensor<T>, Tensor<T>> query(const Tensor<T>& positions, const Tensor<T>& directions,
                                        MemoryState<T>* memory, Index row_begin,
                                        FieldOutput<T>* details = nullptr) const {
    const auto& enc = config_.encoding;
    auto x_enc = positional_encode(positions, enc.l_pos, enc.include_input);
    auto d_enc = positional_encode(directions, enc.l_dir, enc.include_input);
    if (config_.kind == FieldKind::nerf) return baseline_nerf_forward(nerf_, x_enc, d_enc);
    if (!memory) throw Error("BioNeRF query without a memory state");
    auto out = field_forward(bio_, x_enc, d_enc, *memory, row_begin);
    std::pair<Tensor<T>, Tensor<T>> result{out.delta, out.c};
    if (details) *details = std::move(out);
    return result;
  }

  template <class F>
  void visit(F&& f) {
    if (config_.kind == FieldKind::bionerf) {
      bio_.visit(f);
    } else {
      nerf_.visit(f);
    }
  }

  Index parameter_count() {
    return config_.kind == FieldKind::bionerf ? bio_.parameter_count() : nerf_.parameter_count();
  }

 private:
  ModelConfig config_;
  BioNerfParams<T> bio_;
  NerfParams<T> nerf_;
};

template <class T>
struct Model {
  ModelConfig config;
  RadianceField<T> coarse;
  RadianceField<T> fine;

  Model() = default;
  Model(const ModelConfig& c, std::uint64_t seed) : config(c), coarse(c, seed * 2 + 1), fine(c, seed * 2 + 2) {}

  /// Visits every parameter as ("coarse.<name>" | "fine.<name>", tensor).
  template <class F>
  void visit(F&& f) {
    coarse.visit([&](const std::string& n, Tensor<T>& t) { f("coarse." + n, t); });
    fine.visit([&](const std::string& n, Tensor<T>& t) { f("fine." + n, t); });
  }
};

/// Renders one view with fresh zero memory; the memory is carried from chunk
/// to chunk in carried mode.
template <class T>
RenderedImage render_view(const Model<T>& model, const CameraModel& camera, const RenderConfig& config) {
  const Index hidden = model.config.hidden;
  MemoryState<T> coarse_mem(model.config.memory, config.chunk * config.n_coarse, hidden);
  MemoryState<T> fine_mem(model.config.memory, config.chunk * (config.n_coarse + config.n_fine), hidden);
  FieldFn<T> coarse = [&](const Tensor<T>& p, const Tensor<T>& d, Index) {
    return model.coarse.query(p, d, &coarse_mem, 0);
  };
  FieldFn<T> fine = [&](const Tensor<T>& p, const Tensor<T>& d, Index) {
    return model.fine.query(p, d, &fine_mem, 0);
  };
  return render_image<T>(coarse, fine, camera, config);
}

}  // namespace bionerf
