// Copyright 2026 The bionerf-cpp Authors
// SPDX-License-Identifier: Apache-2.0

// Loss, optimizer and ray-batch sampling. The iteration loop lives in
// trainer.hpp.

#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "bionerf/data.hpp"
#include "bionerf/rendering.hpp"
#include "bionerf/tensor.hpp"

namespace bionerf {

struct TrainConfig {
  double learning_rate = 5e-4;
  double lr_final = 5e-5;
  std::uint64_t iterations = 400000;
  Index batch_rays = 8192;
  Index chunk_rays = 1024;  // rays per differentiation graph inside one batch
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;
  bool jitter = true;
  std::uint64_t checkpoint_every = 0;  // 0 disables periodic checkpoints
  std::uint64_t val_every = 0;         // 0 disables validation

  void validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("train.learning_rate must be positive");
    if (!(lr_final > 0.0)) throw ConfigError("train.lr_final must be positive");
    if (batch_rays == 0) throw ConfigError("train.batch_rays must be positive");
    if (chunk_rays == 0) throw ConfigError("train.chunk_rays must be positive");
    // The step counter is checkpointed as a float32.
    if (iterations >= (1ull << 24)) throw ConfigError("train.iterations must be below 2^24");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
      throw ConfigError("train.beta1/beta2 must lie in [0, 1)");
    }
    if (!(epsilon > 0.0)) throw ConfigError("train.epsilon must be positive");
  }
};

/// Exponential decay from learning_rate at step 0 to lr_final at step
/// `iterations`.
inline double learning_rate_at(const TrainConfig& c, std::uint64_t step) {
  if (step == 0) return c.learning_rate;
  if (step >= c.iterations) return c.lr_final;
  const double frac = static_cast<double>(step) / static_cast<double>(c.iterations);
  return c.learning_rate * std::pow(c.lr_final / c.learning_rate, frac);
}

/// Mean of squared differences over all entries; `target` is constant.
template <class T>
Tensor<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  if (pred.shape() != target.shape()) {
    throw DimensionError("mse_loss: " + pred.shape().str() + " vs " + target.shape().str());
  }
  const Index n = pred.numel();
  std::vector<T> t(target.values().begin(), target.values().end());
  return make_op<T>(
      "mse", Shape{1}, {pred},
      [t, n](detail::Node<T>& self) {
        const T* p = self.inputs[0]->value.data();
        double acc = 0.0;
        for (Index i = 0; i < n; ++i) {
          const double d = static_cast<double>(p[i]) - static_cast<double>(t[i]);
          acc += d * d;
        }
        self.value[0] = static_cast<T>(n ? acc / static_cast<double>(n) : 0.0);
      },
      [t, n](detail::Node<T>& self) {
        const T* p = self.inputs[0]->value.data();
        T* dp = self.inputs[0]->grad_buffer().data();
        const double k = 2.0 * static_cast<double>(self.grad[0]) / static_cast<double>(n);
        for (Index i = 0; i < n; ++i) {
          dp[i] += static_cast<T>(k * (static_cast<double>(p[i]) - static_cast<double>(t[i])));
        }
      });
}

/// First/second moment buffers in parameter visitation order.
struct AdamState {
  std::vector<std::string> names;
  std::vector<std::vector<float>> m;
  std::vector<std::vector<float>> v;
  std::uint64_t t = 0;
};

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// One bias-corrected Adam update over every parameter produced by `visit`.
/// Every parameter must carry a gradient.
template <class Visit>
void adam_step(Visit&& visit, AdamState& state, double lr, const AdamOptions& opt = {}) {
  std::vector<std::pair<std::string, Tensor<float>*>> params;
  visit([&](const std::string& name, Tensor<float>& t) { params.emplace_back(name, &t); });
  for (auto& [name, t] : params) {
    if (!t->has_grad()) throw OptimizerError("parameter '" + name + "' has no gradient");
  }
  if (state.names.empty()) {
    for (auto& [name, t] : params) {
      state.names.push_back(name);
      state.m.emplace_back(t->numel(), 0.0f);
      state.v.emplace_back(t->numel(), 0.0f);
    }
  }
  if (state.names.size() != params.size()) throw OptimizerError("parameter set changed between steps");
  state.t += 1;
  const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(state.t));
  for (Index p = 0; p < params.size(); ++p) {
    auto& [name, t] = params[p];
    if (name != state.names[p]) throw OptimizerError("parameter order changed at '" + name + "'");
    auto values = t->mutable_values();
    auto grad = t->grad();
    auto& m = state.m[p];
    auto& v = state.v[p];
    for (Index i = 0; i < values.size(); ++i) {
      const double g = grad[i];
      const double mi = opt.beta1 * m[i] + (1.0 - opt.beta1) * g;
      const double vi = opt.beta2 * v[i] + (1.0 - opt.beta2) * g * g;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      const double step = lr * (mi / c1) / (std::sqrt(vi / c2) + opt.epsilon);
      values[i] = static_cast<float>(values[i] - step);
    }
  }
}

/// Training targets of a split, composited once onto the scene background.
struct TrainingImages {
  std::vector<CameraModel> cameras;
  std::vector<Image> targets;  // RGB

  static TrainingImages from(const SceneDataset& ds) {
    TrainingImages out;
    for (const auto& v : ds.train) {
      out.cameras.push_back(v.camera);
      out.targets.push_back(ds.target(v));
    }
    return out;
  }
};

/// `z` rays for pixels drawn uniformly with replacement across all training
/// images (each image uniformly, then a pixel uniformly within it).
template <class T = float>
RayBatch<T> sample_ray_batch(const TrainingImages& images, Index z, double near, double far, Rng& rng,
                             std::vector<Index>* picked_images = nullptr) {
  if (images.cameras.empty()) throw ValidationError("dataset has no training images");
  std::vector<T> o(z * 3), d(z * 3), rgb(z * 3);
  for (Index i = 0; i < z; ++i) {
    const Index img = uniform_index(rng, images.cameras.size());
    const auto& cam = images.cameras[img];
    const Index pixel = uniform_index(rng, cam.width * cam.height);
    if (picked_images) picked_images->push_back(img);
    const Index id[1] = {pixel};
    auto ray = generate_rays<T>(cam, std::span<const Index>(id, 1), near, far);
    for (Index c = 0; c < 3; ++c) {
      o[i * 3 + c] = ray.origins[c];
      d[i * 3 + c] = ray.directions[c];
      rgb[i * 3 + c] = static_cast<T>(std::clamp(images.targets[img].data[pixel * 3 + c], 0.0f, 1.0f));
    }
  }
  RayBatch<T> batch;
  batch.origins = Tensor<T>::from(Shape{z, 3}, std::move(o));
  batch.directions = Tensor<T>::from(Shape{z, 3}, std::move(d));
  batch.target_rgb = Tensor<T>::from(Shape{z, 3}, std::move(rgb));
  batch.near = near;
  batch.far = far;
  return batch;
}

/// Rays [begin, begin + count) of a batch.
template <class T>
RayBatch<T> slice_rays(const RayBatch<T>& batch, Index begin, Index count) {
  auto rows = [&](const Tensor<T>& t) {
    if (!t.defined()) return t;
    const Index k = t.cols();
    std::vector<T> v(t.values().begin() + begin * k, t.values().begin() + (begin + count) * k);
    return Tensor<T>::from(Shape{count, k}, std::move(v));
  };
  RayBatch<T> out;
  out.origins = rows(batch.origins);
  out.directions = rows(batch.directions);
  out.target_rgb = rows(batch.target_rgb);
  out.near = batch.near;
  out.far = batch.far;
  return out;
}

}  // namespace bionerf
