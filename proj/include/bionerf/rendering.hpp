// Copyright 2026 The bionerf-cpp Authors
// SPDX-License-Identifier: Apache-2.0

// Camera rays, depth sampling and differentiable alpha compositing.

#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <vector>

#include "bionerf/image.hpp"
#include "bionerf/random.hpp"
#include "bionerf/tensor.hpp"

namespace bionerf {

using Rgb = std::array<double, 3>;

/// Pinhole camera. `camera_to_world` is right-handed with the camera looking
/// down its local -z axis and +y up (OpenGL convention).
struct CameraModel {
  Eigen::Matrix4d camera_to_world = Eigen::Matrix4d::Identity();
  double focal = 1.0;
  Index width = 1;
  Index height = 1;

  Eigen::Matrix3d rotation() const { return camera_to_world.topLeftCorner<3, 3>(); }
  Eigen::Vector3d origin() const { return camera_to_world.topRightCorner<3, 1>(); }

  /// Largest deviation of RᵀR from the identity.
  double orthonormality_error() const {
    return (rotation().transpose() * rotation() - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  }

  void validate(double tolerance = 1e-4) const {
    if (!(focal > 0.0)) throw ValidationError("camera focal must be positive");
    if (width == 0 || height == 0) throw ValidationError("camera has zero image size");
    if (!(orthonormality_error() <= tolerance)) {
      throw ValidationError("camera rotation is not orthonormal (error " +
                            std::to_string(orthonormality_error()) + ")");
    }
  }
};

template <class T>
struct RayBatch {
  Tensor<T> origins;     // [z, 3]
  Tensor<T> directions;  // [z, 3] unit
  Tensor<T> target_rgb;  // [z, 3], empty outside training
  double near = 0.0;
  double far = 1.0;

  Index size() const { return origins.defined() ? origins.shape()[0] : 0; }
};

template <class T>
struct SamplePoints {
  Index rays = 0;
  Index samples = 0;
  Tensor<T> t_vals;     // [z, N], non-decreasing per ray
  Tensor<T> positions;  // [z, N, 3]

  /// Positions and matching per-sample directions as [z*N, 3] constants.
  Tensor<T> flat_positions() const {
    return Tensor<T>::from(Shape{rays * samples, 3}, std::vector<T>(positions.values().begin(), positions.values().end()));
  }
};

template <class T>
struct RenderOutput {
  Tensor<T> rgb;               // [z, 3], differentiable w.r.t. density and color
  Tensor<T> weights;           // [z, N]
  Tensor<T> accumulated_alpha; // [z]
  Tensor<T> depth;             // [z]
};

/// Ray through the centre of each pixel (id = v * width + u).
template <class T>
RayBatch<T> generate_rays(const CameraModel& camera, std::span<const Index> pixel_ids, double near, double far) {
  const Index n = pixel_ids.size();
  std::vector<T> origins(n * 3), dirs(n * 3);
  const Eigen::Matrix3d r = camera.rotation();
  const Eigen::Vector3d o = camera.origin();
  const double half_w = 0.5 * static_cast<double>(camera.width);
  const double half_h = 0.5 * static_cast<double>(camera.height);
  for (Index i = 0; i < n; ++i) {
    const Index id = pixel_ids[i];
    if (id >= camera.width * camera.height) {
      throw IndexError("pixel " + std::to_string(id) + " outside " + std::to_string(camera.width) + "x" +
                       std::to_string(camera.height));
    }
    const double u = static_cast<double>(id % camera.width);
    const double v = static_cast<double>(id / camera.width);
    const Eigen::Vector3d local((u + 0.5 - half_w) / camera.focal, -(v + 0.5 - half_h) / camera.focal, -1.0);
    const Eigen::Vector3d d = (r * local).normalized();
    for (Index c = 0; c < 3; ++c) {
      origins[i * 3 + c] = static_cast<T>(o[c]);
      dirs[i * 3 + c] = static_cast<T>(d[c]);
    }
  }
  RayBatch<T> batch;
  batch.origins = Tensor<T>::from(Shape{n, 3}, std::move(origins));
  batch.directions = Tensor<T>::from(Shape{n, 3}, std::move(dirs));
  batch.near = near;
  batch.far = far;
  return batch;
}

namespace detail {

template <class T>
SamplePoints<T> points_from_t(const RayBatch<T>& batch, Index samples, std::vector<T> t) {
  const Index z = batch.size();
  std::vector<T> pos(z * samples * 3);
  const T* o = batch.origins.data();
  const T* d = batch.directions.data();
  for (Index r = 0; r < z; ++r) {
    for (Index s = 0; s < samples; ++s) {
      const T tv = t[r * samples + s];
      for (Index c = 0; c < 3; ++c) pos[(r * samples + s) * 3 + c] = o[r * 3 + c] + tv * d[r * 3 + c];
    }
  }
  SamplePoints<T> out;
  out.rays = z;
  out.samples = samples;
  out.t_vals = Tensor<T>::from(Shape{z, samples}, std::move(t));
  out.positions = Tensor<T>::from(Shape{z, samples, 3}, std::move(pos));
  return out;
}

}  // namespace detail

/// One depth per equal bin of [near, far]: the bin midpoint, or a uniform
/// draw inside the bin when `rng` is given.
template <class T>
SamplePoints<T> stratified_sample(const RayBatch<T>& batch, Index n, Rng* rng) {
  if (n < 2) throw PreconditionError("stratified sampling needs at least 2 samples");
  if (!(batch.near < batch.far)) throw PreconditionError("near must be below far");
  const Index z = batch.size();
  const double width = (batch.far - batch.near) / static_cast<double>(n);
  std::vector<T> t(z * n);
  for (Index r = 0; r < z; ++r) {
    for (Index i = 0; i < n; ++i) {
      const double offset = rng ? uniform01(*rng) : 0.5;
      t[r * n + i] = static_cast<T>(batch.near + (static_cast<double>(i) + offset) * width);
    }
  }
  return detail::points_from_t(batch, n, std::move(t));
}

/// Length standing in for the open last interval of every ray.
inline constexpr double kLastInterval = 1e10;

/// Alpha compositing of raw densities and colors along each ray.
///
///   sigma_i = relu(delta_i), alpha_i = 1 - exp(-sigma_i * (t_{i+1} - t_i)),
///   T_i = prod_{j<i} (1 - alpha_j), w_i = T_i alpha_i,
///   rgb = sum_i w_i sigmoid(c_i) + (1 - sum_i w_i) background.
///
/// `delta` may be [z, N] or [z*N, 1]; `c` may be [z, N, 3] or [z*N, 3].
/// The last sample's interval is `last_interval`; a medium that ends at a
/// known `far` can pass far - t_N instead of the open-ray cap.
template <class T>
RenderOutput<T> composite(const Tensor<T>& delta, const Tensor<T>& c, const Tensor<T>& t_vals, const Rgb& background,
                          double last_interval = kLastInterval) {
  detail::require_rank2(t_vals.shape(), "composite", "t_vals");
  const Index z = t_vals.shape()[0], n = t_vals.shape()[1];
  if (delta.numel() != z * n || c.numel() != z * n * 3) {
    throw DimensionError("composite: delta " + delta.shape().str() + ", c " + c.shape().str() + " for t " +
                         t_vals.shape().str());
  }
  const T* tv = t_vals.data();
  for (Index r = 0; r < z; ++r) {
    for (Index i = 0; i + 1 < n; ++i) {
      if (!(tv[r * n + i + 1] >= tv[r * n + i])) throw PreconditionError("sample depths are not monotone");
    }
  }

  struct Saved {
    std::vector<double> trans;      // T_i
    std::vector<double> keep;       // 1 - alpha_i
    std::vector<double> interval;   // t_{i+1} - t_i
    std::vector<double> color;      // sigmoid(c_i)
    std::vector<double> weights;
    std::vector<double> depth;
    std::vector<double> acc;
  };
  auto saved = std::make_shared<Saved>();
  std::vector<double> t(tv, tv + z * n);

  auto forward = [=](detail::Node<T>& self) {
    const T* dv = self.inputs[0]->value.data();
    const T* cv = self.inputs[1]->value.data();
    Saved& s = *saved;
    s.trans.assign(z * n, 0.0);
    s.keep.assign(z * n, 0.0);
    s.interval.assign(z * n, 0.0);
    s.color.assign(z * n * 3, 0.0);
    s.weights.assign(z * n, 0.0);
    s.depth.assign(z, 0.0);
    s.acc.assign(z, 0.0);
    for (Index r = 0; r < z; ++r) {
      double transmittance = 1.0;
      double rgb[3] = {0.0, 0.0, 0.0};
      for (Index i = 0; i < n; ++i) {
        const Index k = r * n + i;
        const double dt = i + 1 < n ? t[k + 1] - t[k] : last_interval;
        const double sigma = std::max(static_cast<double>(dv[k]), 0.0);
        const double keep = std::exp(-sigma * dt);
        const double w = transmittance * (1.0 - keep);
        s.trans[k] = transmittance;
        s.keep[k] = keep;
        s.interval[k] = dt;
        s.weights[k] = w;
        for (Index ch = 0; ch < 3; ++ch) {
          const double col = 1.0 / (1.0 + std::exp(-static_cast<double>(cv[k * 3 + ch])));
          s.color[k * 3 + ch] = col;
          rgb[ch] += w * col;
        }
        s.acc[r] += w;
        s.depth[r] += w * t[k];
        transmittance *= keep;
      }
      for (Index ch = 0; ch < 3; ++ch) {
        self.value[r * 3 + ch] = static_cast<T>(rgb[ch] + (1.0 - s.acc[r]) * background[ch]);
      }
    }
  };

  auto backward = [=](detail::Node<T>& self) {
    const Saved& s = *saved;
    auto& din = *self.inputs[0];
    auto& cin = *self.inputs[1];
    const T* dv = din.value.data();
    const T* g = self.grad.data();
    T* dd = din.requires_grad ? din.grad_buffer().data() : nullptr;
    T* dc = cin.requires_grad ? cin.grad_buffer().data() : nullptr;
    for (Index r = 0; r < z; ++r) {
      // Color seen from sample i onwards, normalised by T_i.
      double behind[3] = {background[0], background[1], background[2]};
      for (Index i = n; i-- > 0;) {
        const Index k = r * n + i;
        const double w = s.weights[k];
        double d_keep = 0.0;
        for (Index ch = 0; ch < 3; ++ch) {
          const double col = s.color[k * 3 + ch];
          const double go = g[r * 3 + ch];
          if (dc) dc[k * 3 + ch] += static_cast<T>(go * w * col * (1.0 - col));
          d_keep += go * s.trans[k] * (behind[ch] - col);
          behind[ch] = (1.0 - s.keep[k]) * col + s.keep[k] * behind[ch];
        }
        if (dd && dv[k] > T(0)) dd[k] += static_cast<T>(d_keep * (-s.interval[k] * s.keep[k]));
      }
    }
  };

  RenderOutput<T> out;
  out.rgb = make_op<T>("composite", Shape{z, 3}, {delta, c}, forward, backward);
  out.weights = Tensor<T>::from(Shape{z, n}, std::vector<T>(saved->weights.begin(), saved->weights.end()));
  out.accumulated_alpha = Tensor<T>::from(Shape{z}, std::vector<T>(saved->acc.begin(), saved->acc.end()));
  out.depth = Tensor<T>::from(Shape{z}, std::vector<T>(saved->depth.begin(), saved->depth.end()));
  return out;
}

/// Importance sampling from coarse weights.
///
/// Sample i owns the bin between the midpoints to its neighbours (near and
/// far close the first and last bins); the PDF is piecewise constant with
/// mass proportional to weight + 1e-5. Draws are stratified quantiles when
/// `rng` is null. Returns the coarse and fine depths merged and sorted.
template <class T>
SamplePoints<T> hierarchical_resample(const RayBatch<T>& batch, const Tensor<T>& coarse_weights,
                                      const Tensor<T>& t_coarse, Index n_fine, Rng* rng) {
  detail::require_rank2(t_coarse.shape(), "hierarchical_resample", "t_coarse");
  const Index z = t_coarse.shape()[0], n = t_coarse.shape()[1];
  if (coarse_weights.numel() != z * n) {
    throw DimensionError("hierarchical_resample: weights " + coarse_weights.shape().str() + " vs t " +
                         t_coarse.shape().str());
  }
  constexpr double kEps = 1e-5;
  const Index total = n + n_fine;
  std::vector<T> merged(z * total);
  std::vector<double> edges(n + 1), cdf(n + 1), u(n_fine);
  std::vector<T> row(total);
  for (Index r = 0; r < z; ++r) {
    const T* t = t_coarse.data() + r * n;
    const T* w = coarse_weights.data() + r * n;
    edges[0] = batch.near;
    edges[n] = batch.far;
    for (Index i = 1; i < n; ++i) edges[i] = 0.5 * (static_cast<double>(t[i - 1]) + static_cast<double>(t[i]));
    cdf[0] = 0.0;
    for (Index i = 0; i < n; ++i) {
      const double wi = static_cast<double>(w[i]);
      if (wi < 0.0) throw PreconditionError("negative resampling weight");
      cdf[i + 1] = cdf[i] + wi + kEps;
    }
    for (Index i = 1; i <= n; ++i) cdf[i] /= cdf[n];
    for (Index j = 0; j < n_fine; ++j) {
      u[j] = rng ? uniform01(*rng) : (static_cast<double>(j) + 0.5) / static_cast<double>(n_fine);
    }
    for (Index j = 0; j < n_fine; ++j) {
      const Index bin = std::min<Index>(
          static_cast<Index>(std::upper_bound(cdf.begin(), cdf.end(), u[j]) - cdf.begin()) - 1, n - 1);
      const double mass = cdf[bin + 1] - cdf[bin];
      const double frac = mass > 0.0 ? (u[j] - cdf[bin]) / mass : 0.5;
      row[j] = static_cast<T>(edges[bin] + std::clamp(frac, 0.0, 1.0) * (edges[bin + 1] - edges[bin]));
    }
    std::copy(t, t + n, row.begin() + n_fine);
    std::sort(row.begin(), row.end());
    for (Index i = 1; i < total; ++i) {
      if (!(row[i] > row[i - 1])) row[i] = std::nextafter(row[i - 1], std::numeric_limits<T>::infinity());
    }
    std::copy(row.begin(), row.end(), merged.begin() + r * total);
  }
  return detail::points_from_t(batch, total, std::move(merged));
}

struct RenderConfig {
  Index n_coarse = 64;
  Index n_fine = 128;
  Index chunk = 1024;  // rays per field call
  double near = 2.0;
  double far = 6.0;
  Rgb background = {1.0, 1.0, 1.0};
  bool jitter = false;
  std::uint64_t seed = 0;
};

/// Rendered view: RGB in [0,1] and expected depth per pixel.
struct RenderedImage {
  Image rgb;
  std::vector<float> depth;
};

/// A radiance field as seen by the renderer: positions and unit directions
/// ([R, 3] each) to raw (delta [R, 1], color [R, 3]). `chunk` is the index of
/// the ray chunk being rendered.
template <class T>
using FieldFn = std::function<std::pair<Tensor<T>, Tensor<T>>(const Tensor<T>& positions,
                                                              const Tensor<T>& directions, Index chunk)>;

template <class T>
Tensor<T> repeat_rows(const Tensor<T>& x, Index times) {
  const Index n = x.shape()[0], k = x.cols();
  std::vector<T> out(n * times * k);
  const T* v = x.data();
  for (Index r = 0; r < n; ++r)
    for (Index s = 0; s < times; ++s) std::copy_n(v + r * k, k, out.begin() + (r * times + s) * k);
  return Tensor<T>::from(Shape{n * times, k}, std::move(out));
}

/// Coarse pass, importance resampling and fine pass for one batch of rays.
template <class T>
struct TwoPassResult {
  SamplePoints<T> coarse_points;
  SamplePoints<T> fine_points;
  RenderOutput<T> coarse;
  RenderOutput<T> fine;
};

template <class T>
TwoPassResult<T> render_rays(const FieldFn<T>& coarse_field, const FieldFn<T>& fine_field, const RayBatch<T>& batch,
                             Index n_coarse, Index n_fine, const Rgb& background, Rng* rng, Index chunk = 0) {
  TwoPassResult<T> res;
  res.coarse_points = stratified_sample(batch, n_coarse, rng);
  {
    auto dirs = repeat_rows(batch.directions, n_coarse);
    auto [delta, c] = coarse_field(res.coarse_points.flat_positions(), dirs, chunk);
    res.coarse = composite(delta, c, res.coarse_points.t_vals, background);
  }
  res.fine_points = hierarchical_resample(batch, res.coarse.weights, res.coarse_points.t_vals, n_fine, rng);
  auto dirs = repeat_rows(batch.directions, n_coarse + n_fine);
  auto [delta, c] = fine_field(res.fine_points.flat_positions(), dirs, chunk);
  res.fine = composite(delta, c, res.fine_points.t_vals, background);
  return res;
}

/// Renders a full view in chunks of `config.chunk` rays. The final chunk is
/// padded with zero-origin rays whose outputs are discarded.
template <class T>
RenderedImage render_image(const FieldFn<T>& coarse_field, const FieldFn<T>& fine_field, const CameraModel& camera,
                           const RenderConfig& config) {
  const Index pixels = camera.width * camera.height;
  const Index chunk = std::max<Index>(config.chunk, 1);
  RenderedImage out{Image(camera.width, camera.height, 3), std::vector<float>(pixels, 0.0f)};
  Rng rng = make_rng({config.seed, 0x5E4D});
  std::vector<Index> ids(chunk);
  for (Index begin = 0, index = 0; begin < pixels; begin += chunk, ++index) {
    const Index count = std::min(chunk, pixels - begin);
    for (Index i = 0; i < count; ++i) ids[i] = begin + i;
    auto batch = generate_rays<T>(camera, std::span<const Index>(ids.data(), count), config.near, config.far);
    if (count < chunk) {
      std::vector<T> o(chunk * 3, T(0)), d(chunk * 3, T(0));
      std::copy(batch.origins.values().begin(), batch.origins.values().end(), o.begin());
      std::copy(batch.directions.values().begin(), batch.directions.values().end(), d.begin());
      for (Index i = count; i < chunk; ++i) d[i * 3 + 2] = T(-1);
      batch.origins = Tensor<T>::from(Shape{chunk, 3}, std::move(o));
      batch.directions = Tensor<T>::from(Shape{chunk, 3}, std::move(d));
    }
    auto res = render_rays(coarse_field, fine_field, batch, config.n_coarse, config.n_fine, config.background,
                           config.jitter ? &rng : nullptr, index);
    for (Index i = 0; i < count; ++i) {
      for (Index ch = 0; ch < 3; ++ch) {
        out.rgb.data[(begin + i) * 3 + ch] = static_cast<float>(std::clamp<double>(res.fine.rgb(i, ch), 0.0, 1.0));
      }
      out.depth[begin + i] = static_cast<float>(res.fine.depth[i]);
    }
  }
  return out;
}

}  // namespace bionerf
