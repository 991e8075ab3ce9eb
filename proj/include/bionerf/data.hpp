// Copyright 2026 The bionerf-cpp Authors
// SPDX-License-Identifier: Apache-2.0

// Posed-image scenes: Blender "transforms_<split>.json" layout and a
// procedural sphere scene rendered in closed form.

#pragma once

#include <nlohmann/json.hpp>

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include "bionerf/image.hpp"
#include "bionerf/random.hpp"
#include "bionerf/rendering.hpp"

namespace bionerf {

struct View {
  CameraModel camera;
  Image image;  // RGBA or RGB in [0,1]
  std::string file_path;
};

struct SceneDataset {
  std::vector<View> train;
  std::vector<View> val;
  std::vector<View> test;
  double near = 2.0;
  double far = 6.0;
  Rgb background = {1.0, 1.0, 1.0};
  double camera_angle_x = 0.0;
  std::vector<std::string> warnings;

  static constexpr std::array<const char*, 3> kSplits = {"train", "val", "test"};

  const std::vector<View>& split(const std::string& name) const {
    if (name == "train") return train;
    if (name == "val") return val;
    if (name == "test") return test;
    throw ConfigError("unknown split '" + name + "'");
  }
  std::vector<View>& split(const std::string& name) {
    return const_cast<std::vector<View>&>(std::as_const(*this).split(name));
  }

  /// Ground-truth RGB of a view composited onto the scene background.
  Image target(const View& view) const { return composite_onto(view.image, background); }
};

inline double focal_from_fov(double camera_angle_x, Index width) {
  return 0.5 * static_cast<double>(width) / std::tan(0.5 * camera_angle_x);
}

namespace detail {

inline Eigen::Matrix4d parse_matrix(const nlohmann::json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 4) throw FormatError(where + ": transform_matrix must be 4x4");
  Eigen::Matrix4d m;
  for (int r = 0; r < 4; ++r) {
    if (!j[r].is_array() || j[r].size() != 4) throw FormatError(where + ": transform_matrix must be 4x4");
    for (int c = 0; c < 4; ++c) m(r, c) = j[r][c].get<double>();
  }
  return m;
}

inline std::filesystem::path resolve_image(const std::filesystem::path& dir, const std::string& file_path) {
  std::filesystem::path p = dir / file_path;
  if (p.extension() != ".png") p += ".png";
  return p;
}

}  // namespace detail

/// Loads a Blender-layout scene. A missing val/test file produces an empty
/// split and a warning; a missing train file is an error. Optional keys
/// "near", "far" and "background" override the defaults (2, 6, white).
inline SceneDataset load_blender_scene(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw IoError("scene directory not found: " + dir.string());
  SceneDataset ds;
  for (const char* split : SceneDataset::kSplits) {
    const fs::path json_path = dir / ("transforms_" + std::string(split) + ".json");
    if (!fs::exists(json_path)) {
      if (std::string(split) == "train") throw IoError("missing " + json_path.string());
      ds.warnings.push_back("missing " + json_path.string() + "; " + split + " split is empty");
      continue;
    }
    std::ifstream f(json_path);
    nlohmann::json j;
    try {
      f >> j;
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(json_path.string() + ": " + e.what());
    }
    if (!j.contains("camera_angle_x")) throw FormatError(json_path.string() + ": missing camera_angle_x");
    const double angle = j["camera_angle_x"].get<double>();
    ds.camera_angle_x = angle;
    if (j.contains("near")) ds.near = j["near"].get<double>();
    if (j.contains("far")) ds.far = j["far"].get<double>();
    if (j.contains("background")) {
      for (int c = 0; c < 3; ++c) ds.background[c] = j["background"][c].get<double>();
    }
    auto& views = ds.split(split);
    for (const auto& frame : j.at("frames")) {
      View v;
      v.file_path = frame.at("file_path").get<std::string>();
      const std::string where = json_path.string() + " frame " + v.file_path;
      v.camera.camera_to_world = detail::parse_matrix(frame.at("transform_matrix"), where);
      const fs::path image_path = detail::resolve_image(dir, v.file_path);
      if (!fs::exists(image_path)) throw IoError("missing image " + image_path.string());
      v.image = read_png(image_path);
      v.camera.width = v.image.width;
      v.camera.height = v.image.height;
      v.camera.focal = focal_from_fov(angle, v.image.width);
      if (!(v.camera.orthonormality_error() <= 1e-3)) {
        throw ValidationError(where + ": rotation is not orthonormal");
      }
      if (!views.empty() && !views.front().image.same_shape(v.image)) {
        throw ValidationError(where + ": image size differs from the rest of the split");
      }
      views.push_back(std::move(v));
    }
  }
  if (!(ds.near < ds.far)) throw ValidationError("scene near must be below far");
  return ds;
}

/// Writes a scene in Blender layout: transforms_<split>.json plus one RGBA
/// PNG per frame under <split>/.
inline void write_blender_scene(const SceneDataset& ds, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  for (const char* split : SceneDataset::kSplits) {
    nlohmann::json j;
    j["camera_angle_x"] = ds.camera_angle_x;
    j["near"] = ds.near;
    j["far"] = ds.far;
    j["background"] = {ds.background[0], ds.background[1], ds.background[2]};
    j["frames"] = nlohmann::json::array();
    const auto& views = ds.split(split);
    if (!views.empty()) fs::create_directories(dir / split);
    for (Index i = 0; i < views.size(); ++i) {
      const auto& v = views[i];
      const std::string rel = v.file_path.empty() ? std::string("./") + split + "/r_" + std::to_string(i) : v.file_path;
      nlohmann::json m = nlohmann::json::array();
      for (int r = 0; r < 4; ++r) {
        nlohmann::json row = nlohmann::json::array();
        for (int c = 0; c < 4; ++c) row.push_back(v.camera.camera_to_world(r, c));
        m.push_back(row);
      }
      j["frames"].push_back({{"file_path", rel}, {"transform_matrix", m}});
      write_png(detail::resolve_image(dir, rel), v.image);
    }
    std::ofstream f(dir / ("transforms_" + std::string(split) + ".json"));
    if (!f) throw IoError("cannot write transforms for " + std::string(split));
    f << j.dump(2) << "\n";
  }
}

struct ToySceneSpec {
  std::array<double, 3> center = {0.0, 0.0, 0.0};
  double radius = 0.6;
  Rgb albedo = {0.9, 0.4, 0.2};
  Rgb background = {0.0, 0.0, 0.0};
  double sigma0 = 8.0;
  Index width = 64;
  Index height = 64;
  Index train_views = 20;
  Index val_views = 4;
  Index test_views = 8;
  double ring_radius = 2.2;
  double elevation_deg = 25.0;
  double camera_angle_x = 0.8;
  double near = 0.5;
  double far = 4.0;

  void validate() const {
    if (!(radius > 0.0)) throw SpecError("sphere radius must be positive");
    if (!(sigma0 > 0.0)) throw SpecError("density scale must be positive");
    if (!(ring_radius > radius)) throw SpecError("cameras must lie outside the sphere");
    if (width == 0 || height == 0) throw SpecError("image size must be positive");
    if (train_views == 0) throw SpecError("need at least one training view");
    if (!(std::abs(elevation_deg) < 89.0)) throw SpecError("elevation must be within (-89, 89) degrees");
    if (!(near < ring_radius - radius && far > ring_radius + radius)) {
      throw SpecError("near/far do not enclose the sphere");
    }
  }
};

/// Camera on the ring at `azimuth_deg`, looking at the sphere centre, world +z up.
inline CameraModel toy_camera(const ToySceneSpec& spec, double azimuth_deg) {
  const double az = azimuth_deg * std::numbers::pi / 180.0;
  const double el = spec.elevation_deg * std::numbers::pi / 180.0;
  const Eigen::Vector3d center(spec.center[0], spec.center[1], spec.center[2]);
  const Eigen::Vector3d eye =
      center + spec.ring_radius * Eigen::Vector3d(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
  const Eigen::Vector3d back = (eye - center).normalized();  // camera +z
  const Eigen::Vector3d right = Eigen::Vector3d::UnitZ().cross(back).normalized();
  const Eigen::Vector3d up = back.cross(right);
  CameraModel cam;
  cam.camera_to_world.setIdentity();
  cam.camera_to_world.block<3, 1>(0, 0) = right;
  cam.camera_to_world.block<3, 1>(0, 1) = up;
  cam.camera_to_world.block<3, 1>(0, 2) = back;
  cam.camera_to_world.block<3, 1>(0, 3) = eye;
  cam.width = spec.width;
  cam.height = spec.height;
  cam.focal = focal_from_fov(spec.camera_angle_x, spec.width);
  return cam;
}

/// Length of the ray segment inside the sphere (0 on a miss).
inline double sphere_chord(const ToySceneSpec& spec, const Eigen::Vector3d& origin, const Eigen::Vector3d& dir) {
  const Eigen::Vector3d oc = origin - Eigen::Vector3d(spec.center[0], spec.center[1], spec.center[2]);
  const double b = dir.dot(oc);
  const double disc = b * b - (oc.squaredNorm() - spec.radius * spec.radius);
  if (disc <= 0.0) return 0.0;
  const double root = std::sqrt(disc);
  const double t1 = -b + root;
  if (t1 <= 0.0) return 0.0;
  return t1 - std::max(-b - root, 0.0);
}

/// Opacity 1 - exp(-sigma0 * chord) of every pixel's ray.
inline std::vector<double> toy_opacity(const ToySceneSpec& spec, const CameraModel& camera) {
  std::vector<double> alpha(camera.width * camera.height);
  const Eigen::Matrix3d r = camera.rotation();
  for (Index v = 0; v < camera.height; ++v) {
    for (Index u = 0; u < camera.width; ++u) {
      const Eigen::Vector3d local((u + 0.5 - 0.5 * camera.width) / camera.focal,
                                  -(v + 0.5 - 0.5 * camera.height) / camera.focal, -1.0);
      const double chord = sphere_chord(spec, camera.origin(), (r * local).normalized());
      alpha[v * camera.width + u] = -std::expm1(-spec.sigma0 * chord);
    }
  }
  return alpha;
}

/// Exact render of the homogeneous sphere: opacity * albedo + (1 - opacity) * background.
inline Image analytic_render(const ToySceneSpec& spec, const CameraModel& camera) {
  const auto alpha = toy_opacity(spec, camera);
  Image img(camera.width, camera.height, 3);
  for (Index p = 0; p < alpha.size(); ++p) {
    for (Index c = 0; c < 3; ++c) {
      img.data[p * 3 + c] = static_cast<float>(alpha[p] * spec.albedo[c] + (1.0 - alpha[p]) * spec.background[c]);
    }
  }
  return img;
}

/// Straight-alpha RGBA form of the same render (color = albedo).
inline Image analytic_render_rgba(const ToySceneSpec& spec, const CameraModel& camera) {
  const auto alpha = toy_opacity(spec, camera);
  Image img(camera.width, camera.height, 4);
  for (Index p = 0; p < alpha.size(); ++p) {
    for (Index c = 0; c < 3; ++c) img.data[p * 4 + c] = static_cast<float>(spec.albedo[c]);
    img.data[p * 4 + 3] = static_cast<float>(alpha[p]);
  }
  return img;
}

/// Azimuths (degrees) of each split. Held-out views sit between training
/// azimuths, a third (val) or two thirds (test) of a training step along.
inline std::vector<double> toy_azimuths(const ToySceneSpec& spec, const std::string& split) {
  const double step = 360.0 / static_cast<double>(spec.train_views);
  std::vector<double> out;
  if (split == "train") {
    for (Index i = 0; i < spec.train_views; ++i) out.push_back(step * static_cast<double>(i));
    return out;
  }
  const Index n = split == "val" ? spec.val_views : spec.test_views;
  const double offset = split == "val" ? step / 3.0 : 2.0 * step / 3.0;
  for (Index k = 0; k < n; ++k) {
    const Index base = k * spec.train_views / std::max<Index>(n, 1);
    out.push_back(step * static_cast<double>(base) + offset);
  }
  return out;
}

/// Sphere scene with cameras on a ring. With `rng` the whole ring is
/// rotated by a random phase below one training step; otherwise the first
/// training camera sits at azimuth 0.
inline SceneDataset generate_toy_scene(const ToySceneSpec& spec, Rng* rng = nullptr) {
  spec.validate();
  const ToySceneSpec& s = spec;
  const double phase = rng ? uniform(*rng, 0.0, 360.0 / static_cast<double>(s.train_views)) : 0.0;
  SceneDataset ds;
  ds.near = s.near;
  ds.far = s.far;
  ds.background = s.background;
  ds.camera_angle_x = s.camera_angle_x;
  for (const char* split : SceneDataset::kSplits) {
    const auto az = toy_azimuths(s, split);
    for (Index i = 0; i < az.size(); ++i) {
      View v;
      v.camera = toy_camera(s, az[i] + phase);
      v.image = analytic_render_rgba(s, v.camera);
      v.file_path = std::string("./") + split + "/r_" + std::to_string(i);
      ds.split(split).push_back(std::move(v));
    }
  }
  return ds;
}

/// Seeded form used by the command-line tool: the ring phase is drawn from
/// `seed`, so equal seeds give identical scenes.
inline SceneDataset seeded_toy_scene(const ToySceneSpec& spec, std::uint64_t seed) {
  Rng rng = make_rng({seed, 0x70E});
  return generate_toy_scene(spec, &rng);
}

}  // namespace bionerf
