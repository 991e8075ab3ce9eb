// Copyright 2026 The bionerf-cpp Authors
// SPDX-License-Identifier: Apache-2.0

// Run configuration as sectioned "key = value" text:
//
//   [field]   kind, memory, hidden, color_hidden, l_pos, l_dir, include_input, ...
//   [train]   learning_rate, iterations, batch_rays, seed, ...
//   [render]  n_coarse, n_fine, chunk, seed
//   [data]    near, far, background   ("auto" takes the scene's value)
//   [metrics] ssim_window, ssim_sigma
//
// Unknown sections or keys are rejected.

#pragma once

#include <charconv>
#include <cmath>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "bionerf/metrics.hpp"
#include "bionerf/model.hpp"
#include "bionerf/training.hpp"

namespace bionerf {

struct DataConfig {
  std::optional<double> near;
  std::optional<double> far;
  std::optional<Rgb> background;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  RenderConfig render;
  DataConfig data;
  SsimOptions ssim;

  RunConfig() {
    render.chunk = 1024;
  }

  static RunConfig parse(const std::string& text) {
    RunConfig c;
    c.merge(text);
    return c;
  }

  /// Applies every assignment in `text` on top of the current values.
  void merge(const std::string& text) {
    std::istringstream in(text);
    std::string line, section;
    int number = 0;
    while (std::getline(in, line)) {
      ++number;
      const auto hash = line.find_first_of("#;");
      if (hash != std::string::npos) line.erase(hash);
      line = trim(line);
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']') throw ConfigError("line " + std::to_string(number) + ": malformed section header");
        section = trim(line.substr(1, line.size() - 2));
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ConfigError("line " + std::to_string(number) + ": expected key = value");
      if (section.empty()) throw ConfigError("line " + std::to_string(number) + ": key outside a section");
      set(section + "." + trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
  }

  /// Sets one value by its dotted path, e.g. "train.iterations".
  void set(const std::string& path, const std::string& value) {
    for (auto& e : entries()) {
      if (e.path == path) {
        e.set(value);
        return;
      }
    }
    throw ConfigError("unknown key '" + path + "'");
  }

  std::string get(const std::string& path) const {
    for (auto& e : const_cast<RunConfig*>(this)->entries()) {
      if (e.path == path) return e.get();
    }
    throw ConfigError("unknown key '" + path + "'");
  }

  /// Fully resolved configuration in the same text format.
  std::string to_string() const {
    std::string out, section;
    for (auto& e : const_cast<RunConfig*>(this)->entries()) {
      const std::string s = e.path.substr(0, e.path.find('.'));
      if (s != section) {
        out += (section.empty() ? "" : "\n") + std::string("[") + s + "]\n";
        section = s;
      }
      out += e.path.substr(e.path.find('.') + 1) + " = " + e.get() + "\n";
    }
    return out;
  }

  /// FNV-1a over every entry that influences the training trajectory.
  std::uint64_t trajectory_hash() const {
    std::uint64_t h = 1469598103934665603ull;
    for (auto& e : const_cast<RunConfig*>(this)->entries()) {
      if (!e.trajectory) continue;
      for (char ch : e.path + "=" + e.get() + "\n") {
        h ^= static_cast<std::uint8_t>(ch);
        h *= 1099511628211ull;
      }
    }
    return h;
  }

  void validate() const {
    model.encoding.validate();
    train.validate();
    if (model.hidden == 0 || model.color_hidden == 0) throw ConfigError("field.hidden/color_hidden must be positive");
    if (model.nerf_depth < 2 || model.nerf_skip >= model.nerf_depth) {
      throw ConfigError("field.nerf_skip must be below field.nerf_depth");
    }
    if (render.n_coarse < 2) throw ConfigError("render.n_coarse must be at least 2");
    if (render.chunk == 0) throw ConfigError("render.chunk must be positive");
    if (data.near && data.far && !(*data.near < *data.far)) throw ConfigError("data.near must be below data.far");
    if (ssim.window < 1 || !(ssim.sigma > 0.0)) throw ConfigError("metrics.ssim_window/ssim_sigma invalid");
  }

  /// Render settings for a scene, filling bounds and background from the
  /// dataset unless configured.
  RenderConfig render_for(const SceneDataset& ds) const {
    RenderConfig r = render;
    r.near = data.near.value_or(ds.near);
    r.far = data.far.value_or(ds.far);
    r.background = data.background.value_or(ds.background);
    return r;
  }

 private:
  struct Entry {
    std::string path;
    std::function<std::string()> get;
    std::function<void(const std::string&)> set;
    bool trajectory = true;
  };

  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
  }

  static std::string fmt(double v) {
    char buf[40];
    // Shortest round-trip digits, plain notation for everyday magnitudes.
    const double a = std::abs(v);
    const auto style = a == 0.0 || (a >= 1e-5 && a < 1e15) ? std::chars_format::fixed : std::chars_format::scientific;
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v, style);
    return std::string(buf, end);
  }

  template <class U>
  static Entry integer(std::string path, U& ref, bool trajectory = true) {
    return {path, [&ref] { return std::to_string(ref); },
            [&ref, path](const std::string& v) {
              U parsed{};
              auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), parsed);
              if (ec != std::errc() || p != v.data() + v.size()) {
                throw ConfigError(path + ": expected a non-negative integer, got '" + v + "'");
              }
              ref = parsed;
            },
            trajectory};
  }

  static double parse_double(const std::string& path, const std::string& v) {
    try {
      std::size_t used = 0;
      const double d = std::stod(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      return d;
    } catch (const std::exception&) {
      throw ConfigError(path + ": expected a number, got '" + v + "'");
    }
  }

  static Entry real(std::string path, double& ref, bool trajectory = true) {
    return {path, [&ref] { return fmt(ref); },
            [&ref, path](const std::string& v) { ref = parse_double(path, v); }, trajectory};
  }

  static Entry boolean(std::string path, bool& ref, bool trajectory = true) {
    return {path, [&ref] { return std::string(ref ? "true" : "false"); },
            [&ref, path](const std::string& v) {
              if (v == "true" || v == "1") {
                ref = true;
              } else if (v == "false" || v == "0") {
                ref = false;
              } else {
                throw ConfigError(path + ": expected true or false, got '" + v + "'");
              }
            },
            trajectory};
  }

  static Entry optional_real(std::string path, std::optional<double>& ref) {
    return {path, [&ref] { return ref ? fmt(*ref) : std::string("auto"); },
            [&ref, path](const std::string& v) {
              if (v == "auto") {
                ref.reset();
              } else {
                ref = parse_double(path, v);
              }
            }};
  }

  std::vector<Entry> entries() {
    std::vector<Entry> e;
    e.push_back({"field.kind", [this] { return std::string(bionerf::to_string(model.kind)); },
                 [this](const std::string& v) {
                   if (v == "bionerf") {
                     model.kind = FieldKind::bionerf;
                   } else if (v == "nerf") {
                     model.kind = FieldKind::nerf;
                   } else {
                     throw ConfigError("field.kind: expected bionerf or nerf, got '" + v + "'");
                   }
                 }});
    e.push_back({"field.memory", [this] { return std::string(bionerf::to_string(model.memory)); },
                 [this](const std::string& v) {
                   if (v == "carried") {
                     model.memory = MemoryMode::carried;
                   } else if (v == "stateless") {
                     model.memory = MemoryMode::stateless;
                   } else {
                     throw ConfigError("field.memory: expected carried or stateless, got '" + v + "'");
                   }
                 }});
    e.push_back(integer("field.hidden", model.hidden));
    e.push_back(integer("field.color_hidden", model.color_hidden));
    e.push_back(integer("field.l_pos", model.encoding.l_pos));
    e.push_back(integer("field.l_dir", model.encoding.l_dir));
    e.push_back(boolean("field.include_input", model.encoding.include_input));
    e.push_back(integer("field.nerf_depth", model.nerf_depth));
    e.push_back(integer("field.nerf_skip", model.nerf_skip));

    e.push_back(real("train.learning_rate", train.learning_rate));
    e.push_back(real("train.lr_final", train.lr_final));
    e.push_back(integer("train.iterations", train.iterations));
    e.push_back(integer("train.batch_rays", train.batch_rays));
    e.push_back(integer("train.chunk_rays", train.chunk_rays));
    e.push_back(real("train.beta1", train.beta1));
    e.push_back(real("train.beta2", train.beta2));
    e.push_back(real("train.epsilon", train.epsilon));
    e.push_back(integer("train.seed", train.seed));
    e.push_back(boolean("train.jitter", train.jitter));
    e.push_back(integer("train.checkpoint_every", train.checkpoint_every, false));
    e.push_back(integer("train.val_every", train.val_every, false));

    e.push_back(integer("render.n_coarse", render.n_coarse));
    e.push_back(integer("render.n_fine", render.n_fine));
    e.push_back(integer("render.chunk", render.chunk, false));
    e.push_back(integer("render.seed", render.seed, false));

    e.push_back(optional_real("data.near", data.near));
    e.push_back(optional_real("data.far", data.far));
    e.push_back({"data.background",
                 [this] {
                   if (!data.background) return std::string("auto");
                   const auto& b = *data.background;
                   return fmt(b[0]) + "," + fmt(b[1]) + "," + fmt(b[2]);
                 },
                 [this](const std::string& v) {
                   if (v == "auto") {
                     data.background.reset();
                     return;
                   }
                   Rgb b{};
                   std::stringstream ss(v);
                   std::string part;
                   int i = 0;
                   while (std::getline(ss, part, ',')) {
                     if (i == 3) throw ConfigError("data.background: expected r,g,b");
                     b[i++] = parse_double("data.background", trim(part));
                   }
                   if (i != 3) throw ConfigError("data.background: expected r,g,b");
                   data.background = b;
                 }});

    e.push_back(integer("metrics.ssim_window", ssim.window, false));
    e.push_back(real("metrics.ssim_sigma", ssim.sigma, false));
    return e;
  }
};

}  // namespace bionerf
