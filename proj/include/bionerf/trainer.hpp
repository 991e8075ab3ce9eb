// Copyright 2026 The bionerf-cpp Authors
// SPDX-License-Identifier: Apache-2.0

// Training loop, checkpoints and model loading.

#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "bionerf/checkpoint.hpp"
#include "bionerf/config.hpp"
#include "bionerf/metrics.hpp"
#include "bionerf/model.hpp"
#include "bionerf/training.hpp"

namespace bionerf {

struct TrainRecord {
  std::uint64_t iteration = 0;  // 1-based count of completed updates
  double loss = 0.0;
  double lr = 0.0;
  double wall_ms = 0.0;
  std::optional<double> val_psnr;
};

struct TrainHooks {
  /// Called with the memory handed to every BioNeRF forward pass
  /// ("coarse" or "fine", previous memory rows).
  std::function<void(const std::string& field, const Tensor<float>& psi_prev)> on_memory_read;
  std::function<void(const TrainRecord&)> on_record;
  /// Stop once this many updates are complete (0 runs to the end).
  std::uint64_t stop_after = 0;
};

inline std::string format_record(const TrainRecord& r) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%llu,%.9g,%.9g,%.3f", static_cast<unsigned long long>(r.iteration), r.loss, r.lr,
                r.wall_ms);
  std::string line = buf;
  if (r.val_psnr) {
    std::snprintf(buf, sizeof(buf), ",%.6f", *r.val_psnr);
    line += buf;
  }
  return line;
}

class Trainer {
 public:
  /// Resolves scene bounds and background from `dataset` into the config.
  Trainer(RunConfig config, const SceneDataset& dataset)
      : config_(resolve(std::move(config), dataset)),
        dataset_(&dataset),
        images_(TrainingImages::from(dataset)),
        model_(config_.model, config_.train.seed) {
    config_.validate();
    const Index z = config_.train.batch_rays;
    const Index nc = config_.render.n_coarse, nf = config_.render.n_fine;
    coarse_mem_ = MemoryState<float>(config_.model.memory, z * nc, config_.model.hidden);
    fine_mem_ = MemoryState<float>(config_.model.memory, z * (nc + nf), config_.model.hidden);
    if (!dataset.train.empty()) camera_ = dataset.train.front().camera;
  }

  const RunConfig& config() const noexcept { return config_; }
  Model<float>& model() noexcept { return model_; }
  const Model<float>& model() const noexcept { return model_; }
  AdamState& adam() noexcept { return adam_; }
  MemoryState<float>& coarse_memory() noexcept { return coarse_mem_; }
  MemoryState<float>& fine_memory() noexcept { return fine_mem_; }
  std::uint64_t step() const noexcept { return step_; }
  TrainHooks& hooks() noexcept { return hooks_; }

  /// One optimizer update over a fresh batch. Throws NumericFailure on a
  /// non-finite loss.
  TrainRecord step_once() {
    const auto start = std::chrono::steady_clock::now();
    const auto& tc = config_.train;
    const auto& rc = config_.render;
    Rng rng = make_rng({tc.seed, 0x7A11, step_});
    auto batch = sample_ray_batch<float>(images_, tc.batch_rays, rc.near, rc.far, rng);
    model_.visit([](const std::string&, Tensor<float>& p) { p.zero_grad(); });

    const Index z = tc.batch_rays;
    const Index nc = rc.n_coarse, nf = rc.n_fine;
    double loss_total = 0.0;
    for (Index a = 0; a < z; a += tc.chunk_rays) {
      const Index count = std::min(tc.chunk_rays, z - a);
      auto sub = slice_rays(batch, a, count);
      FieldFn<float> coarse = [&](const Tensor<float>& p, const Tensor<float>& d, Index) {
        return query(model_.coarse, "coarse", p, d, coarse_mem_, a * nc);
      };
      FieldFn<float> fine = [&](const Tensor<float>& p, const Tensor<float>& d, Index) {
        return query(model_.fine, "fine", p, d, fine_mem_, a * (nc + nf));
      };
      auto res = render_rays(coarse, fine, sub, nc, nf, rc.background, tc.jitter ? &rng : nullptr);
      auto loss = add(mse_loss(res.coarse.rgb, sub.target_rgb), mse_loss(res.fine.rgb, sub.target_rgb));
      const double weight = static_cast<double>(count) / static_cast<double>(z);
      const double value = static_cast<double>(loss.item());
      if (!std::isfinite(value)) {
        char buf[200];
        std::snprintf(buf, sizeof(buf), "non-finite loss %g at iteration %llu (lr %.6g)", value,
                      static_cast<unsigned long long>(step_ + 1), learning_rate_at(tc, step_));
        throw NumericFailure(buf);
      }
      loss_total += weight * value;
      backward(scale(loss, static_cast<float>(weight)));
    }

    const double lr = learning_rate_at(tc, step_);
    adam_step([this](auto&& f) { model_.visit(f); }, adam_, lr, AdamOptions{tc.beta1, tc.beta2, tc.epsilon});
    ++step_;
    coarse_mem_.iteration = step_;
    fine_mem_.iteration = step_;

    TrainRecord rec;
    rec.iteration = step_;
    rec.loss = loss_total;
    rec.lr = lr;
    rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    return rec;
  }

  /// Mean PSNR over the validation split rendered with fresh memory.
  double validation_psnr() const {
    const auto rc = config_.render;
    auto report = evaluate_scene([&](const CameraModel& cam) { return render_view(model_, cam, rc).rgb; },
                                 *dataset_, "val", "BioNeRF", config_.ssim);
    return report.mean_psnr();
  }

  /// Runs until `config.train.iterations` updates are complete (or the
  /// stop_after hook fires). With a run directory, appends the log to
  /// logs/train.csv and writes checkpoints/step_<k>.bnrf plus
  /// checkpoints/last.bnrf.
  std::vector<TrainRecord> run(const std::filesystem::path& run_dir = {}) {
    std::vector<TrainRecord> records;
    std::ofstream log;
    if (!run_dir.empty()) {
      std::filesystem::create_directories(run_dir / "logs");
      std::filesystem::create_directories(run_dir / "checkpoints");
      const auto path = run_dir / "logs" / "train.csv";
      const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
      log.open(path, std::ios::app);
      if (!log) throw IoError("cannot write " + path.string());
      if (fresh) log << "iteration,loss,lr,wall_ms,val_psnr\n";
    }
    const auto& tc = config_.train;
    while (step_ < tc.iterations) {
      if (hooks_.stop_after && step_ >= hooks_.stop_after) break;
      TrainRecord rec = step_once();
      if (tc.val_every && step_ % tc.val_every == 0 && !dataset_->val.empty()) rec.val_psnr = validation_psnr();
      if (hooks_.on_record) hooks_.on_record(rec);
      if (log.is_open()) log << format_record(rec) << "\n" << std::flush;
      if (!run_dir.empty() && tc.checkpoint_every && step_ % tc.checkpoint_every == 0) {
        char name[48];
        std::snprintf(name, sizeof(name), "step_%08llu.bnrf", static_cast<unsigned long long>(step_));
        write_checkpoint(run_dir / "checkpoints" / name, checkpoint());
      }
      records.push_back(rec);
    }
    if (!run_dir.empty()) write_checkpoint(run_dir / "checkpoints" / "last.bnrf", checkpoint());
    return records;
  }

  /// Every tensor needed to continue training bit-identically.
  std::vector<NamedTensor> checkpoint() const {
    std::vector<NamedTensor> out;
    auto& model = const_cast<Model<float>&>(model_);
    model.visit([&](const std::string& name, Tensor<float>& t) { out.push_back(to_named(name, t)); });
    for (Index i = 0; i < adam_.names.size(); ++i) {
      out.push_back(named_like("adam.m." + adam_.names[i], out[i].extents, adam_.m[i]));
      out.push_back(named_like("adam.v." + adam_.names[i], out[i].extents, adam_.v[i]));
    }
    out.push_back({"adam.t", {1}, {static_cast<float>(adam_.t)}});
    if (config_.model.memory == MemoryMode::carried && config_.model.kind == FieldKind::bionerf) {
      out.push_back(memory_tensor("memory.coarse", coarse_mem_));
      out.push_back(memory_tensor("memory.fine", fine_mem_));
    }
    out.push_back({"meta.step", {1}, {static_cast<float>(step_)}});
    const std::uint64_t h = config_.trajectory_hash();
    out.push_back({"meta.config_hash", {4}, {}});
    for (int i = 0; i < 4; ++i) out.back().values.push_back(static_cast<float>((h >> (16 * i)) & 0xFFFF));
    const std::string text = config_.to_string();
    out.push_back({"meta.config", {static_cast<std::uint32_t>(text.size())}, {}});
    for (unsigned char ch : text) out.back().values.push_back(static_cast<float>(ch));
    const auto focal_hi = static_cast<float>(camera_.focal);
    out.push_back({"meta.camera",
                   {4},
                   {static_cast<float>(camera_.width), static_cast<float>(camera_.height), focal_hi,
                    static_cast<float>(camera_.focal - static_cast<double>(focal_hi))}});
    return out;
  }

  /// Restores a checkpoint written by a run with the same trajectory
  /// settings.
  void restore(const std::vector<NamedTensor>& tensors) {
    const auto& stored = find_tensor(tensors, "meta.config_hash");
    if (config_hash_from(stored) != config_.trajectory_hash()) {
      throw ConfigError("checkpoint was written with a different configuration (trajectory hash mismatch)");
    }
    model_.visit([&](const std::string& name, Tensor<float>& t) {
      load_into(find_tensor(tensors, name), t.mutable_values(), t.shape());
    });
    adam_ = AdamState{};
    adam_.t = static_cast<std::uint64_t>(find_tensor(tensors, "adam.t").values.at(0));
    if (adam_.t > 0) {
      model_.visit([&](const std::string& name, Tensor<float>& t) {
        adam_.names.push_back(name);
        adam_.m.emplace_back(t.numel());
        adam_.v.emplace_back(t.numel());
        load_into(find_tensor(tensors, "adam.m." + name), adam_.m.back(), t.shape());
        load_into(find_tensor(tensors, "adam.v." + name), adam_.v.back(), t.shape());
      });
    }
    if (config_.model.memory == MemoryMode::carried && config_.model.kind == FieldKind::bionerf) {
      load_into(find_tensor(tensors, "memory.coarse"), coarse_mem_.mutable_psi(),
                Shape{coarse_mem_.rows(), coarse_mem_.width()});
      load_into(find_tensor(tensors, "memory.fine"), fine_mem_.mutable_psi(),
                Shape{fine_mem_.rows(), fine_mem_.width()});
    }
    step_ = static_cast<std::uint64_t>(find_tensor(tensors, "meta.step").values.at(0));
    coarse_mem_.iteration = step_;
    fine_mem_.iteration = step_;
  }

  static std::uint64_t config_hash_from(const NamedTensor& t) {
    if (t.values.size() != 4) throw FormatError("meta.config_hash must hold 4 values");
    std::uint64_t h = 0;
    for (int i = 0; i < 4; ++i) h |= static_cast<std::uint64_t>(t.values[i]) << (16 * i);
    return h;
  }

 private:
  static RunConfig resolve(RunConfig c, const SceneDataset& ds) {
    if (ds.train.empty()) throw ValidationError("dataset has no training images");
    c.render = c.render_for(ds);
    c.data.near = c.render.near;
    c.data.far = c.render.far;
    c.data.background = c.render.background;
    return c;
  }

  std::pair<Tensor<float>, Tensor<float>> query(const RadianceField<float>& field, const char* name,
                                                const Tensor<float>& p, const Tensor<float>& d,
                                                MemoryState<float>& mem, Index row_begin) {
    if (field.kind() == FieldKind::nerf) return field.query(p, d, nullptr, 0);
    FieldOutput<float> details;
    auto out = field.query(p, d, &mem, row_begin, &details);
    if (hooks_.on_memory_read) hooks_.on_memory_read(name, details.psi_prev);
    return out;
  }

  static NamedTensor named_like(std::string name, const std::vector<std::uint32_t>& extents,
                                const std::vector<float>& values) {
    return {std::move(name), extents, values};
  }

  static NamedTensor memory_tensor(std::string name, const MemoryState<float>& m) {
    return {std::move(name),
            {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.width())},
            std::vector<float>(m.psi().begin(), m.psi().end())};
  }

  RunConfig config_;
  const SceneDataset* dataset_;
  TrainingImages images_;
  Model<float> model_;
  AdamState adam_;
  MemoryState<float> coarse_mem_;
  MemoryState<float> fine_mem_;
  CameraModel camera_;
  std::uint64_t step_ = 0;
  TrainHooks hooks_;
};

/// Trains `config` on `dataset` from scratch and returns the final model.
inline Model<float> train(const RunConfig& config, const SceneDataset& dataset,
                          std::vector<TrainRecord>* log = nullptr) {
  Trainer trainer(config, dataset);
  auto records = trainer.run();
  if (log) *log = std::move(records);
  return trainer.model();
}

/// A trained model and the resolved configuration it was trained with.
struct LoadedModel {
  RunConfig config;
  Model<float> model;
  CameraModel camera;  // intrinsics of the training views; identity pose
};

inline LoadedModel load_model(const std::vector<NamedTensor>& tensors) {
  const auto& text_tensor = find_tensor(tensors, "meta.config");
  std::string text;
  for (float f : text_tensor.values) text.push_back(static_cast<char>(static_cast<unsigned char>(f)));
  LoadedModel out;
  out.config = RunConfig::parse(text);
  out.config.validate();
  // Training stores the resolved scene bounds and background under [data].
  auto& rc = out.config.render;
  rc.near = out.config.data.near.value_or(rc.near);
  rc.far = out.config.data.far.value_or(rc.far);
  rc.background = out.config.data.background.value_or(rc.background);
  out.model = Model<float>(out.config.model, out.config.train.seed);
  out.model.visit([&](const std::string& name, Tensor<float>& t) {
    load_into(find_tensor(tensors, name), t.mutable_values(), t.shape());
  });
  const auto& cam = find_tensor(tensors, "meta.camera");
  if (cam.values.size() != 4) throw FormatError("meta.camera must hold 4 values");
  out.camera.width = static_cast<Index>(cam.values[0]);
  out.camera.height = static_cast<Index>(cam.values[1]);
  out.camera.focal = static_cast<double>(cam.values[2]) + static_cast<double>(cam.values[3]);
  return out;
}

inline LoadedModel load_model(const std::filesystem::path& path) { return load_model(read_checkpoint(path)); }

}  // namespace bionerf
