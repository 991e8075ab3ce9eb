// Copyright 2026 The bionerf-cpp Authors
// SPDX-License-Identifier: Apache-2.0

// Command-line front end: make-toy, train, render and eval.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "bionerf/bionerf.hpp"

namespace fs = std::filesystem;
using namespace bionerf;

namespace {

std::string read_text(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
}

void print_warnings(const SceneDataset& ds) {
  for (const auto& w : ds.warnings) std::cerr << "warning: " << w << "\n";
}

struct ToyArgs {
  std::string out;
  ToySceneSpec spec;
  std::string size = "64x64";
  std::uint64_t seed = 0;
  bool force = false;
};

int make_toy(ToyArgs a) {
  unsigned w = 0, h = 0;
  char tail = 0;
  if (std::sscanf(a.size.c_str(), "%ux%u%c", &w, &h, &tail) != 2 || w == 0 || h == 0) {
    throw ConfigError("--size expects WxH, got '" + a.size + "'");
  }
  a.spec.width = w;
  a.spec.height = h;
  const fs::path out = a.out;
  if (fs::exists(out) && !fs::is_empty(out)) {
    if (!a.force) throw ConfigError(out.string() + " is not empty; use --force to overwrite");
    fs::remove_all(out);
  }
  const auto ds = seeded_toy_scene(a.spec, a.seed);
  write_blender_scene(ds, out);
  std::cout << "wrote " << ds.train.size() << "/" << ds.val.size() << "/" << ds.test.size()
            << " train/val/test views to " << out.string() << "\n";
  return 0;
}

struct TrainArgs {
  std::string config;
  std::string scene;
  std::string out;
  std::string field;
  std::string memory;
  std::vector<std::string> overrides;
  std::string resume;
  bool force = false;
  std::uint64_t print_every = 100;
};

std::string stored_config(const std::vector<NamedTensor>& tensors) {
  std::string text;
  for (float f : find_tensor(tensors, "meta.config").values) text.push_back(static_cast<char>(static_cast<unsigned char>(f)));
  return text;
}

int train_cmd(const TrainArgs& a) {
  const fs::path run_dir = a.out;
  std::vector<NamedTensor> resume_from;
  if (!a.resume.empty()) resume_from = read_checkpoint(a.resume);
  RunConfig config;
  if (!a.config.empty()) {
    config.merge(read_text(a.config));
  } else if (!resume_from.empty()) {
    config.merge(stored_config(resume_from));
  }
  if (!a.field.empty()) config.set("field.kind", a.field);
  if (!a.memory.empty()) config.set("field.memory", a.memory);
  for (const auto& kv : a.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    config.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  config.validate();

  if (resume_from.empty() && fs::exists(run_dir / "checkpoints")) {
    if (!a.force) {
      throw ConfigError("run directory " + run_dir.string() + " already has checkpoints; use --resume or --force");
    }
    fs::remove_all(run_dir / "checkpoints");
    fs::remove_all(run_dir / "logs");
  }

  const auto ds = load_blender_scene(a.scene);
  print_warnings(ds);
  Trainer trainer(config, ds);
  if (!resume_from.empty()) {
    trainer.restore(resume_from);
    std::cout << "resumed at iteration " << trainer.step() << "\n";
  }
  fs::create_directories(run_dir);
  write_text(run_dir / "config.ini", trainer.config().to_string());
  const auto total = trainer.config().train.iterations;
  trainer.hooks().on_record = [&](const TrainRecord& r) {
    if (r.iteration == total || r.iteration % a.print_every == 0 || r.val_psnr) {
      std::printf("iter %llu/%llu  loss %.6f  lr %.3g  %.0f ms", static_cast<unsigned long long>(r.iteration),
                  static_cast<unsigned long long>(total), r.loss, r.lr, r.wall_ms);
      if (r.val_psnr) std::printf("  val PSNR %.2f", *r.val_psnr);
      std::printf("\n");
      std::fflush(stdout);
    }
  };
  trainer.run(run_dir);
  std::cout << "checkpoint: " << (run_dir / "checkpoints" / "last.bnrf").string() << "\n";
  return 0;
}

CameraModel pose_camera(const std::string& pose, const LoadedModel& loaded, const std::string& scene,
                        const std::string& split) {
  const bool is_index = !pose.empty() && pose.find_first_not_of("0123456789") == std::string::npos;
  if (is_index) {
    if (scene.empty()) throw ConfigError("--pose index needs --scene");
    const auto ds = load_blender_scene(scene);
    print_warnings(ds);
    const auto& views = ds.split(split);
    const auto i = std::stoull(pose);
    if (i >= views.size()) {
      throw ConfigError("--pose " + pose + " out of range; " + split + " has " + std::to_string(views.size()) +
                        " views");
    }
    return views[i].camera;
  }
  std::ifstream f(pose);
  if (!f) throw IoError("cannot read pose file " + pose);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(pose + ": " + e.what());
  }
  CameraModel cam = loaded.camera;
  const auto& m = j.is_object() ? j.at("transform_matrix") : j;
  cam.camera_to_world = detail::parse_matrix(m, pose);
  if (j.is_object() && j.contains("camera_angle_x")) cam.focal = focal_from_fov(j["camera_angle_x"].get<double>(), cam.width);
  if (!(cam.orthonormality_error() <= 1e-3)) throw ValidationError(pose + ": rotation is not orthonormal");
  return cam;
}

struct RenderArgs {
  std::string ckpt;
  std::string pose;
  std::string out;
  std::string scene;
  std::string split = "test";
};

int render_cmd(const RenderArgs& a) {
  const auto loaded = load_model(fs::path(a.ckpt));
  const auto cam = pose_camera(a.pose, loaded, a.scene, a.split);
  const auto img = render_view(loaded.model, cam, loaded.config.render);
  if (fs::path(a.out).has_parent_path()) fs::create_directories(fs::path(a.out).parent_path());
  write_png(a.out, img.rgb);
  std::cout << "wrote " << a.out << " (" << cam.width << "x" << cam.height << ")\n";
  return 0;
}

struct EvalArgs {
  std::string ckpt;
  std::string scene;
  std::string split = "test";
  std::string out;
};

int eval_cmd(const EvalArgs& a) {
  const auto loaded = load_model(fs::path(a.ckpt));
  const auto ds = load_blender_scene(a.scene);
  print_warnings(ds);
  const auto rc = loaded.config.render;
  const std::string method = loaded.config.model.kind == FieldKind::bionerf ? "BioNeRF" : "NeRF";
  const auto report = evaluate_scene([&](const CameraModel& cam) { return render_view(loaded.model, cam, rc).rgb; },
                                     ds, a.split, method, loaded.config.ssim);
  if (!a.out.empty()) {
    const fs::path csv = a.out;
    if (csv.has_parent_path()) fs::create_directories(csv.parent_path());
    write_text(csv, report.to_csv());
    write_text(fs::path(csv).replace_extension(".txt"), report.to_table());
  }
  std::cout << report.to_table();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"BioNeRF: train and evaluate radiance fields"};
  app.require_subcommand(1);

  ToyArgs toy;
  auto* t = app.add_subcommand("make-toy", "Write the synthetic sphere scene in Blender layout");
  t->add_option("--out", toy.out, "Output directory")->required();
  t->add_option("--views", toy.spec.train_views, "Training views on the camera ring")->capture_default_str();
  t->add_option("--size", toy.size, "Image size WxH")->capture_default_str();
  t->add_option("--seed", toy.seed, "Seed for the ring phase")->capture_default_str();
  t->add_flag("--force", toy.force, "Replace a non-empty output directory");

  TrainArgs tr;
  auto* r = app.add_subcommand("train", "Train a field on a scene");
  r->add_option("--config", tr.config, "Config file (INI); defaults apply when omitted");
  r->add_option("--scene", tr.scene, "Scene directory")->required();
  r->add_option("--out", tr.out, "Run directory")->required();
  r->add_option("--field", tr.field, "bionerf or nerf")->check(CLI::IsMember({"bionerf", "nerf"}));
  r->add_option("--memory", tr.memory, "carried or stateless")->check(CLI::IsMember({"carried", "stateless"}));
  r->add_option("--set", tr.overrides, "Override a config key, e.g. train.iterations=500");
  r->add_option("--print-every", tr.print_every, "Progress line interval")->capture_default_str();
  auto* resume = r->add_option("--resume", tr.resume, "Continue from this checkpoint");
  r->add_flag("--force", tr.force, "Discard existing checkpoints and logs")->excludes(resume);

  RenderArgs rn;
  auto* v = app.add_subcommand("render", "Render one view from a checkpoint");
  v->add_option("--ckpt", rn.ckpt, "Checkpoint file")->required();
  v->add_option("--pose", rn.pose, "View index into --scene/--split, or a JSON pose file")->required();
  v->add_option("--out", rn.out, "Output PNG")->required();
  v->add_option("--scene", rn.scene, "Scene directory (for --pose index)");
  v->add_option("--split", rn.split, "Split for --pose index")->capture_default_str();

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Score a checkpoint on a scene split");
  e->add_option("--ckpt", ev.ckpt, "Checkpoint file")->required();
  e->add_option("--scene", ev.scene, "Scene directory")->required();
  e->add_option("--split", ev.split, "Split to score")->capture_default_str();
  e->add_option("--out", ev.out, "Per-view CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : static_cast<int>(ExitCode::usage);
  }

  try {
    if (t->parsed()) return make_toy(toy);
    if (r->parsed()) return train_cmd(tr);
    if (v->parsed()) return render_cmd(rn);
    if (e->parsed()) return eval_cmd(ev);
  } catch (const Error& err) {
    std::cerr << "error: " << err.what() << "\n";
    return static_cast<int>(err.exit_code());
  } catch (const fs::filesystem_error& err) {
    std::cerr << "error: " << err.what() << "\n";
    return static_cast<int>(ExitCode::data);
  } catch (const std::exception& err) {
    std::cerr << "internal error: " << err.what() << "\n";
    return static_cast<int>(ExitCode::internal);
  }
  return static_cast<int>(ExitCode::internal);
}
