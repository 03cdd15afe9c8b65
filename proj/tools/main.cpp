#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "splatweaver/checks.hpp"
#include "splatweaver/scenegen.hpp"

namespace fs = std::filesystem;
using namespace splat;

namespace {

// expert-index palette (documented in the README)
const std::vector<std::array<uint8_t, 3>> kExpertPalette = {
    {40, 40, 40},    // 0: null
    {66, 135, 245},  // 1
    {250, 180, 40},  // 2
    {220, 50, 60},   // 3
    {120, 220, 120}, {200, 120, 220}, {90, 210, 210}, {240, 240, 240},
};

TrainConfig load_config_opt(const std::string& path) {
  return path.empty() ? TrainConfig{} : config_load(path);
}

int cmd_gen_scene(const std::string& preset, int gaussians, int views,
                  int targets, int res, uint64_t seed, const std::string& out) {
  SceneSpec spec;
  spec.preset = preset;
  spec.gaussians = gaussians;
  spec.context_views = views;
  spec.target_views = targets;
  spec.resolution = res;
  spec.seed = seed;
  GeneratedScene scene = generate_scene(spec);
  fs::create_directories(out);
  save_scene(out + "/scene.txt", scene.batch);
  save_cloud(out + "/gt_cloud.swpc", scene.ground_truth, 0);
  std::cout << "wrote " << out << "/scene.txt (" << scene.batch.context.size()
            << " context + " << scene.batch.target.size() << " target views, "
            << scene.ground_truth.size() << " ground-truth Gaussians)\n";
  return 0;
}

int cmd_train(const std::string& scene_path, const std::string& config_path,
              const std::string& out, const std::string& resume) {
  SceneBatch batch = load_scene(scene_path);
  fs::create_directories(out);
  ModelState state = resume.empty()
                         ? ModelState::init(load_config_opt(config_path),
                                            resolve_geometry(
                                                load_config_opt(config_path), batch))
                         : load_checkpoint(resume);
  std::ofstream log(out + "/metrics.log", resume.empty() ? std::ios::out
                                                         : std::ios::app);
  if (!log) throw ParseError("cannot open " + out + "/metrics.log");
  if (resume.empty()) {
    std::istringstream cfg_text(config_to_text(state.cfg));
    std::string line;
    while (std::getline(cfg_text, line)) log << "# config " << line << "\n";
    log << strformat("# geometry extent=%.17g depth_init=%.17g\n",
                     double(state.geom.extent), double(state.geom.depth_init));
  }
  train_steps(
      state, batch,
      [&](const MetricsRecord& r) {
        log << r.to_line() << "\n";
        log.flush();
        std::cout << strformat(
            "step %6lld  loss %.5f  render %.5f  G %lld  psnr %.2f\n",
            (long long)r.step, double(r.total), double(r.render),
            (long long)r.hard_g, double(r.psnr_target));
      },
      [&](const ModelState& st, int64_t step) {
        save_checkpoint(st, out + strformat("/checkpoint_%06lld.swckpt",
                                            (long long)step));
      });
  save_checkpoint(state, out + "/checkpoint.swckpt");
  std::cout << "wrote " << out << "/checkpoint.swckpt\n";
  return 0;
}

ModelState load_state(const std::string& ckpt) { return load_checkpoint(ckpt); }

int cmd_render(const std::string& ckpt, const std::string& scene_path,
               const std::string& out, const std::string& which) {
  SceneBatch batch = load_scene(scene_path);
  ModelState state = load_state(ckpt);
  fs::create_directories(out);
  ForwardOptions opt;
  opt.train = state.cfg.eval_noise;
  opt.temperature = state.cfg.temp_final;
  opt.render_targets = true;
  ForwardResult fr = forward(nullptr, batch, state, opt);
  int idx = 0;
  auto dump = [&](const RenderOutput& ro, const std::string& tag) {
    write_ppm(out + strformat("/render_%s_%03d.ppm", tag.c_str(), idx), ro.color);
    write_pfm(out + strformat("/depth_%s_%03d.pfm", tag.c_str(), idx), ro.depth);
    ++idx;
  };
  if (which == "context" || which == "all")
    for (size_t n = 0; n < batch.context.size(); ++n) dump(fr.renders[n], "context");
  idx = 0;
  if (which == "target" || which == "all")
    for (size_t n = 0; n < batch.target.size(); ++n)
      dump(fr.renders[batch.context.size() + n], "target");
  std::cout << "wrote renders to " << out << "\n";
  return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& scene_path) {
  SceneBatch batch = load_scene(scene_path);
  ModelState state = load_state(ckpt);
  EvalResult ev = evaluate(state, batch);
  std::cout << "view      PSNR      SSIM\n";
  for (size_t i = 0; i < ev.psnr_per_view.size(); ++i)
    std::cout << strformat("%4zu  %8.3f  %8.4f\n", i, double(ev.psnr_per_view[i]),
                           double(ev.ssim_per_view[i]));
  std::cout << strformat("mean  %8.3f  %8.4f\n", double(ev.psnr_mean),
                         double(ev.ssim_mean));
  std::cout << strformat("G (hard count): %lld\n", (long long)ev.hard_g);
  std::cout << "expert fractions:";
  for (real f : ev.expert_fractions) std::cout << strformat(" %.4f", double(f));
  std::cout << "\n";
  return 0;
}

int cmd_route_vis(const std::string& ckpt, const std::string& scene_path,
                  const std::string& out) {
  SceneBatch batch = load_scene(scene_path);
  ModelState state = load_state(ckpt);
  fs::create_directories(out);
  EvalResult ev = evaluate(state, batch);
  for (size_t n = 0; n < batch.context.size(); ++n) {
    const Camera& cam = batch.context[n].cam;
    write_indexed_ppm(out + strformat("/experts_%03zu.ppm", n), ev.expert_maps[n],
                      cam.height, cam.width, kExpertPalette);
    write_gray_ppm(out + strformat("/energy_%03zu.ppm", n),
                   hf_energy(batch.context[n].image));
  }
  std::cout << "wrote expert/energy maps to " << out << "\n";
  return 0;
}

int cmd_export_cloud(const std::string& ckpt, const std::string& scene_path,
                     const std::string& out) {
  SceneBatch batch = load_scene(scene_path);
  ModelState state = load_state(ckpt);
  ForwardOptions opt;
  opt.render_targets = false;
  ForwardResult fr = forward(nullptr, batch, state, opt);
  std::vector<GaussianPrimitive> prims = from_batch(fr.prims);
  std::vector<CloudEntry> entries;
  int w = batch.width();
  for (size_t i = 0; i < prims.size(); ++i) {
    CloudEntry e;
    e.prim = prims[i];
    e.expert = uint8_t(fr.hidden.expert[i]);
    e.view = uint32_t(fr.hidden.source_view[i]);
    e.row = uint32_t(fr.hidden.source_pixel[i] / w);
    e.col = uint32_t(fr.hidden.source_pixel[i] % w);
    entries.push_back(e);
  }
  save_cloud(out, entries, state.cfg.sh_degree);
  std::cout << "wrote " << entries.size() << " Gaussians to " << out << "\n";
  return 0;
}

int cmd_check(const std::string& filter) {
  int failed = 0;
  for (const std::string& name : checks::check_names()) {
    if (!filter.empty() && name.find(filter) == std::string::npos) continue;
    checks::CheckResult r = checks::run_check(name);
    std::cout << strformat("[%s] %-36s (%.2fs)%s%s\n", r.pass ? "PASS" : "FAIL",
                           r.name.c_str(), r.seconds, r.detail.empty() ? "" : "  ",
                           r.detail.c_str());
    if (!r.pass) ++failed;
  }
  if (failed) {
    std::cout << failed << " properties failed\n";
    return 2;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SplatWeaver: adaptive Gaussian-primitive allocation for novel view synthesis"};
  app.require_subcommand(1);

  std::string preset = "random-blobs", out_dir = "out", scene_path, config_path,
              ckpt_path, resume_path, which = "target", filter, cloud_out;
  int gaussians = 50, views = 4, targets = 2, res = 64;
  uint64_t seed = 1;

  auto* gen = app.add_subcommand("gen-scene", "synthesize a ground-truth scene");
  gen->add_option("--preset", preset,
                  "flat-textured-split | checker-room | random-blobs");
  gen->add_option("--gaussians", gaussians, "primitive count (random-blobs)");
  gen->add_option("--views", views, "context view count");
  gen->add_option("--targets", targets, "held-out target view count");
  gen->add_option("--res", res, "image resolution");
  gen->add_option("--seed", seed, "generator seed");
  gen->add_option("--out", out_dir, "output directory");

  auto* train_cmd = app.add_subcommand("train", "train on a scene");
  train_cmd->add_option("--scene", scene_path, "scene file")->required();
  train_cmd->add_option("--config", config_path, "key=value config file");
  train_cmd->add_option("--out", out_dir, "output directory");
  train_cmd->add_option("--resume", resume_path, "checkpoint to resume from");

  auto* render_cmd = app.add_subcommand("render", "render a checkpoint");
  render_cmd->add_option("--checkpoint", ckpt_path)->required();
  render_cmd->add_option("--scene", scene_path)->required();
  render_cmd->add_option("--out", out_dir);
  render_cmd->add_option("--set", which, "context | target | all");

  auto* eval_cmd = app.add_subcommand("eval", "print PSNR/SSIM/G metrics");
  eval_cmd->add_option("--checkpoint", ckpt_path)->required();
  eval_cmd->add_option("--scene", scene_path)->required();

  auto* vis_cmd = app.add_subcommand("route-vis", "write expert and energy maps");
  vis_cmd->add_option("--checkpoint", ckpt_path)->required();
  vis_cmd->add_option("--scene", scene_path)->required();
  vis_cmd->add_option("--out", out_dir);

  auto* cloud_cmd = app.add_subcommand("export-cloud", "write the Gaussian cloud");
  cloud_cmd->add_option("--checkpoint", ckpt_path)->required();
  cloud_cmd->add_option("--scene", scene_path)->required();
  cloud_cmd->add_option("--out", cloud_out, "output .swpc file")->required();

  auto* check_cmd = app.add_subcommand("check", "run the oracle/invariant suite");
  check_cmd->add_option("--filter", filter, "substring filter on property names");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed())
      return cmd_gen_scene(preset, gaussians, views, targets, res, seed, out_dir);
    if (train_cmd->parsed())
      return cmd_train(scene_path, config_path, out_dir, resume_path);
    if (render_cmd->parsed())
      return cmd_render(ckpt_path, scene_path, out_dir, which);
    if (eval_cmd->parsed()) return cmd_eval(ckpt_path, scene_path);
    if (vis_cmd->parsed()) return cmd_route_vis(ckpt_path, scene_path, out_dir);
    if (cloud_cmd->parsed())
      return cmd_export_cloud(ckpt_path, scene_path, cloud_out);
    if (check_cmd->parsed()) return cmd_check(filter);
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const ShapeError& e) {
    std::cerr << "internal invariant failure: " << e.what() << "\n";
    return 2;
  } catch (const ContractError& e) {
    std::cerr << "internal invariant failure: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
