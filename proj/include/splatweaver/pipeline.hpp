#pragma once

#include <optional>
#include <string>

#include "splatweaver/encoder.hpp"
#include "splatweaver/fusion.hpp"
#include "splatweaver/metrics.hpp"
#include "splatweaver/wavelet.hpp"

namespace splat {

struct TrainConfig {
  int64_t steps = 2000;
  real lr_init = real(2e-4), lr_final = real(1e-6);
  real lambda_percep = real(0.05);
  real lambda_route = real(0.01);
  real lambda_budget = real(0.01);
  real lambda_pose = real(10);   // slot retained; the pose term is fixed zero
  real lambda_depth = real(0.1);
  std::vector<real> rho{real(0.20), real(0.02), real(0.02)};  // rho[c-1]
  real eps_s = real(0.1);
  real eps_b = real(0.3);
  int max_cardinality = 3;
  int knn_k = 8;
  int feat_dim = 16;
  int latent_dim = 8;
  int pixel_feat_dim = 8;
  int attn_dim = 16;
  real temp_init = real(1.0), temp_final = real(0.3);
  uint64_t seed = 1;
  int64_t log_interval = 50;
  int64_t checkpoint_interval = 0;  // 0 = final checkpoint only
  bool supervise_targets = true;
  bool use_depth_loss = true;
  bool use_perceptual = true;
  bool eval_noise = false;
  bool shared_band_branches = false;
  bool scalar_attention = false;
  int sh_degree = 0;
  real scene_extent = 0;  // 0 = derive from the scene file
  real depth_init = 0;    // 0 = derive from camera distances

  void validate() const;
};

struct View {
  Tensor image;  // [H,W,3] in [0,1]
  Camera cam;
  Tensor depth;  // [H,W]; empty tensor = none; non-finite entries = invalid
};

struct SceneBatch {
  std::vector<View> context, target;
  real world_unit = 0;

  int width() const { return context.at(0).cam.width; }
  int height() const { return context.at(0).cam.height; }
  void validate() const;  // N >= 2, matching view sizes
};

// Geometry constants resolved from config + scene: the tanh offset bound is
// 2% of the scene extent, the scale activation unit 5%, and expert depth
// logits start at softplus^-1(depth_init).
struct SceneGeometry {
  real extent = 4;
  real depth_init = 4;
  real offset_bound() const { return real(0.02) * extent; }
  real scale_unit() const { return real(0.05) * extent; }
};
SceneGeometry resolve_geometry(const TrainConfig& cfg, const SceneBatch& batch);

struct ModelState {
  TrainConfig cfg;
  SceneGeometry geom;
  Encoder encoder;
  FrequencyGuidance guidance;
  PixelRouter router;
  ExpertBank bank;
  Linear link_proj;
  Aggregator aggregator;
  ParamHead head;
  AdamState adam;
  int64_t step = 0;

  static ModelState init(const TrainConfig& cfg, const SceneGeometry& geom);
  ParamRefs params();
};

struct ForwardOptions {
  bool train = false;  // Gumbel noise + straight-through weights
  real temperature = 1;
  uint64_t noise_seed = 0;
  bool freeze_st = false;   // constant routing weights (FD harness)
  int forced_expert = -1;   // route every pixel to this expert (tests)
  // Pins the per-view hard selection while keeping the soft paths
  // differentiable; the FD harness uses this because the argmax is piecewise
  // constant in the weights.
  const std::vector<std::vector<int>>* forced_selection = nullptr;
  bool render_targets = true;
  Vec3 background{0, 0, 0};
};

struct ForwardResult {
  PrimitiveBatch prims;
  HiddenGaussianSet hidden;
  std::vector<RoutingDecision> decisions;   // per context view
  std::vector<RenderOutput> renders;        // context views, then targets
  int n_context_renders = 0;
  int64_t hard_g = 0;
  Tensor expected_g;                        // differentiable soft count
  std::vector<real> expert_fractions;       // selection fractions, sum 1
  std::vector<real> mean_energy_per_expert;
};

// encode -> dwt + guidance -> route -> dispatch -> link -> kNN -> aggregate
// -> head -> rasterize.
ForwardResult forward(Tape* tape, const SceneBatch& batch, ModelState& state,
                      const ForwardOptions& opt);

// Mean over views of MSE + lambda * gradient-difference proxy (mean absolute
// difference of horizontal+vertical image gradients at full and half
// resolution).
Tensor render_loss(const std::vector<Tensor>& rendered,
                   const std::vector<Tensor>& targets, real lambda_percep,
                   bool use_perceptual);

// Masked MSE; non-finite ground-truth pixels are excluded, empty mask -> 0.
Tensor depth_loss(const Tensor& rendered, const Tensor& ground_truth);

struct LossBreakdown {
  Tensor total;
  real render = 0, route_term = 0, budget_term = 0, depth_term = 0;
  real pose_term = 0;  // always zero
  bool route_active = false;
};

// Eq.-16-style weighted sum; the route term participates for steps in
// [0, steps/2) only.
LossBreakdown total_loss(const ForwardResult& fr, const SceneBatch& batch,
                         const std::vector<RoutingTarget>& targets,
                         const ModelState& state, int64_t step);

struct MetricsRecord {
  int64_t step = 0;
  real total = 0, render = 0, route_term = 0, budget_term = 0, depth_term = 0,
       pose_term = 0;
  int64_t hard_g = 0;
  real expected_g = 0;
  real lr = 0, temperature = 0;
  real psnr_target = 0;

  std::string to_line() const;
  static MetricsRecord from_line(const std::string& line);
};

real temperature_at(const TrainConfig& cfg, int64_t step);

using LogSink = std::function<void(const MetricsRecord&)>;
using CheckpointSink = std::function<void(const ModelState&, int64_t step)>;

// Runs training from state.step to cfg.steps. Gumbel noise streams are
// derived per step from (seed, step), so resuming from a checkpoint
// reproduces the uninterrupted run bit-exactly.
void train_steps(ModelState& state, const SceneBatch& batch,
                 const LogSink& on_log, const CheckpointSink& on_checkpoint);

struct TrainResult {
  ModelState state;
  std::vector<MetricsRecord> log;
};
TrainResult train(const SceneBatch& batch, const TrainConfig& cfg);

struct EvalResult {
  std::vector<real> psnr_per_view, ssim_per_view;  // target views
  real psnr_mean = 0, ssim_mean = 0;
  int64_t hard_g = 0;
  std::vector<real> expert_fractions;
  std::vector<std::vector<int>> expert_maps;  // per context view [H*W]
  std::vector<Tensor> target_renders;         // color images
  std::vector<Tensor> target_depths;
};
EvalResult evaluate(ModelState& state, const SceneBatch& batch);

// Checkpoint container: little-endian binary, magic + version, config echo,
// named f64 weight blobs with shapes, Adam state, step counter.
void save_checkpoint(const ModelState& state, const std::string& path);
ModelState load_checkpoint(const std::string& path);

}  // namespace splat
