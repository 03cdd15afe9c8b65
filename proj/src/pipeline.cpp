#include "splatweaver/pipeline.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace splat {

void TrainConfig::validate() const {
  if (steps < 1) throw ContractError("config: steps must be >= 1");
  if (!(lr_init > 0) || !(lr_final > 0))
    throw ContractError("config: learning rates must be positive");
  if (int(rho.size()) != max_cardinality)
    throw ContractError(strformat(
        "config: %zu rho fractions for max_cardinality %d", rho.size(),
        max_cardinality));
  real rsum = 0;
  for (real r : rho) {
    if (r < 0) throw ContractError("config: rho fractions must be non-negative");
    rsum += r;
  }
  if (rsum > real(1) + real(1e-12))
    throw ContractError(strformat("config: rho fractions sum to %g, must not exceed 1",
                                  double(rsum)));
  if (eps_s < 0 || eps_s >= 1)
    throw ContractError("config: epsilon_s must be in [0,1)");
  if (!(eps_b > 0)) throw ContractError("config: epsilon_b must be positive");
  if (max_cardinality < 1) throw ContractError("config: max_cardinality must be >= 1");
  if (knn_k < 1) throw ContractError("config: knn_k must be >= 1");
  if (feat_dim < 2 || latent_dim < 1 || pixel_feat_dim < 1 || attn_dim < 1)
    throw ContractError("config: feature widths must be positive");
  if (!(temp_init > 0) || !(temp_final > 0))
    throw ContractError("config: temperatures must be positive");
  if (sh_degree < 0 || sh_degree > 2)
    throw ContractError("config: sh_degree must be 0, 1 or 2");
  if (log_interval < 1) throw ContractError("config: log_interval must be >= 1");
}

void SceneBatch::validate() const {
  if (context.size() < 2)
    throw ContractError(strformat("scene: need at least 2 context views, got %zu",
                                  context.size()));
  int w = context[0].cam.width, h = context[0].cam.height;
  auto check_view = [&](const View& v, const char* kind, size_t i) {
    v.cam.validate();
    if (v.image.shape.size() != 3 || v.image.shape[2] != 3)
      throw ContractError(strformat("scene: %s view %zu image is not [H,W,3]", kind, i));
    if (v.image.shape[0] != v.cam.height || v.image.shape[1] != v.cam.width)
      throw ContractError(strformat("scene: %s view %zu image does not match its camera",
                                    kind, i));
    if (v.cam.width != w || v.cam.height != h)
      throw ContractError(strformat("scene: %s view %zu size differs within the batch",
                                    kind, i));
    if (v.depth.data && v.depth.numel() &&
        (v.depth.shape.size() != 2 || v.depth.shape[0] != v.cam.height ||
         v.depth.shape[1] != v.cam.width))
      throw ContractError(strformat("scene: %s view %zu depth map size mismatch",
                                    kind, i));
  };
  for (size_t i = 0; i < context.size(); ++i) check_view(context[i], "context", i);
  for (size_t i = 0; i < target.size(); ++i) check_view(target[i], "target", i);
}

SceneGeometry resolve_geometry(const TrainConfig& cfg, const SceneBatch& batch) {
  SceneGeometry g;
  if (cfg.scene_extent > 0) {
    g.extent = cfg.scene_extent;
  } else if (batch.world_unit > 0) {
    g.extent = batch.world_unit;
  } else {
    g.extent = 4;
  }
  if (cfg.depth_init > 0) {
    g.depth_init = cfg.depth_init;
  } else {
    real acc = 0;
    for (const View& v : batch.context) acc += vnorm(v.cam.center());
    g.depth_init = std::max(real(0.5), acc / real(batch.context.size()));
  }
  return g;
}

ModelState ModelState::init(const TrainConfig& cfg, const SceneGeometry& geom) {
  cfg.validate();
  ModelState st;
  st.cfg = cfg;
  st.geom = geom;
  Rng rng(cfg.seed);
  int d = cfg.feat_dim;
  int experts = cfg.max_cardinality + 1;
  st.encoder = Encoder("encoder", d, rng);
  st.guidance = FrequencyGuidance("guidance", 3, d, cfg.shared_band_branches, rng);
  st.router = PixelRouter("router", d, 2 * d, experts, rng);
  st.bank = ExpertBank("experts", d, 2 * d, cfg.max_cardinality, cfg.latent_dim,
                       geom.depth_init, rng);
  st.link_proj = Linear("link", d, cfg.pixel_feat_dim, rng);
  int hdim = cfg.latent_dim + cfg.pixel_feat_dim;
  st.aggregator = Aggregator("agg", hdim, cfg.attn_dim, cfg.scalar_attention, rng);
  st.head = ParamHead("head", hdim, cfg.attn_dim, 2 * cfg.attn_dim,
                      cfg.sh_degree, geom.scale_unit(), rng);
  return st;
}

ParamRefs ModelState::params() {
  ParamRefs refs;
  encoder.collect(refs);
  guidance.collect(refs);
  router.collect(refs);
  bank.collect(refs);
  link_proj.collect(refs);
  aggregator.collect(refs);
  head.collect(refs);
  return refs;
}

// ---------------------------------------------------------------------------
// Forward

ForwardResult forward(Tape* tape, const SceneBatch& batch, ModelState& state,
                      const ForwardOptions& opt) {
  batch.validate();
  ForwardResult fr;
  int n_views = int(batch.context.size());
  int experts = state.bank.expert_count();
  Rng noise(Rng::mix(opt.noise_seed, 0x6e6f6973));

  std::vector<Tensor> raw_flat;
  std::vector<Camera> cams;
  std::vector<Tensor> energies;
  for (int n = 0; n < n_views; ++n) {
    const View& view = batch.context[size_t(n)];
    Tensor feats = state.encoder.forward(tape, view.image);
    WaveletBands bands = dwt2(view.image);
    Tensor guided = state.guidance.forward(tape, feats, bands);
    int p = view.cam.width * view.cam.height;
    Tensor f_flat = reshape(guided, {p, state.cfg.feat_dim});
    raw_flat.push_back(reshape(feats, {p, state.cfg.feat_dim}));
    cams.push_back(view.cam);
    energies.push_back(hf_energy(view.image));

    RoutingDecision dec;
    if (opt.forced_expert >= 0) {
      dec = forced_decision(std::vector<int>(size_t(p), opt.forced_expert), experts);
    } else {
      dec = state.router.route(tape, f_flat, opt.temperature,
                               opt.train ? &noise : nullptr);
      if (opt.forced_selection)
        dec = with_selection(dec, (*opt.forced_selection)[size_t(n)]);
    }
    fr.decisions.push_back(std::move(dec));
  }

  std::vector<RoutingDecision> dispatch_dec;
  for (const auto& d : fr.decisions)
    dispatch_dec.push_back(opt.freeze_st ? freeze_st(d) : d);

  DispatchGeometry geom{state.geom.offset_bound()};
  fr.hidden = dispatch_experts(raw_flat, dispatch_dec, state.bank, cams, geom);

  LinkedSet linked = link_pixel_features(fr.hidden, raw_flat, state.link_proj);
  int g = fr.hidden.count();
  if (g > 0) {
    NeighborIndex index = knn_coarse_to_fine(
        *linked.mu.data, state.cfg.knn_k, default_cluster_count(g),
        Rng::mix(state.cfg.seed, 0x6b6d6e73));
    Tensor refined = state.aggregator.forward(linked, index);
    fr.prims = state.head.forward(linked, refined);
  } else {
    LinkedSet empty_linked = linked;
    fr.prims = state.head.forward(empty_linked, constant({0, state.cfg.attn_dim}, {}));
  }

  for (int n = 0; n < n_views; ++n)
    fr.renders.push_back(rasterize(fr.prims, batch.context[size_t(n)].cam,
                                   opt.background));
  fr.n_context_renders = n_views;
  if (opt.render_targets)
    for (const View& v : batch.target)
      fr.renders.push_back(rasterize(fr.prims, v.cam, opt.background));

  // diagnostics
  fr.hard_g = hard_count(fr.decisions);
  fr.expected_g = expected_count(fr.decisions);
  fr.expert_fractions.assign(size_t(experts), 0);
  fr.mean_energy_per_expert.assign(size_t(experts), 0);
  std::vector<int64_t> counts(size_t(experts), 0);
  int64_t total_px = 0;
  for (int n = 0; n < n_views; ++n) {
    const auto& sel = fr.decisions[size_t(n)].selected;
    const real* ev = energies[size_t(n)].ptr();
    for (size_t i = 0; i < sel.size(); ++i) {
      counts[size_t(sel[i])] += 1;
      fr.mean_energy_per_expert[size_t(sel[i])] += ev[i];
    }
    total_px += int64_t(sel.size());
  }
  for (int e = 0; e < experts; ++e) {
    fr.expert_fractions[size_t(e)] = real(counts[size_t(e)]) / real(total_px);
    if (counts[size_t(e)] > 0)
      fr.mean_energy_per_expert[size_t(e)] /= real(counts[size_t(e)]);
  }
  return fr;
}

// ---------------------------------------------------------------------------
// Losses

namespace {

Tensor image_grad_l1(const Tensor& a, const Tensor& b) {
  int h = a.shape[0], w = a.shape[1];
  Tensor gxa = sub(slice(a, 1, 1, w - 1), slice(a, 1, 0, w - 1));
  Tensor gxb = sub(slice(b, 1, 1, w - 1), slice(b, 1, 0, w - 1));
  Tensor gya = sub(slice(a, 0, 1, h - 1), slice(a, 0, 0, h - 1));
  Tensor gyb = sub(slice(b, 0, 1, h - 1), slice(b, 0, 0, h - 1));
  return add(mean(abs(sub(gxa, gxb))), mean(abs(sub(gya, gyb))));
}

}  // namespace

Tensor render_loss(const std::vector<Tensor>& rendered,
                   const std::vector<Tensor>& targets, real lambda_percep,
                   bool use_perceptual) {
  if (rendered.size() != targets.size() || rendered.empty())
    throw ContractError("render_loss: view count mismatch");
  Tensor total;
  for (size_t i = 0; i < rendered.size(); ++i) {
    if (rendered[i].shape != targets[i].shape)
      throw ShapeError("render_loss: shape mismatch " +
                       shape_str(rendered[i].shape) + " vs " +
                       shape_str(targets[i].shape));
    Tensor l = mean(squared_difference(rendered[i], targets[i]));
    if (use_perceptual && lambda_percep != 0) {
      Tensor proxy = image_grad_l1(rendered[i], targets[i]);
      if (rendered[i].shape[0] % 2 == 0 && rendered[i].shape[1] % 2 == 0)
        proxy = add(proxy, image_grad_l1(avgpool2x2(rendered[i]),
                                         avgpool2x2(targets[i])));
      l = add(l, scale(proxy, lambda_percep));
    }
    total = total.data ? add(total, l) : l;
  }
  return scale(total, real(1) / real(rendered.size()));
}

Tensor depth_loss(const Tensor& rendered, const Tensor& ground_truth) {
  if (rendered.shape != ground_truth.shape)
    throw ShapeError("depth_loss: shape mismatch " + shape_str(rendered.shape) +
                     " vs " + shape_str(ground_truth.shape));
  int64_t n = ground_truth.numel();
  std::vector<real> mask(size_t(n), 0), filled(size_t(n), 0);
  int64_t valid = 0;
  for (int64_t i = 0; i < n; ++i) {
    real v = ground_truth.ptr()[i];
    if (std::isfinite(double(v))) {
      mask[size_t(i)] = 1;
      filled[size_t(i)] = v;
      valid += 1;
    }
  }
  if (valid == 0) return scalar_tensor(0);
  Tensor diff = squared_difference(rendered, constant(rendered.shape, std::move(filled)));
  Tensor masked = mul(diff, constant(rendered.shape, std::move(mask)));
  return scale(sum(masked), real(1) / real(valid));
}

LossBreakdown total_loss(const ForwardResult& fr, const SceneBatch& batch,
                         const std::vector<RoutingTarget>& targets,
                         const ModelState& state, int64_t step) {
  const TrainConfig& cfg = state.cfg;
  LossBreakdown lb;
  lb.route_active = step < cfg.steps / 2;

  std::vector<Tensor> rendered, supervision;
  for (size_t n = 0; n < batch.context.size(); ++n) {
    rendered.push_back(fr.renders[n].color);
    supervision.push_back(batch.context[n].image);
  }
  if (cfg.supervise_targets) {
    if (fr.renders.size() < batch.context.size() + batch.target.size())
      throw ContractError("total_loss: target renders missing");
    for (size_t n = 0; n < batch.target.size(); ++n) {
      rendered.push_back(fr.renders[batch.context.size() + n].color);
      supervision.push_back(batch.target[n].image);
    }
  }
  Tensor l_render = render_loss(rendered, supervision, cfg.lambda_percep,
                                cfg.use_perceptual);
  lb.render = l_render.value();
  Tensor total = l_render;

  if (lb.route_active) {
    if (targets.size() != batch.context.size())
      throw ContractError("total_loss: one routing target per context view required");
    Tensor l_route;
    for (size_t n = 0; n < targets.size(); ++n) {
      Tensor l = route_loss(fr.decisions[n], targets[n]);
      l_route = l_route.data ? add(l_route, l) : l;
    }
    lb.route_term = cfg.lambda_route * l_route.value();
    total = add(total, scale(l_route, cfg.lambda_route));
  }

  int64_t budget_base = int64_t(batch.context.size()) * batch.width() * batch.height();
  Tensor l_budget = budget_loss(fr.decisions, cfg.eps_b, budget_base);
  lb.budget_term = cfg.lambda_budget * l_budget.value();
  total = add(total, scale(l_budget, cfg.lambda_budget));

  if (cfg.use_depth_loss) {
    Tensor l_depth;
    int with_depth = 0;
    for (size_t n = 0; n < batch.context.size(); ++n) {
      const View& v = batch.context[n];
      if (!v.depth.data || v.depth.numel() == 0) continue;
      Tensor l = depth_loss(fr.renders[n].depth, v.depth);
      l_depth = l_depth.data ? add(l_depth, l) : l;
      with_depth += 1;
    }
    if (with_depth > 0) {
      l_depth = scale(l_depth, real(1) / real(with_depth));
      lb.depth_term = cfg.lambda_depth * l_depth.value();
      total = add(total, scale(l_depth, cfg.lambda_depth));
    }
  }

  // pose distillation is out of scope; the lambda_pose slot stays at zero
  lb.pose_term = 0;
  lb.total = total;
  return lb;
}

// ---------------------------------------------------------------------------
// Training loop

real temperature_at(const TrainConfig& cfg, int64_t step) {
  if (cfg.steps <= 1) return cfg.temp_final;
  real t = real(step) / real(cfg.steps - 1);
  if (t > 1) t = 1;
  return cfg.temp_init + (cfg.temp_final - cfg.temp_init) * t;
}

std::string MetricsRecord::to_line() const {
  return strformat(
      "step=%lld total=%.17g render=%.17g route=%.17g budget=%.17g depth=%.17g "
      "pose=%.17g g_hard=%lld g_expected=%.17g lr=%.17g temp=%.17g psnr=%.17g",
      (long long)step, double(total), double(render), double(route_term),
      double(budget_term), double(depth_term), double(pose_term),
      (long long)hard_g, double(expected_g), double(lr), double(temperature),
      double(psnr_target));
}

MetricsRecord MetricsRecord::from_line(const std::string& line) {
  MetricsRecord r;
  std::istringstream ss(line);
  std::string tok;
  while (ss >> tok) {
    auto eq = tok.find('=');
    if (eq == std::string::npos) throw ParseError("metrics: malformed token " + tok);
    std::string key = tok.substr(0, eq);
    std::string val = tok.substr(eq + 1);
    if (key == "step") r.step = std::stoll(val);
    else if (key == "total") r.total = real(std::stod(val));
    else if (key == "render") r.render = real(std::stod(val));
    else if (key == "route") r.route_term = real(std::stod(val));
    else if (key == "budget") r.budget_term = real(std::stod(val));
    else if (key == "depth") r.depth_term = real(std::stod(val));
    else if (key == "pose") r.pose_term = real(std::stod(val));
    else if (key == "g_hard") r.hard_g = std::stoll(val);
    else if (key == "g_expected") r.expected_g = real(std::stod(val));
    else if (key == "lr") r.lr = real(std::stod(val));
    else if (key == "temp") r.temperature = real(std::stod(val));
    else if (key == "psnr") r.psnr_target = real(std::stod(val));
    else throw ParseError("metrics: unknown key " + key);
  }
  return r;
}

void train_steps(ModelState& state, const SceneBatch& batch,
                 const LogSink& on_log, const CheckpointSink& on_checkpoint) {
  const TrainConfig& cfg = state.cfg;
  cfg.validate();
  batch.validate();
  ParamRefs params = state.params();
  if (!state.adam.initialized()) state.adam.init(params);

  // routing supervision is fixed per scene: energy rank -> smoothed labels
  std::vector<RoutingTarget> targets;
  for (const View& v : batch.context)
    targets.push_back(routing_targets(hf_energy(v.image), cfg.rho, cfg.eps_s));

  for (int64_t step = state.step; step < cfg.steps; ++step) {
    Tape tape;
    ForwardOptions opt;
    opt.train = true;
    opt.temperature = temperature_at(cfg, step);
    opt.noise_seed = Rng::mix(cfg.seed, uint64_t(step));
    opt.render_targets = true;
    ForwardResult fr = forward(&tape, batch, state, opt);
    LossBreakdown lb = total_loss(fr, batch, targets, state, step);
    real total_v = lb.total.value();
    if (!std::isfinite(double(total_v)))
      throw ContractError(strformat(
          "train: non-finite loss at step %lld (render=%g route=%g budget=%g depth=%g)",
          (long long)step, double(lb.render), double(lb.route_term),
          double(lb.budget_term), double(lb.depth_term)));

    zero_grads(params);
    tape.backward(lb.total);
    AdamConfig ac;
    ac.lr = cosine_lr(step, cfg.steps, cfg.lr_init, cfg.lr_final);
    adam_step(params, state.adam, ac);
    state.step = step + 1;

    bool last = step + 1 == cfg.steps;
    if (on_log && (step % cfg.log_interval == 0 || last)) {
      MetricsRecord rec;
      rec.step = step;
      rec.total = total_v;
      rec.render = lb.render;
      rec.route_term = lb.route_term;
      rec.budget_term = lb.budget_term;
      rec.depth_term = lb.depth_term;
      rec.pose_term = lb.pose_term;
      rec.hard_g = fr.hard_g;
      rec.expected_g = fr.expected_g.value();
      rec.lr = ac.lr;
      rec.temperature = opt.temperature;
      real acc = 0;
      for (size_t n = 0; n < batch.target.size(); ++n)
        acc += psnr(fr.renders[batch.context.size() + n].color,
                    batch.target[n].image);
      rec.psnr_target = batch.target.empty() ? 0 : acc / real(batch.target.size());
      on_log(rec);
    }
    if (on_checkpoint && cfg.checkpoint_interval > 0 &&
        (step + 1) % cfg.checkpoint_interval == 0 && !last)
      on_checkpoint(state, step + 1);
  }
}

TrainResult train(const SceneBatch& batch, const TrainConfig& cfg) {
  TrainResult out{ModelState::init(cfg, resolve_geometry(cfg, batch)), {}};
  train_steps(out.state, batch,
              [&](const MetricsRecord& r) { out.log.push_back(r); }, nullptr);
  return out;
}

EvalResult evaluate(ModelState& state, const SceneBatch& batch) {
  EvalResult ev;
  ForwardOptions opt;
  opt.train = state.cfg.eval_noise;
  opt.temperature = state.cfg.temp_final;
  opt.noise_seed = Rng::mix(state.cfg.seed, 0xe7a1);
  opt.render_targets = true;
  ForwardResult fr = forward(nullptr, batch, state, opt);
  ev.hard_g = fr.hard_g;
  ev.expert_fractions = fr.expert_fractions;
  for (const auto& dec : fr.decisions) ev.expert_maps.push_back(dec.selected);
  for (size_t n = 0; n < batch.target.size(); ++n) {
    const Tensor& img = fr.renders[batch.context.size() + n].color;
    ev.target_renders.push_back(img);
    ev.target_depths.push_back(fr.renders[batch.context.size() + n].depth);
    ev.psnr_per_view.push_back(psnr(img, batch.target[n].image));
    ev.ssim_per_view.push_back(ssim(img, batch.target[n].image));
  }
  if (!ev.psnr_per_view.empty()) {
    for (real v : ev.psnr_per_view) ev.psnr_mean += v;
    for (real v : ev.ssim_per_view) ev.ssim_mean += v;
    ev.psnr_mean /= real(ev.psnr_per_view.size());
    ev.ssim_mean /= real(ev.ssim_per_view.size());
  }
  return ev;
}

// ---------------------------------------------------------------------------
// Checkpointing

namespace {

void put_bytes(std::ostream& os, const void* p, size_t n) {
  os.write(reinterpret_cast<const char*>(p), std::streamsize(n));
}

template <class T>
void put_pod(std::ostream& os, T v) {
  put_bytes(os, &v, sizeof(T));
}

void put_string(std::ostream& os, const std::string& s) {
  put_pod<uint64_t>(os, s.size());
  put_bytes(os, s.data(), s.size());
}

void put_reals(std::ostream& os, const std::vector<real>& v) {
  put_pod<uint64_t>(os, v.size());
  for (real x : v) put_pod<double>(os, double(x));
}

void get_bytes(std::istream& is, void* p, size_t n) {
  is.read(reinterpret_cast<char*>(p), std::streamsize(n));
  if (!is) throw ParseError("checkpoint: truncated file");
}

template <class T>
T get_pod(std::istream& is) {
  T v;
  get_bytes(is, &v, sizeof(T));
  return v;
}

std::string get_string(std::istream& is) {
  uint64_t n = get_pod<uint64_t>(is);
  std::string s(size_t(n), '\0');
  if (n) get_bytes(is, s.data(), size_t(n));
  return s;
}

std::vector<real> get_reals(std::istream& is) {
  uint64_t n = get_pod<uint64_t>(is);
  std::vector<real> v(size_t(n), real(0));
  for (uint64_t i = 0; i < n; ++i) v[size_t(i)] = real(get_pod<double>(is));
  return v;
}

constexpr char kCkptMagic[8] = {'S', 'W', 'C', 'K', 'P', 'T', '0', '1'};

}  // namespace

std::string config_to_text(const TrainConfig& cfg);
TrainConfig config_from_text(const std::string& text);

void save_checkpoint(const ModelState& state, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ParseError("checkpoint: cannot open " + path + " for writing");
  put_bytes(os, kCkptMagic, sizeof(kCkptMagic));
  put_string(os, config_to_text(state.cfg));
  put_pod<double>(os, double(state.geom.extent));
  put_pod<double>(os, double(state.geom.depth_init));
  put_pod<int64_t>(os, state.step);
  ModelState& mut = const_cast<ModelState&>(state);
  ParamRefs params = mut.params();
  put_pod<uint64_t>(os, params.size());
  for (Param* p : params) {
    put_string(os, p->name);
    put_pod<uint32_t>(os, uint32_t(p->t.shape.size()));
    for (int d : p->t.shape) put_pod<int32_t>(os, d);
    put_reals(os, *p->t.data);
  }
  put_pod<int64_t>(os, state.adam.step);
  put_pod<uint64_t>(os, state.adam.m.size());
  for (const auto& m : state.adam.m) put_reals(os, m);
  for (const auto& v : state.adam.v) put_reals(os, v);
  if (!os) throw ParseError("checkpoint: write failed for " + path);
}

ModelState load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ParseError("checkpoint: cannot open " + path);
  char magic[8];
  get_bytes(is, magic, sizeof(magic));
  if (std::memcmp(magic, kCkptMagic, sizeof(magic)) != 0)
    throw ParseError("checkpoint: bad magic in " + path);
  TrainConfig cfg = config_from_text(get_string(is));
  SceneGeometry geom;
  geom.extent = real(get_pod<double>(is));
  geom.depth_init = real(get_pod<double>(is));
  int64_t step = get_pod<int64_t>(is);
  ModelState state = ModelState::init(cfg, geom);
  state.step = step;
  ParamRefs params = state.params();
  uint64_t n = get_pod<uint64_t>(is);
  if (n != params.size())
    throw ParseError(strformat("checkpoint: %llu blobs for %zu parameters",
                               (unsigned long long)n, params.size()));
  for (Param* p : params) {
    std::string name = get_string(is);
    if (name != p->name)
      throw ParseError("checkpoint: parameter order mismatch at " + name);
    uint32_t rank = get_pod<uint32_t>(is);
    Shape shape(size_t(rank), 0);
    for (auto& d : shape) d = get_pod<int32_t>(is);
    if (shape != p->t.shape)
      throw ParseError("checkpoint: shape mismatch for " + name);
    std::vector<real> vals = get_reals(is);
    if (vals.size() != p->t.data->size())
      throw ParseError("checkpoint: size mismatch for " + name);
    *p->t.data = std::move(vals);
  }
  state.adam.step = get_pod<int64_t>(is);
  uint64_t an = get_pod<uint64_t>(is);
  if (an != params.size())
    throw ParseError("checkpoint: optimizer state does not match parameters");
  state.adam.m.clear();
  state.adam.v.clear();
  for (uint64_t i = 0; i < an; ++i) state.adam.m.push_back(get_reals(is));
  for (uint64_t i = 0; i < an; ++i) state.adam.v.push_back(get_reals(is));
  return state;
}

}  // namespace splat
