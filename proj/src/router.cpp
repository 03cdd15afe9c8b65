#include "splatweaver/router.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace splat {

real inv_softplus(real y) {
  if (y <= 0) throw ContractError("inv_softplus: argument must be positive");
  // log(exp(y) - 1), stable for large y
  return y > real(20) ? y : std::log(std::expm1(double(y)));
}

PixelRouter::PixelRouter(const std::string& prefix, int feat_dim, int hidden,
                         int experts, Rng& rng)
    : mlp(prefix, feat_dim, hidden, experts, rng) {}

void PixelRouter::collect(ParamRefs& out) { mlp.collect(out); }

RoutingDecision PixelRouter::route(Tape* tape, const Tensor& features_f,
                                   real temperature, Rng* noise_rng) const {
  if (!(temperature > 0))
    throw ContractError(strformat("route: temperature must be positive, got %g",
                                  double(temperature)));
  if (features_f.shape.size() != 2)
    throw ShapeError("route: expected [P,D] features, got " +
                     shape_str(features_f.shape));
  RoutingDecision dec;
  dec.temperature = temperature;
  dec.train_mode = noise_rng != nullptr;
  dec.logits = mlp.forward(tape, features_f);
  int p = dec.logits.shape[0], e = dec.logits.shape[1];

  Tensor pre = dec.logits;
  if (dec.train_mode) {
    std::vector<real> noise(size_t(p) * e);
    for (auto& v : noise) v = real(noise_rng->gumbel());
    pre = scale(add(dec.logits, constant({p, e}, std::move(noise))),
                real(1) / temperature);
  }
  dec.p_soft = softmax(pre, 1);

  dec.selected.resize(size_t(p));
  std::vector<real> hard(size_t(p) * e, real(0));
  const real* pv = pre.ptr();
  for (int i = 0; i < p; ++i) {
    int arg = 0;
    for (int j = 1; j < e; ++j)
      if (pv[size_t(i) * e + j] > pv[size_t(i) * e + arg]) arg = j;
    dec.selected[size_t(i)] = arg;
    hard[size_t(i) * e + arg] = real(1);
  }
  dec.one_hot_st = st_override(dec.p_soft, std::move(hard));
  return dec;
}

RoutingDecision freeze_st(const RoutingDecision& dec) {
  RoutingDecision out = dec;
  out.one_hot_st = constant(dec.one_hot_st.shape, *dec.one_hot_st.data);
  return out;
}

RoutingDecision forced_decision(const std::vector<int>& selected, int experts) {
  int p = int(selected.size());
  RoutingDecision dec;
  dec.selected = selected;
  std::vector<real> hard(size_t(p) * experts, real(0));
  for (int i = 0; i < p; ++i) {
    if (selected[size_t(i)] < 0 || selected[size_t(i)] >= experts)
      throw ContractError("forced_decision: expert index out of range");
    hard[size_t(i) * experts + selected[size_t(i)]] = real(1);
  }
  dec.one_hot_st = constant({p, experts}, hard);
  dec.logits = zeros({p, experts});
  dec.p_soft = constant({p, experts}, std::move(hard));
  return dec;
}

RoutingDecision with_selection(const RoutingDecision& dec,
                               const std::vector<int>& selected) {
  int p = dec.logits.shape[0], e = dec.logits.shape[1];
  if (int(selected.size()) != p)
    throw ContractError("with_selection: selection size mismatch");
  RoutingDecision out = dec;
  out.selected = selected;
  std::vector<real> hard(size_t(p) * e, real(0));
  for (int i = 0; i < p; ++i) hard[size_t(i) * e + selected[size_t(i)]] = real(1);
  out.one_hot_st = constant({p, e}, std::move(hard));
  return out;
}

ExpertBank::ExpertBank(const std::string& prefix, int feat_dim, int hidden,
                       int max_card, int latent_dim, real depth_init, Rng& rng)
    : max_cardinality(max_card), latent_dim(latent_dim) {
  real depth_bias = inv_softplus(depth_init);
  for (int e = 1; e <= max_card; ++e) {
    int out = e * (4 + latent_dim);
    experts.emplace_back(prefix + ".e" + std::to_string(e), feat_dim, hidden,
                         out, rng);
    // depth logits start at softplus^-1(depth_init)
    auto& bias = *experts.back().l2.b.t.data;
    for (int g = 0; g < e; ++g) bias[size_t(g * (4 + latent_dim))] = depth_bias;
  }
}

void ExpertBank::collect(ParamRefs& out) {
  for (auto& m : experts) m.collect(out);
}

HiddenGaussianSet dispatch_experts(const std::vector<Tensor>& features_raw,
                                   const std::vector<RoutingDecision>& decisions,
                                   const ExpertBank& bank,
                                   const std::vector<Camera>& cameras,
                                   const DispatchGeometry& geom) {
  size_t n_views = features_raw.size();
  if (decisions.size() != n_views)
    throw ContractError("dispatch_experts: one decision per view required");
  if (cameras.size() != n_views)
    throw ContractError("dispatch_experts: missing camera for a view");
  int d = bank.latent_dim;

  // flatten views: features, straight-through weights, ray geometry
  std::vector<Tensor> feat_parts, st_parts;
  std::vector<real> origins, dirs;
  std::vector<int> view_of, pixel_of;
  for (size_t n = 0; n < n_views; ++n) {
    const Tensor& f = features_raw[n];
    if (f.shape.size() != 2)
      throw ShapeError("dispatch_experts: expected [P,D] features, got " +
                       shape_str(f.shape));
    int p = f.shape[0];
    const Camera& cam = cameras[n];
    cam.validate();
    if (p != cam.width * cam.height)
      throw ContractError(strformat(
          "dispatch_experts: view %zu has %d pixels but camera is %dx%d", n, p,
          cam.width, cam.height));
    if (int(decisions[n].selected.size()) != p)
      throw ContractError("dispatch_experts: decision and features misaligned");
    feat_parts.push_back(f);
    st_parts.push_back(decisions[n].one_hot_st);
    Vec3 c = cam.center();
    for (int i = 0; i < p; ++i) {
      int py = i / cam.width, px = i % cam.width;
      Vec3 dir = cam.ray_dir(real(px) + real(0.5), real(py) + real(0.5));
      for (int k = 0; k < 3; ++k) {
        origins.push_back(c[size_t(k)]);
        dirs.push_back(dir[size_t(k)]);
      }
      view_of.push_back(int(n));
      pixel_of.push_back(i);
    }
  }
  Tensor feats_all = n_views == 1 ? feat_parts[0] : concat(feat_parts, 0);
  Tensor st_all = n_views == 1 ? st_parts[0] : concat(st_parts, 0);
  int total_pixels = feats_all.shape[0];
  Tensor origin_t = constant({total_pixels, 3}, std::move(origins));
  Tensor dir_t = constant({total_pixels, 3}, std::move(dirs));

  HiddenGaussianSet out;
  std::vector<Tensor> mu_parts, latent_parts;
  for (int e = 1; e <= bank.max_cardinality; ++e) {
    std::vector<int> idx;
    {
      int base = 0;
      for (size_t n = 0; n < n_views; ++n) {
        const auto& sel = decisions[n].selected;
        for (size_t i = 0; i < sel.size(); ++i)
          if (sel[i] == e) idx.push_back(base + int(i));
        base += int(sel.size());
      }
    }
    if (idx.empty()) continue;
    int pe = int(idx.size());
    Tape* tape = feats_all.tracked() ? feats_all.tape
                                     : (st_all.tracked() ? st_all.tape : nullptr);
    Tensor feats = gather_rows(feats_all, idx);
    Tensor raw = bank.experts[size_t(e - 1)].forward(tape, feats);

    // straight-through weight of the selected expert: exactly 1 forward
    Tensor stw = gather_cols(gather_rows(st_all, idx), std::vector<int>(size_t(pe), e));
    int width = e * (4 + d);
    Tensor scaled = mul(raw, broadcast(reshape(stw, {pe, 1}), {pe, width}));
    Tensor r3 = reshape(scaled, {pe, e, 4 + d});

    Tensor depth = softplus(slice(r3, 2, 0, 1));          // [pe, e, 1]
    Tensor offset = tanh(slice(r3, 2, 1, 3));             // [pe, e, 3]
    Tensor latent = reshape(slice(r3, 2, 4, d), {pe * e, d});

    Tensor org = broadcast(reshape(gather_rows(origin_t, idx), {pe, 1, 3}),
                           {pe, e, 3});
    Tensor dirn = broadcast(reshape(gather_rows(dir_t, idx), {pe, 1, 3}),
                            {pe, e, 3});
    Tensor depth3 = broadcast(depth, {pe, e, 3});
    Tensor pos = add(org, mul(dirn, depth3));
    pos = add(pos, mul(offset, scale(depth3, geom.offset_bound)));
    mu_parts.push_back(reshape(pos, {pe * e, 3}));
    latent_parts.push_back(latent);
    for (int i : idx)
      for (int g = 0; g < e; ++g) {
        out.source_view.push_back(view_of[size_t(i)]);
        out.source_pixel.push_back(pixel_of[size_t(i)]);
        out.expert.push_back(e);
      }
  }
  if (mu_parts.empty()) {
    out.mu = constant({0, 3}, {});
    out.latent = constant({0, d}, {});
    return out;
  }
  out.mu = mu_parts.size() == 1 ? mu_parts[0] : concat(mu_parts, 0);
  out.latent = latent_parts.size() == 1 ? latent_parts[0] : concat(latent_parts, 0);
  return out;
}

RoutingTarget routing_targets(const Tensor& energy, const std::vector<real>& rho,
                              real eps_s) {
  if (energy.shape.size() != 2)
    throw ShapeError("routing_targets: expected [H,W] energy map, got " +
                     shape_str(energy.shape));
  if (eps_s < 0 || eps_s >= 1)
    throw ContractError(strformat("routing_targets: eps_s must be in [0,1), got %g",
                                  double(eps_s)));
  real rho_sum = 0;
  for (real r : rho) rho_sum += r;
  if (rho_sum > real(1) + real(1e-12))
    throw ContractError(strformat(
        "routing_targets: fractions sum to %g, must not exceed 1", double(rho_sum)));
  int64_t p = energy.numel();
  int e_count = int(rho.size()) + 1;

  std::vector<int> order(static_cast<size_t>(p));
  std::iota(order.begin(), order.end(), 0);
  const real* ev = energy.ptr();
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (ev[a] != ev[b]) return ev[a] > ev[b];
    return a < b;
  });

  RoutingTarget tgt;
  tgt.labels.assign(size_t(p), 0);
  tgt.band_counts.assign(size_t(e_count), 0);
  int64_t cursor = 0;
  for (int card = int(rho.size()); card >= 1; --card) {
    int64_t band = int64_t(std::floor(double(rho[size_t(card - 1)]) * double(p)));
    for (int64_t i = 0; i < band && cursor < p; ++i, ++cursor)
      tgt.labels[size_t(order[size_t(cursor)])] = card;
    tgt.band_counts[size_t(card)] = band;
  }
  tgt.band_counts[0] = p - cursor;

  std::vector<real> sm(size_t(p) * e_count, eps_s / real(e_count));
  for (int64_t i = 0; i < p; ++i)
    sm[size_t(i) * e_count + tgt.labels[size_t(i)]] += real(1) - eps_s;
  tgt.smoothed = constant({int(p), e_count}, std::move(sm));
  return tgt;
}

Tensor route_loss(const RoutingDecision& decision, const RoutingTarget& target) {
  if (decision.logits.shape != target.smoothed.shape)
    throw ShapeError("route_loss: decision " + shape_str(decision.logits.shape) +
                     " vs target " + shape_str(target.smoothed.shape));
  return neg(sum(mul(target.smoothed, log_softmax(decision.logits, 1))));
}

Tensor expected_count(const std::vector<RoutingDecision>& decisions) {
  Tensor total;
  for (const auto& dec : decisions) {
    int e = dec.experts();
    std::vector<real> card(static_cast<size_t>(e));
    for (int i = 0; i < e; ++i) card[size_t(i)] = real(i);
    Tensor contrib = sum(mul(dec.p_soft, constant({e}, std::move(card))));
    total = total.data ? add(total, contrib) : contrib;
  }
  return total;
}

Tensor budget_loss(const std::vector<RoutingDecision>& decisions, real eps_b,
                   int64_t pixel_budget_base) {
  if (!(eps_b > 0))
    throw ContractError(strformat("budget_loss: eps_b must be positive, got %g",
                                  double(eps_b)));
  Tensor g = expected_count(decisions);
  real budget = eps_b * real(pixel_budget_base);
  Tensor over = relu(add_scalar(g, -budget));
  return mul(over, over);
}

int64_t hard_count(const std::vector<RoutingDecision>& decisions) {
  int64_t g = 0;
  for (const auto& dec : decisions)
    for (int s : dec.selected) g += s;
  return g;
}

}  // namespace splat
