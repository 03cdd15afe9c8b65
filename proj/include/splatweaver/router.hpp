#pragma once

#include "splatweaver/camera.hpp"
#include "splatweaver/nn.hpp"

namespace splat {

// Per-pixel expert selection for one view. Pixels are flattened row-major
// (P = H*W), experts indexed 0..M with cardinality m_e = e (0 = null).
struct RoutingDecision {
  Tensor logits;       // [P, E] raw router output
  Tensor p_soft;       // [P, E] soft path: softmax((logits+gumbel)/tau)
                       // in train mode, softmax(logits) in eval mode
  Tensor one_hot_st;   // [P, E] hard one-hot forward, p_soft gradient
  std::vector<int> selected;  // [P] argmax expert per pixel
  real temperature = 1;
  bool train_mode = false;
  int experts() const { return logits.shape[1]; }
};

// Energy-ranked supervision for one view (Eq.-8-style smoothed labels).
struct RoutingTarget {
  std::vector<int> labels;  // [P] expert index per pixel
  Tensor smoothed;          // [P, E]
  std::vector<int64_t> band_counts;  // per expert, diagnostics
};

// linear -> ReLU -> linear over the guided features.
struct PixelRouter {
  Mlp2 mlp;

  PixelRouter() = default;
  PixelRouter(const std::string& prefix, int feat_dim, int hidden, int experts,
              Rng& rng);
  // features_f: [P, D]. noise_rng non-null => train mode (Gumbel noise).
  RoutingDecision route(Tape* tape, const Tensor& features_f, real temperature,
                        Rng* noise_rng) const;
  void collect(ParamRefs& out);
};

// Cardinality experts: expert e in 1..M is two linear layers with a ReLU and
// emits e hidden Gaussians per routed pixel, each as (depth logit, 3 offset
// logits, d latent values). Expert 0 is the null expert and has no weights.
struct ExpertBank {
  int max_cardinality = 0;  // M
  int latent_dim = 0;       // d
  std::vector<Mlp2> experts;  // index e-1 for expert e

  ExpertBank() = default;
  // depth_init seeds the depth-logit bias at softplus^-1(depth_init).
  ExpertBank(const std::string& prefix, int feat_dim, int hidden, int max_card,
             int latent_dim, real depth_init, Rng& rng);
  int expert_count() const { return max_cardinality + 1; }
  void collect(ParamRefs& out);
};

// Replaces the straight-through weights with constant ones. Used by the
// finite-difference harness: the hard selection is piecewise constant in the
// logits, so its true derivative is zero and the ST surrogate is checked
// against the analytic softmax Jacobian instead.
RoutingDecision freeze_st(const RoutingDecision& dec);

// Decision with an externally forced selection (diagnostics and tests);
// constant weights, no gradients.
RoutingDecision forced_decision(const std::vector<int>& selected, int experts);

// Keeps the decision's differentiable parts (logits, soft probabilities) but
// pins the hard selection to `selected` with constant unit weights.
RoutingDecision with_selection(const RoutingDecision& dec,
                               const std::vector<int>& selected);

// Hidden Gaussians gathered over all views, expert-major then pixel order.
struct HiddenGaussianSet {
  Tensor mu;      // [G, 3] world positions
  Tensor latent;  // [G, d]
  std::vector<int> source_view;   // [G]
  std::vector<int> source_pixel;  // [G] row-major pixel index in its view
  std::vector<int> expert;        // [G]
  int count() const { return mu.data ? mu.shape[0] : 0; }
};

// Ray-anchored decode: depth = softplus(depth logit) along the source pixel's
// ray; position = ray point + tanh(offsets) * (offset_bound * depth).
struct DispatchGeometry {
  real offset_bound = real(0.02);  // world units per unit depth
};

// features_raw are the pre-guidance pixel features [P, D] per view (the
// router consumed the guided features, the experts consume these).
HiddenGaussianSet dispatch_experts(const std::vector<Tensor>& features_raw,
                                   const std::vector<RoutingDecision>& decisions,
                                   const ExpertBank& bank,
                                   const std::vector<Camera>& cameras,
                                   const DispatchGeometry& geom);

// Rank pixels by energy (desc, row-major index asc), band the top floor(rho_M
// * P) to expert M down through rho_1, remainder to the null expert, then
// smooth: y~ = (1 - eps) y + eps / E.
// rho[c-1] is the fraction for cardinality c; rho.size() experts + null.
RoutingTarget routing_targets(const Tensor& energy, const std::vector<real>& rho,
                              real eps_s);

// Summed cross-entropy -sum_p sum_e y~ log softmax(logits).
Tensor route_loss(const RoutingDecision& decision, const RoutingTarget& target);

// Squared hinge on the expected Gaussian count above eps_b * N * H * W.
// Expected count uses the soft probabilities so gradients reach the logits.
Tensor budget_loss(const std::vector<RoutingDecision>& decisions, real eps_b,
                   int64_t pixel_budget_base);

// Hard (argmax) Gaussian count across views.
int64_t hard_count(const std::vector<RoutingDecision>& decisions);
// Differentiable expected count (value of the soft count).
Tensor expected_count(const std::vector<RoutingDecision>& decisions);

real inv_softplus(real y);

}  // namespace splat
