#pragma once

#include "splatweaver/render.hpp"
#include "splatweaver/router.hpp"

namespace splat {

// Hidden Gaussians with their projected source-pixel features attached:
// h = concat(latent, proj(F_n(i,j))).
struct LinkedSet {
  Tensor mu;  // [G,3]
  Tensor h;   // [G, d + d_p]
  const HiddenGaussianSet* hidden = nullptr;  // source bookkeeping
};

// Gaussians from the same pixel share one projection evaluation.
LinkedSet link_pixel_features(const HiddenGaussianSet& hidden,
                              const std::vector<Tensor>& features_raw,
                              const Linear& proj);

struct NeighborIndex {
  int k_eff = 0;               // min(k, G-1)
  std::vector<int> neighbors;  // [G * k_eff], (distance, index)-ordered
  std::vector<int> cluster_of;
  std::vector<real> centroids;  // [n_clusters * 3]

  std::vector<int> list_of(int g) const {
    return {neighbors.begin() + int64_t(g) * k_eff,
            neighbors.begin() + int64_t(g + 1) * k_eff};
  }
};

// Exact k-nearest neighbors via clustering + local matching: 10 Lloyd
// iterations of seeded k-means, then per query an exact scan over its own
// cluster plus every cluster B with dist(q, c_B) - radius_B <= current kth
// distance (triangle inequality, so the true kNN always survive).
NeighborIndex knn_coarse_to_fine(const std::vector<real>& positions, int k,
                                 int n_clusters, uint64_t seed);

// Brute-force reference with the same (distance, index) tie-break.
std::vector<int> knn_brute_force(const std::vector<real>& positions, int k);

inline int default_cluster_count(int g) {
  return std::max(1, int(std::floor(std::sqrt(double(g)))));
}

// Subtraction vector attention over the k neighbors (per-channel weights, or
// a scalar weight per neighbor in scalar mode):
//   Attn_gk = Softmax_k(gamma(phi_q(H_g) - phi_k(H_k) + delta(mu_g - mu_k)))
//   H^_g    = sum_k Attn_gk (.) (phi_v(H_k) + delta(mu_g - mu_k))
struct Aggregator {
  int attn_dim = 0;  // d_h
  bool scalar_attention = false;
  Linear phi_q, phi_k, phi_v;  // (d+d_p) -> d_h
  Mlp2 delta;                  // 3 -> d_h -> d_h
  Mlp2 gamma;                  // d_h -> d_h -> d_h (or -> 1 in scalar mode)

  Aggregator() = default;
  Aggregator(const std::string& prefix, int in_dim, int attn_dim,
             bool scalar_attention, Rng& rng);
  // Returns [G, d_h]; zero rows when there are no neighbors (G < 2).
  Tensor forward(const LinkedSet& linked, const NeighborIndex& index) const;
  // Attention weights [G, k_eff, d_h or 1] for tests/diagnostics.
  Tensor attention(const LinkedSet& linked, const NeighborIndex& index) const;
  void collect(ParamRefs& out);
};

// Decodes final primitive attributes from the residual head input
// H^_g + H_g (with a linear adapter when d+d_p != d_h):
//   s = exp(clamp(raw, -8, 3)) * scale_unit, q = normalize(raw + (1,0,0,0)),
//   alpha = sigmoid(raw), c = sigmoid(raw) for the DC band, higher SH raw.
struct ParamHead {
  int attn_dim = 0;
  int sh_degree = 0;
  real scale_unit = real(0.1);  // world units at raw scale 0... times e^clamp
  bool use_adapter = false;
  Linear adapter;  // (d+d_p) -> d_h
  Mlp2 head;

  static constexpr real kLogScaleMin = real(-8);
  static constexpr real kLogScaleMax = real(3);

  ParamHead() = default;
  ParamHead(const std::string& prefix, int in_dim, int attn_dim, int hidden,
            int sh_degree, real scale_unit, Rng& rng);
  PrimitiveBatch forward(const LinkedSet& linked, const Tensor& refined) const;
  void collect(ParamRefs& out);
};

}  // namespace splat
