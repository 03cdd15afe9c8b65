#include "splatweaver/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace splat {

LinkedSet link_pixel_features(const HiddenGaussianSet& hidden,
                              const std::vector<Tensor>& features_raw,
                              const Linear& proj) {
  int g = hidden.count();
  LinkedSet out;
  out.hidden = &hidden;
  out.mu = hidden.mu;
  if (g == 0) {
    out.h = constant({0, hidden.latent.shape[1] + proj.out_dim()}, {});
    return out;
  }
  Tape* tape = hidden.mu.tracked() ? hidden.mu.tape : nullptr;

  // unique (view, pixel) sources share one projection evaluation
  std::map<std::pair<int, int>, int> uniq;
  std::vector<int> gauss_to_uniq(static_cast<size_t>(g));
  std::vector<std::pair<int, int>> uniq_src;
  for (int i = 0; i < g; ++i) {
    auto key = std::make_pair(hidden.source_view[size_t(i)],
                              hidden.source_pixel[size_t(i)]);
    auto [it, inserted] = uniq.emplace(key, int(uniq_src.size()));
    if (inserted) uniq_src.push_back(key);
    gauss_to_uniq[size_t(i)] = it->second;
  }
  // gather unique pixel features view by view, then stitch in unique order
  std::vector<Tensor> parts;
  std::vector<int> part_row(uniq_src.size());
  {
    std::vector<std::vector<int>> per_view(features_raw.size());
    std::vector<std::pair<int, int>> pos(uniq_src.size());
    for (size_t u = 0; u < uniq_src.size(); ++u) {
      auto [view, pix] = uniq_src[u];
      if (view < 0 || view >= int(features_raw.size()) || pix < 0 ||
          pix >= features_raw[size_t(view)].shape[0])
        throw ContractError(strformat(
            "link_pixel_features: source pixel (view %d, pixel %d) out of bounds",
            view, pix));
      pos[u] = {view, int(per_view[size_t(view)].size())};
      per_view[size_t(view)].push_back(pix);
    }
    std::vector<int> view_base(features_raw.size(), 0);
    int base = 0;
    for (size_t n = 0; n < features_raw.size(); ++n) {
      view_base[n] = base;
      if (!per_view[n].empty()) {
        parts.push_back(gather_rows(features_raw[n], per_view[n]));
        base += int(per_view[n].size());
      }
    }
    for (size_t u = 0; u < uniq_src.size(); ++u)
      part_row[u] = view_base[size_t(pos[u].first)] + pos[u].second;
  }
  Tensor uniq_feats = parts.size() == 1 ? parts[0] : concat(parts, 0);
  // restore unique order (concat was view-major, which already matches
  // insertion order per view; part_row maps unique id -> stitched row)
  Tensor uniq_ordered = gather_rows(uniq_feats, part_row);
  Tensor uniq_proj = proj.forward(tape, uniq_ordered);
  Tensor fp = gather_rows(uniq_proj, gauss_to_uniq);
  out.h = concat({hidden.latent, fp}, 1);
  return out;
}

// ---------------------------------------------------------------------------
// Coarse-to-fine exact kNN

namespace {

inline real dist2(const real* a, const real* b) {
  real dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

// k smallest (distance, index) out of candidate ids, excluding `self`.
void select_k(const std::vector<real>& pos, int self,
              const std::vector<int>& cands, int k,
              std::vector<std::pair<real, int>>& heap_out) {
  heap_out.clear();
  const real* q = pos.data() + int64_t(self) * 3;
  for (int c : cands) {
    if (c == self) continue;
    real d2 = dist2(q, pos.data() + int64_t(c) * 3);
    heap_out.emplace_back(d2, c);
  }
  int kk = std::min<int>(k, int(heap_out.size()));
  std::partial_sort(heap_out.begin(), heap_out.begin() + kk, heap_out.end());
  heap_out.resize(size_t(kk));
}

}  // namespace

std::vector<int> knn_brute_force(const std::vector<real>& positions, int k) {
  int g = int(positions.size() / 3);
  int k_eff = std::min(k, g - 1);
  std::vector<int> out;
  if (k_eff <= 0) return out;
  out.reserve(size_t(g) * k_eff);
  std::vector<std::pair<real, int>> d(static_cast<size_t>(g - 1));
  for (int i = 0; i < g; ++i) {
    d.clear();
    const real* q = positions.data() + int64_t(i) * 3;
    for (int j = 0; j < g; ++j) {
      if (j == i) continue;
      d.emplace_back(dist2(q, positions.data() + int64_t(j) * 3), j);
    }
    std::partial_sort(d.begin(), d.begin() + k_eff, d.end());
    for (int n = 0; n < k_eff; ++n) out.push_back(d[size_t(n)].second);
  }
  return out;
}

NeighborIndex knn_coarse_to_fine(const std::vector<real>& positions, int k,
                                 int n_clusters, uint64_t seed) {
  if (positions.size() % 3 != 0)
    throw ShapeError("knn_coarse_to_fine: positions must be G*3 values");
  int g = int(positions.size() / 3);
  if (k < 1) throw ContractError("knn_coarse_to_fine: k must be >= 1");
  NeighborIndex idx;
  idx.k_eff = std::max(0, std::min(k, g - 1));
  if (g == 0) return idx;
  idx.cluster_of.assign(size_t(g), 0);
  if (idx.k_eff == 0) return idx;  // single Gaussian: empty neighbor list

  n_clusters = std::max(1, std::min(n_clusters, g));
  // seeded init: sample distinct member indices
  std::vector<int> perm(static_cast<size_t>(g));
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(seed);
  for (int i = 0; i < n_clusters; ++i) {
    int j = i + rng.uniform_int(g - i);
    std::swap(perm[size_t(i)], perm[size_t(j)]);
  }
  idx.centroids.assign(size_t(n_clusters) * 3, 0);
  for (int c = 0; c < n_clusters; ++c)
    for (int a = 0; a < 3; ++a)
      idx.centroids[size_t(c) * 3 + a] = positions[size_t(perm[size_t(c)]) * 3 + a];

  for (int iter = 0; iter < 10; ++iter) {
    // assign
    for (int i = 0; i < g; ++i) {
      int best = 0;
      real bd = dist2(positions.data() + int64_t(i) * 3, idx.centroids.data());
      for (int c = 1; c < n_clusters; ++c) {
        real d2 = dist2(positions.data() + int64_t(i) * 3,
                        idx.centroids.data() + int64_t(c) * 3);
        if (d2 < bd) {
          bd = d2;
          best = c;
        }
      }
      idx.cluster_of[size_t(i)] = best;
    }
    // update; empty clusters keep their centroid
    std::vector<real> sums(size_t(n_clusters) * 3, 0);
    std::vector<int> counts(size_t(n_clusters), 0);
    for (int i = 0; i < g; ++i) {
      int c = idx.cluster_of[size_t(i)];
      for (int a = 0; a < 3; ++a)
        sums[size_t(c) * 3 + a] += positions[size_t(i) * 3 + a];
      counts[size_t(c)] += 1;
    }
    for (int c = 0; c < n_clusters; ++c)
      if (counts[size_t(c)] > 0)
        for (int a = 0; a < 3; ++a)
          idx.centroids[size_t(c) * 3 + a] =
              sums[size_t(c) * 3 + a] / real(counts[size_t(c)]);
  }
  // final assignment against the last centroids
  std::vector<std::vector<int>> members(static_cast<size_t>(n_clusters));
  for (int i = 0; i < g; ++i) {
    int best = 0;
    real bd = dist2(positions.data() + int64_t(i) * 3, idx.centroids.data());
    for (int c = 1; c < n_clusters; ++c) {
      real d2 = dist2(positions.data() + int64_t(i) * 3,
                      idx.centroids.data() + int64_t(c) * 3);
      if (d2 < bd) {
        bd = d2;
        best = c;
      }
    }
    idx.cluster_of[size_t(i)] = best;
    members[size_t(best)].push_back(i);
  }
  // cluster radii (max member distance to centroid)
  std::vector<real> radius(size_t(n_clusters), 0);
  for (int c = 0; c < n_clusters; ++c)
    for (int i : members[size_t(c)])
      radius[size_t(c)] = std::max(
          radius[size_t(c)], std::sqrt(dist2(positions.data() + int64_t(i) * 3,
                                             idx.centroids.data() + int64_t(c) * 3)));

  idx.neighbors.assign(size_t(g) * idx.k_eff, -1);
  std::vector<std::pair<real, int>> best;
  std::vector<int> cands;
  for (int i = 0; i < g; ++i) {
    int own = idx.cluster_of[size_t(i)];
    const real* q = positions.data() + int64_t(i) * 3;
    select_k(positions, i, members[size_t(own)], idx.k_eff, best);
    real dk = best.size() >= size_t(idx.k_eff)
                  ? std::sqrt(best.back().first)
                  : std::numeric_limits<real>::infinity();
    cands.assign(members[size_t(own)].begin(), members[size_t(own)].end());
    bool widened = false;
    for (int c = 0; c < n_clusters; ++c) {
      if (c == own) continue;
      real dc = std::sqrt(dist2(q, idx.centroids.data() + int64_t(c) * 3));
      // triangle inequality: any member closer than dk must satisfy this
      if (dc - radius[size_t(c)] <= dk) {
        cands.insert(cands.end(), members[size_t(c)].begin(),
                     members[size_t(c)].end());
        widened = true;
      }
    }
    if (widened) select_k(positions, i, cands, idx.k_eff, best);
    // canonical order: distance asc, then index asc (ties rare but defined)
    std::stable_sort(best.begin(), best.end());
    for (int n = 0; n < idx.k_eff; ++n)
      idx.neighbors[size_t(i) * idx.k_eff + n] = best[size_t(n)].second;
  }
  return idx;
}

// ---------------------------------------------------------------------------
// Attention aggregation

Aggregator::Aggregator(const std::string& prefix, int in_dim, int attn_dim,
                       bool scalar_attention, Rng& rng)
    : attn_dim(attn_dim),
      scalar_attention(scalar_attention),
      phi_q(prefix + ".phi_q", in_dim, attn_dim, rng),
      phi_k(prefix + ".phi_k", in_dim, attn_dim, rng),
      phi_v(prefix + ".phi_v", in_dim, attn_dim, rng),
      delta(prefix + ".delta", 3, attn_dim, attn_dim, rng),
      gamma(prefix + ".gamma", attn_dim, attn_dim,
            scalar_attention ? 1 : attn_dim, rng) {}

void Aggregator::collect(ParamRefs& out) {
  phi_q.collect(out);
  phi_k.collect(out);
  phi_v.collect(out);
  delta.collect(out);
  gamma.collect(out);
}

namespace {
struct AttnParts {
  Tensor attn;   // [G, k, d_h or 1]
  Tensor value;  // [G*k, d_h]
  int g = 0, k = 0;
};

AttnParts attention_parts(const Aggregator& ag, const LinkedSet& linked,
                          const NeighborIndex& index) {
  AttnParts out;
  int g = linked.mu.shape[0];
  int k = index.k_eff;
  out.g = g;
  out.k = k;
  if (g == 0 || k == 0) return out;
  Tape* tape = linked.h.tracked() ? linked.h.tape
                                  : (linked.mu.tracked() ? linked.mu.tape : nullptr);
  std::vector<int> self_idx(size_t(g) * k), nbr_idx(index.neighbors.begin(),
                                                    index.neighbors.end());
  for (int i = 0; i < g; ++i)
    for (int n = 0; n < k; ++n) self_idx[size_t(i) * k + n] = i;

  Tensor q = ag.phi_q.forward(tape, linked.h);
  Tensor kk = ag.phi_k.forward(tape, linked.h);
  Tensor vv = ag.phi_v.forward(tape, linked.h);
  Tensor relpos = sub(gather_rows(linked.mu, self_idx),
                      gather_rows(linked.mu, nbr_idx));
  Tensor dpos = ag.delta.forward(tape, relpos);  // [G*k, d_h]
  Tensor pre = add(sub(gather_rows(q, self_idx), gather_rows(kk, nbr_idx)), dpos);
  Tensor logits = ag.gamma.forward(tape, pre);  // [G*k, d_h or 1]
  int ch = ag.scalar_attention ? 1 : ag.attn_dim;
  out.attn = softmax(reshape(logits, {g, k, ch}), 1);
  out.value = add(gather_rows(vv, nbr_idx), dpos);
  return out;
}
}  // namespace

Tensor Aggregator::attention(const LinkedSet& linked,
                             const NeighborIndex& index) const {
  AttnParts parts = attention_parts(*this, linked, index);
  if (!parts.attn.data) {
    return constant({parts.g, 0, scalar_attention ? 1 : attn_dim}, {});
  }
  return parts.attn;
}

Tensor Aggregator::forward(const LinkedSet& linked,
                           const NeighborIndex& index) const {
  int g = linked.mu.shape[0];
  if (g == 0) return constant({0, attn_dim}, {});
  if (index.k_eff == 0) return zeros({g, attn_dim});
  AttnParts parts = attention_parts(*this, linked, index);
  Tensor attn = parts.attn;
  if (scalar_attention)
    attn = broadcast(attn, {parts.g, parts.k, attn_dim});
  Tensor weighted = mul(attn, reshape(parts.value, {parts.g, parts.k, attn_dim}));
  return sum_axis(weighted, 1);
}

// ---------------------------------------------------------------------------
// Parameter head

ParamHead::ParamHead(const std::string& prefix, int in_dim, int attn_dim,
                     int hidden, int sh_degree, real scale_unit, Rng& rng)
    : attn_dim(attn_dim),
      sh_degree(sh_degree),
      scale_unit(scale_unit),
      use_adapter(in_dim != attn_dim),
      head(prefix + ".mlp", attn_dim, hidden,
           3 + 4 + 1 + 3 * (sh_degree + 1) * (sh_degree + 1), rng) {
  if (use_adapter) {
    Rng r2(rng.next_u64());
    adapter = Linear(prefix + ".adapter", in_dim, attn_dim, r2);
  }
}

void ParamHead::collect(ParamRefs& out) {
  if (use_adapter) adapter.collect(out);
  head.collect(out);
}

PrimitiveBatch ParamHead::forward(const LinkedSet& linked,
                                  const Tensor& refined) const {
  int g = linked.mu.shape[0];
  int cdim = 3 * (sh_degree + 1) * (sh_degree + 1);
  PrimitiveBatch out;
  out.sh_degree = sh_degree;
  if (g == 0) {
    out.mu = constant({0, 3}, {});
    out.scale = constant({0, 3}, {});
    out.quat = constant({0, 4}, {});
    out.alpha = constant({0}, {});
    out.color = constant({0, cdim}, {});
    return out;
  }
  Tape* tape = linked.h.tracked() ? linked.h.tape : nullptr;
  Tensor base = use_adapter ? adapter.forward(tape, linked.h) : linked.h;
  Tensor raw = head.forward(tape, add(base, refined));
  for (int64_t i = 0; i < raw.numel(); ++i)
    if (!std::isfinite(double(raw.ptr()[i])))
      throw ContractError(strformat(
          "predict_parameters: non-finite head output for Gaussian %lld",
          (long long)(i / raw.shape[1])));

  out.mu = linked.mu;
  out.scale = scale(exp(clamp(slice(raw, 1, 0, 3), kLogScaleMin, kLogScaleMax)),
                    scale_unit);
  Tensor qraw = slice(raw, 1, 3, 4);
  std::vector<real> qbias(size_t(g) * 4, real(0));
  for (int i = 0; i < g; ++i) qbias[size_t(i) * 4] = real(1);
  out.quat = l2_normalize(add(qraw, constant({g, 4}, std::move(qbias))), 1);
  // sigmoid saturates to exactly 0/1 in double beyond |x| ~ 37; the clamp
  // keeps opacity strictly inside (0,1) for arbitrary weights
  out.alpha = reshape(sigmoid(clamp(slice(raw, 1, 7, 1), real(-36), real(36))), {g});
  Tensor dc = sigmoid(slice(raw, 1, 8, 3));
  out.color = cdim == 3 ? dc : concat({dc, slice(raw, 1, 11, cdim - 3)}, 1);
  return out;
}

}  // namespace splat
