#pragma once

#include <array>
#include <vector>

#include "splatweaver/camera.hpp"
#include "splatweaver/ops.hpp"

namespace splat {

// Renderable primitive, plain form (export, scene generation, tests).
struct GaussianPrimitive {
  Vec3 mu{0, 0, 0};
  Vec3 s{1, 1, 1};                   // positive scales
  std::array<real, 4> q{1, 0, 0, 0};  // unit quaternion, (w,x,y,z)
  real alpha = real(0.5);
  std::vector<real> c{real(0.5), real(0.5), real(0.5)};  // 3*(k_sh+1)^2
};

// Batched tensor form consumed by the renderer (possibly tracked on a tape).
struct PrimitiveBatch {
  Tensor mu;     // [G,3]
  Tensor scale;  // [G,3]
  Tensor quat;   // [G,4]
  Tensor alpha;  // [G]
  Tensor color;  // [G, 3*(k_sh+1)^2]
  int sh_degree = 0;

  int count() const { return mu.data ? mu.shape[0] : 0; }
};

PrimitiveBatch to_batch(const std::vector<GaussianPrimitive>& prims, int sh_degree);
std::vector<GaussianPrimitive> from_batch(const PrimitiveBatch& batch);

// Compositing constants shared by the tiled renderer, its backward pass, and
// the reference oracle. A splat contributes to a pixel iff its Gaussian
// weight w = exp(power) satisfies power <= 0 and w >= kMinWeight; the 99%
// ellipse radius used for culling and tile binning covers exactly that set.
constexpr int kTileSize = 16;
constexpr real kChi99 = real(9.22);  // >= -2 ln(0.01), slightly conservative
constexpr real kMinWeight = real(0.01);
constexpr real kAlphaClamp = real(0.995);
constexpr real kEarlyOutT = real(1e-4);
constexpr real kCovDilation = real(0.3);
constexpr real kDepthEps = real(1e-6);

// Screen-space splats for one camera. Tensors are differentiable; the
// detached arrays drive culling and tile binning only.
struct ProjectedSplats {
  Tensor u, v;                        // [G] pixel coordinates
  Tensor conic_a, conic_b, conic_c;   // [G] inverse dilated 2D covariance
  Tensor depth;                       // [G] camera-space z
  Tensor alpha;                       // [G]
  Tensor rgb;                         // [G,3] view-evaluated color
  std::vector<real> radius;           // [G] 99% ellipse radius, pixels
  std::vector<uint8_t> culled;        // [G]
};

// EWA projection: Sigma3D = R(q) diag(s^2) R(q)^T mapped through the
// world-to-camera rotation and the perspective Jacobian, plus kCovDilation*I.
// Built from autodiff ops, so gradients to mu/s/q/color are exact. The tape
// is deduced from the batch tensors.
ProjectedSplats project(const PrimitiveBatch& prims, const Camera& cam);

// Single-primitive convenience (no gradients).
struct ScreenGaussian {
  real u = 0, v = 0;
  real cov[3] = {0, 0, 0};  // dilated 2D covariance (a, b, c)
  real depth = 0;
  bool culled = false;
};
ScreenGaussian project_one(const GaussianPrimitive& prim, const Camera& cam);

struct RenderOutput {
  Tensor color;  // [H,W,3], composited over the background
  Tensor alpha;  // [H,W]
  Tensor depth;  // [H,W] alpha-weighted expected depth
  std::vector<int> splat_count;  // per pixel, diagnostic
};

// Tile-based front-to-back compositing, differentiable w.r.t. every splat
// field. Deterministic for any thread count: tiles own their pixels and
// per-tile gradient partials merge in tile order.
RenderOutput rasterize(const PrimitiveBatch& prims, const Camera& cam,
                       const Vec3& background);

// Reference oracle: per-pixel loop over depth-sorted splats, no tiling.
// Bit-identical to rasterize() in 64-bit mode by construction.
RenderOutput rasterize_oracle(const PrimitiveBatch& prims, const Camera& cam,
                              const Vec3& background);

}  // namespace splat
