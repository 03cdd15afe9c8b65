#include "splatweaver/scenegen.hpp"

#include <cmath>

namespace splat {

namespace {

std::array<real, 4> random_quat(Rng& rng) {
  std::array<real, 4> q;
  real n2 = 0;
  do {
    n2 = 0;
    for (auto& v : q) {
      v = real(rng.normal());
      n2 += v * v;
    }
  } while (n2 < real(1e-8));
  real n = std::sqrt(n2);
  for (auto& v : q) v /= n;
  return q;
}

std::vector<GaussianPrimitive> blobs_primitives(const SceneSpec& spec, Rng& rng) {
  std::vector<GaussianPrimitive> prims;
  for (int i = 0; i < spec.gaussians; ++i) {
    GaussianPrimitive p;
    for (auto& v : p.mu) v = real(rng.normal() * 0.55);
    for (auto& v : p.s) v = real(rng.uniform(0.10, 0.38));
    p.q = random_quat(rng);
    p.alpha = real(rng.uniform(0.55, 0.95));
    p.c = {real(rng.uniform(0.15, 0.95)), real(rng.uniform(0.15, 0.95)),
           real(rng.uniform(0.15, 0.95))};
    prims.push_back(p);
  }
  return prims;
}

std::vector<GaussianPrimitive> split_wall_primitives(Rng& rng) {
  std::vector<GaussianPrimitive> prims;
  // smooth left half: coarse grid, one color
  for (int iy = 0; iy < 10; ++iy) {
    for (int ix = 0; ix < 5; ++ix) {
      GaussianPrimitive p;
      p.mu = {real(-1.45 + 0.31 * ix), real(-1.45 + 0.32 * iy), 0};
      p.s = {real(0.24), real(0.24), real(0.012)};
      p.alpha = real(0.94);
      p.c = {real(0.55), real(0.52), real(0.50)};
      prims.push_back(p);
    }
  }
  // textured right half: fine checkered grid with jitter
  for (int iy = 0; iy < 26; ++iy) {
    for (int ix = 0; ix < 13; ++ix) {
      GaussianPrimitive p;
      p.mu = {real(0.08 + 0.115 * ix + rng.uniform(-0.012, 0.012)),
              real(-1.45 + 0.115 * iy + rng.uniform(-0.012, 0.012)), 0};
      p.s = {real(0.055), real(0.055), real(0.012)};
      p.alpha = real(0.94);
      bool odd = (ix + iy) % 2 != 0;
      real jit = real(rng.uniform(-0.08, 0.08));
      p.c = odd ? std::vector<real>{real(0.88) + jit, real(0.80), real(0.18)}
                : std::vector<real>{real(0.14), real(0.22), real(0.72) - jit};
      prims.push_back(p);
    }
  }
  return prims;
}

std::vector<GaussianPrimitive> checker_room_primitives(Rng& rng) {
  std::vector<GaussianPrimitive> prims;
  auto wall = [&](Vec3 origin, Vec3 du, Vec3 dv, Vec3 thin,
                  std::vector<real> ca, std::vector<real> cb, int nu, int nv) {
    for (int iu = 0; iu < nu; ++iu) {
      for (int iv = 0; iv < nv; ++iv) {
        GaussianPrimitive p;
        real fu = (real(iu) + real(0.5)) / real(nu);
        real fv = (real(iv) + real(0.5)) / real(nv);
        p.mu = vadd(origin, vadd(vscale(du, fu), vscale(dv, fv)));
        real su = vnorm(du) / real(nu) * real(0.62);
        real sv = vnorm(dv) / real(nv) * real(0.62);
        Vec3 s3 = vadd(vadd(vscale(vnormalize(du), su), vscale(vnormalize(dv), sv)),
                       vscale(vnormalize(thin), real(0.012)));
        p.s = {std::fabs(s3[0]) + real(0.012), std::fabs(s3[1]) + real(0.012),
               std::fabs(s3[2]) + real(0.012)};
        p.alpha = real(0.92);
        p.c = (iu + iv) % 2 ? ca : cb;
        p.c[0] += real(rng.uniform(-0.04, 0.04));
        prims.push_back(p);
      }
    }
  };
  // back wall (z = 2), floor (y = -2), ceiling (y = 2), left/right (x = +-2)
  wall({-2, -2, 2}, {4, 0, 0}, {0, 4, 0}, {0, 0, 1}, {real(0.8), real(0.3), real(0.25)},
       {real(0.85), real(0.82), real(0.75)}, 12, 12);
  wall({-2, -2, -2}, {4, 0, 0}, {0, 0, 4}, {0, 1, 0}, {real(0.25), real(0.55), real(0.3)},
       {real(0.75), real(0.75), real(0.7)}, 10, 10);
  wall({-2, 2, -2}, {4, 0, 0}, {0, 0, 4}, {0, 1, 0}, {real(0.7), real(0.7), real(0.75)},
       {real(0.5), real(0.5), real(0.55)}, 8, 8);
  wall({-2, -2, -2}, {0, 4, 0}, {0, 0, 4}, {1, 0, 0}, {real(0.3), real(0.35), real(0.7)},
       {real(0.72), real(0.72), real(0.68)}, 8, 8);
  wall({2, -2, -2}, {0, 4, 0}, {0, 0, 4}, {1, 0, 0}, {real(0.75), real(0.6), real(0.25)},
       {real(0.68), real(0.68), real(0.66)}, 8, 8);
  return prims;
}

}  // namespace

GeneratedScene generate_scene(const SceneSpec& spec) {
  if (spec.resolution < 8)
    throw ContractError("generate_scene: resolution must be at least 8");
  if (spec.context_views < 2 || spec.target_views < 1)
    throw ContractError("generate_scene: need >= 2 context and >= 1 target views");
  Rng rng(spec.seed);
  int res = spec.resolution;
  real focal = real(1.25) * real(res);

  std::vector<GaussianPrimitive> prims;
  std::vector<Camera> ctx_cams, tgt_cams;
  real world_unit = 4;

  if (spec.preset == "random-blobs") {
    prims = blobs_primitives(spec, rng);
    int total = spec.context_views + spec.target_views;
    for (int i = 0; i < total; ++i) {
      real theta = real(2) * kPi * real(i) / real(total);
      real h = real(0.7) * real(std::sin(double(theta) * 2 + 0.9));
      Vec3 eye{real(4) * std::sin(theta), h, real(-4) * std::cos(theta)};
      Camera cam = Camera::look_at(eye, {0, 0, 0}, {0, 1, 0}, focal, res, res);
      cam.near_clip = real(0.5);
      cam.far_clip = real(20);
      // interleave: every third ring position becomes a target view
      bool is_target = spec.target_views > 0 &&
                       (i % std::max(1, total / std::max(1, spec.target_views)) ==
                        total / std::max(1, spec.target_views) - 1) &&
                       int(tgt_cams.size()) < spec.target_views;
      (is_target ? tgt_cams : ctx_cams).push_back(cam);
    }
    while (int(ctx_cams.size()) > spec.context_views) {
      tgt_cams.push_back(ctx_cams.back());
      ctx_cams.pop_back();
    }
  } else if (spec.preset == "flat-textured-split") {
    prims = split_wall_primitives(rng);
    std::vector<real> ctx_x = {real(-0.30), real(-0.10), real(0.10), real(0.30)};
    for (int i = 0; i < spec.context_views; ++i) {
      real x = i < int(ctx_x.size())
                   ? ctx_x[size_t(i)]
                   : real(rng.uniform(-0.35, 0.35));
      real y = (i % 2 ? real(0.14) : real(-0.14));
      Camera cam;
      cam.fx = cam.fy = focal;
      cam.cx = real(res) / 2;
      cam.cy = real(res) / 2;
      cam.width = cam.height = res;
      cam.near_clip = real(0.5);
      cam.far_clip = real(20);
      cam.trans = {-x, -y, real(4)};  // identity rotation, camera at (x, y, -4)
      ctx_cams.push_back(cam);
    }
    for (int i = 0; i < spec.target_views; ++i) {
      Camera cam = ctx_cams[0];
      real x = (i % 2 ? real(0.20) : real(-0.20)) +
               real(0.04) * real(i / 2);
      cam.trans = {-x, (i % 2 ? real(-0.08) : real(0.08)), real(4)};
      tgt_cams.push_back(cam);
    }
  } else if (spec.preset == "checker-room") {
    prims = checker_room_primitives(rng);
    int total = spec.context_views + spec.target_views;
    for (int i = 0; i < total; ++i) {
      real theta = real(0.9) * (real(i) / real(std::max(1, total - 1)) - real(0.5));
      Vec3 eye{real(0.8) * std::sin(theta), real(0.15) * real(i % 3 - 1),
               real(-1.2) + real(0.1) * real(i % 2)};
      Camera cam = Camera::look_at(eye, {0, 0, real(2)}, {0, 1, 0}, focal, res, res);
      cam.near_clip = real(0.1);
      cam.far_clip = real(12);
      (i % 3 == 1 && int(tgt_cams.size()) < spec.target_views ? tgt_cams : ctx_cams)
          .push_back(cam);
    }
    while (int(ctx_cams.size()) > spec.context_views) {
      tgt_cams.push_back(ctx_cams.back());
      ctx_cams.pop_back();
    }
  } else {
    throw ParseError("generate_scene: unknown preset '" + spec.preset + "'");
  }

  GeneratedScene out;
  out.batch.world_unit = world_unit;
  PrimitiveBatch batch = to_batch(prims, 0);
  auto render_view = [&](const Camera& cam) {
    View v;
    v.cam = cam;
    RenderOutput ro = rasterize(batch, cam, {0, 0, 0});
    v.image = ro.color;
    // depth valid where the splats dominate the pixel
    std::vector<real> depth(ro.depth.vals());
    for (int64_t i = 0; i < ro.alpha.numel(); ++i)
      if (ro.alpha.ptr()[i] < real(0.5))
        depth[size_t(i)] = std::numeric_limits<real>::infinity();
    v.depth = constant(ro.depth.shape, std::move(depth));
    return v;
  };
  for (const Camera& cam : ctx_cams) out.batch.context.push_back(render_view(cam));
  for (const Camera& cam : tgt_cams) out.batch.target.push_back(render_view(cam));
  for (const auto& p : prims) {
    CloudEntry e;
    e.prim = p;
    out.ground_truth.push_back(e);
  }
  out.batch.validate();
  return out;
}

}  // namespace splat
