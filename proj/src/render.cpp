#include "splatweaver/render.hpp"

#include <algorithm>
#include <cmath>

namespace splat {

PrimitiveBatch to_batch(const std::vector<GaussianPrimitive>& prims, int sh_degree) {
  int g = int(prims.size());
  int cdim = 3 * (sh_degree + 1) * (sh_degree + 1);
  std::vector<real> mu(size_t(g) * 3), s(size_t(g) * 3), q(size_t(g) * 4);
  std::vector<real> a(size_t(g), real(0)), c(size_t(g) * cdim, real(0));
  for (int i = 0; i < g; ++i) {
    const GaussianPrimitive& p = prims[size_t(i)];
    for (int k = 0; k < 3; ++k) mu[size_t(3 * i + k)] = p.mu[size_t(k)];
    for (int k = 0; k < 3; ++k) s[size_t(3 * i + k)] = p.s[size_t(k)];
    for (int k = 0; k < 4; ++k) q[size_t(4 * i + k)] = p.q[size_t(k)];
    a[size_t(i)] = p.alpha;
    int n = std::min(cdim, int(p.c.size()));
    for (int k = 0; k < n; ++k) c[size_t(cdim * i + k)] = p.c[size_t(k)];
  }
  PrimitiveBatch b;
  b.mu = constant({g, 3}, std::move(mu));
  b.scale = constant({g, 3}, std::move(s));
  b.quat = constant({g, 4}, std::move(q));
  b.alpha = constant({g}, std::move(a));
  b.color = constant({g, cdim}, std::move(c));
  b.sh_degree = sh_degree;
  return b;
}

std::vector<GaussianPrimitive> from_batch(const PrimitiveBatch& b) {
  int g = b.count();
  int cdim = b.color.numel() ? b.color.shape[1] : 3;
  std::vector<GaussianPrimitive> out(static_cast<size_t>(g));
  for (int i = 0; i < g; ++i) {
    GaussianPrimitive& p = out[size_t(i)];
    for (int k = 0; k < 3; ++k) p.mu[size_t(k)] = b.mu.ptr()[3 * i + k];
    for (int k = 0; k < 3; ++k) p.s[size_t(k)] = b.scale.ptr()[3 * i + k];
    for (int k = 0; k < 4; ++k) p.q[size_t(k)] = b.quat.ptr()[4 * i + k];
    p.alpha = b.alpha.ptr()[i];
    p.c.assign(b.color.ptr() + int64_t(i) * cdim,
               b.color.ptr() + int64_t(i + 1) * cdim);
  }
  return out;
}

namespace {

// [G,k] column -> [G]
Tensor col(const Tensor& t, int j) {
  return reshape(slice(t, 1, j, 1), {t.shape[0]});
}

// Real SH basis constants (bands 1 and 2).
constexpr real kSh1 = real(0.4886025119029199);
constexpr real kSh2[5] = {real(1.0925484305920792), real(-1.0925484305920792),
                          real(0.31539156525252005), real(-1.0925484305920792),
                          real(0.5462742152960396)};

Tensor band_term(const Tensor& basis, const Tensor& coeff_slice, int g) {
  return mul(broadcast(reshape(basis, {g, 1}), {g, 3}), coeff_slice);
}

// View-dependent color: DC plus SH bands along the camera->splat direction,
// clamped to [0,1]. Degree 0 passes the coefficients straight through.
Tensor view_color(const PrimitiveBatch& prims, const Camera& cam) {
  int g = prims.count();
  if (prims.sh_degree == 0) return prims.color;
  Tensor dc = slice(prims.color, 1, 0, 3);
  Vec3 cc = cam.center();
  Tensor center = constant({3}, {cc[0], cc[1], cc[2]});
  Tensor dir = l2_normalize(sub(prims.mu, center), 1);
  Tensor dx = col(dir, 0), dy = col(dir, 1), dz = col(dir, 2);
  Tensor rgb = dc;
  rgb = add(rgb, band_term(scale(dy, -kSh1), slice(prims.color, 1, 3, 3), g));
  rgb = add(rgb, band_term(scale(dz, kSh1), slice(prims.color, 1, 6, 3), g));
  rgb = add(rgb, band_term(scale(dx, -kSh1), slice(prims.color, 1, 9, 3), g));
  if (prims.sh_degree >= 2) {
    Tensor xx = mul(dx, dx), yy = mul(dy, dy), zz = mul(dz, dz);
    Tensor xy = mul(dx, dy), yz = mul(dy, dz), xz = mul(dx, dz);
    Tensor b[5] = {
        scale(xy, kSh2[0]), scale(yz, kSh2[1]),
        scale(sub(scale(zz, real(2)), add(xx, yy)), kSh2[2]),
        scale(xz, kSh2[3]), scale(sub(xx, yy), kSh2[4])};
    for (int i = 0; i < 5; ++i)
      rgb = add(rgb, band_term(b[i], slice(prims.color, 1, 12 + 3 * i, 3), g));
  }
  return clamp(rgb, real(0), real(1));
}

}  // namespace

ProjectedSplats project(const PrimitiveBatch& prims, const Camera& cam) {
  cam.validate();
  int g = prims.count();
  ProjectedSplats out;
  if (g == 0) {
    out.u = constant({0}, {});
    return out;
  }
  const auto& R = cam.rot;
  // camera-space positions: row vectors times R^T, plus t
  Tensor rt = constant({3, 3}, {R[0], R[3], R[6], R[1], R[4], R[7], R[2], R[5], R[8]});
  Tensor t = constant({3}, {cam.trans[0], cam.trans[1], cam.trans[2]});
  Tensor pc = add(matmul(prims.mu, rt), t);
  Tensor tx = col(pc, 0), ty = col(pc, 1), tz = col(pc, 2);

  Tensor ones = full({g}, real(1));
  Tensor rec = divide(ones, tz);
  Tensor u = add_scalar(mul(scale(tx, cam.fx), rec), cam.cx);
  Tensor v = add_scalar(mul(scale(ty, cam.fy), rec), cam.cy);

  // rotation matrix entries from the (normalized) quaternion
  Tensor qn = l2_normalize(prims.quat, 1);
  Tensor qw = col(qn, 0), qx = col(qn, 1), qy = col(qn, 2), qz = col(qn, 3);
  Tensor xx = mul(qx, qx), yy = mul(qy, qy), zz = mul(qz, qz);
  Tensor xy = mul(qx, qy), xz = mul(qx, qz), yz = mul(qy, qz);
  Tensor wx = mul(qw, qx), wy = mul(qw, qy), wz = mul(qw, qz);
  Tensor r[3][3];
  r[0][0] = add_scalar(scale(add(yy, zz), real(-2)), real(1));
  r[0][1] = scale(sub(xy, wz), real(2));
  r[0][2] = scale(add(xz, wy), real(2));
  r[1][0] = scale(add(xy, wz), real(2));
  r[1][1] = add_scalar(scale(add(xx, zz), real(-2)), real(1));
  r[1][2] = scale(sub(yz, wx), real(2));
  r[2][0] = scale(sub(xz, wy), real(2));
  r[2][1] = scale(add(yz, wx), real(2));
  r[2][2] = add_scalar(scale(add(xx, yy), real(-2)), real(1));

  // Sigma3D_ij = sum_k r_ik r_jk s_k^2 (six unique entries)
  Tensor s0 = col(prims.scale, 0), s1 = col(prims.scale, 1), s2c = col(prims.scale, 2);
  Tensor v0 = mul(s0, s0), v1 = mul(s1, s1), v2 = mul(s2c, s2c);
  auto sig = [&](int i, int j) {
    return add(add(mul(mul(r[i][0], r[j][0]), v0), mul(mul(r[i][1], r[j][1]), v1)),
               mul(mul(r[i][2], r[j][2]), v2));
  };
  Tensor s00 = sig(0, 0), s01 = sig(0, 1), s02 = sig(0, 2);
  Tensor s11 = sig(1, 1), s12 = sig(1, 2), s22 = sig(2, 2);

  // T = J * Rc, rows a=0,1 (J01 = J10 = 0)
  Tensor rec2 = mul(rec, rec);
  Tensor j00 = scale(rec, cam.fx);
  Tensor j11 = scale(rec, cam.fy);
  Tensor j02 = scale(mul(tx, rec2), -cam.fx);
  Tensor j12 = scale(mul(ty, rec2), -cam.fy);
  Tensor T[2][3];
  for (int c = 0; c < 3; ++c) {
    T[0][c] = add(scale(j00, R[size_t(c)]), scale(j02, R[size_t(6 + c)]));
    T[1][c] = add(scale(j11, R[size_t(3 + c)]), scale(j12, R[size_t(6 + c)]));
  }
  // W_a = Sigma3D * T_a^T, cov_ab = T_a . W_b
  auto sig_row = [&](int i, int j) -> const Tensor& {
    static thread_local Tensor dummy;
    if (i == 0 && j == 0) return s00;
    if ((i == 0 && j == 1) || (i == 1 && j == 0)) return s01;
    if ((i == 0 && j == 2) || (i == 2 && j == 0)) return s02;
    if (i == 1 && j == 1) return s11;
    if ((i == 1 && j == 2) || (i == 2 && j == 1)) return s12;
    return s22;
  };
  Tensor W[2][3];
  for (int a = 0; a < 2; ++a)
    for (int i = 0; i < 3; ++i)
      W[a][i] = add(add(mul(sig_row(i, 0), T[a][0]), mul(sig_row(i, 1), T[a][1])),
                    mul(sig_row(i, 2), T[a][2]));
  auto cov_entry = [&](int a, int b) {
    return add(add(mul(T[a][0], W[b][0]), mul(T[a][1], W[b][1])),
               mul(T[a][2], W[b][2]));
  };
  Tensor cov_a = add_scalar(cov_entry(0, 0), kCovDilation);
  Tensor cov_c = add_scalar(cov_entry(1, 1), kCovDilation);
  Tensor cov_b = cov_entry(0, 1);

  Tensor det = sub(mul(cov_a, cov_c), mul(cov_b, cov_b));
  out.conic_a = divide(cov_c, det);
  out.conic_b = neg(divide(cov_b, det));
  out.conic_c = divide(cov_a, det);
  out.u = u;
  out.v = v;
  out.depth = tz;
  out.alpha = prims.alpha;
  out.rgb = view_color(prims, cam);

  // Culling from detached values: depth clip, then 99% ellipse vs image.
  out.radius.resize(size_t(g), real(0));
  out.culled.resize(size_t(g), 0);
  for (int i = 0; i < g; ++i) {
    real z = tz.ptr()[i];
    if (!(z > cam.near_clip && z < cam.far_clip)) {
      out.culled[size_t(i)] = 1;
      continue;
    }
    real ca = cov_a.ptr()[i], cb = cov_b.ptr()[i], ccv = cov_c.ptr()[i];
    real mid = real(0.5) * (ca + ccv);
    real disc = std::sqrt(std::max(real(0), mid * mid - (ca * ccv - cb * cb)));
    real lmax = mid + disc;
    real rad = std::sqrt(std::max(real(0), kChi99 * lmax));
    out.radius[size_t(i)] = rad;
    real pu = u.ptr()[i], pv = v.ptr()[i];
    if (pu + rad < 0 || pu - rad > real(cam.width) || pv + rad < 0 ||
        pv - rad > real(cam.height))
      out.culled[size_t(i)] = 1;
  }
  return out;
}

ScreenGaussian project_one(const GaussianPrimitive& prim, const Camera& cam) {
  PrimitiveBatch b = to_batch({prim}, 0);
  ProjectedSplats ps = project(b, cam);
  ScreenGaussian sg;
  sg.culled = ps.culled[0] != 0;
  sg.u = ps.u.ptr()[0];
  sg.v = ps.v.ptr()[0];
  sg.depth = ps.depth.ptr()[0];
  // recover the dilated covariance from the conic
  real ia = ps.conic_a.ptr()[0], ib = ps.conic_b.ptr()[0], ic = ps.conic_c.ptr()[0];
  real idet = ia * ic - ib * ib;
  if (idet != 0) {
    sg.cov[0] = ic / idet;
    sg.cov[1] = -ib / idet;
    sg.cov[2] = ia / idet;
  }
  return sg;
}

// ---------------------------------------------------------------------------
// Rasterization

namespace {

// Detached screen-space values, SoA.
struct Screen {
  int g = 0;
  std::vector<real> u, v, ca, cb, cc, z, a;
  std::vector<real> rgb;  // 3*g
  std::vector<int> order;  // active splats, sorted (depth, index)
};

struct SplatRec {
  int idx;
  real w, a, t;
};

struct PixelAccum {
  real c[3] = {0, 0, 0};
  real acc_alpha = 0;
  real acc_depth = 0;
  int n = 0;
};

// One pixel's front-to-back walk over a depth-ordered candidate list. The
// oracle passes every active splat, the tiled path only the tile's list;
// skipped splats touch no accumulator, so both walks are bit-identical.
PixelAccum walk_pixel(const Screen& sc, const int* list, int len, real px,
                      real py, std::vector<SplatRec>* recs) {
  PixelAccum acc;
  real t = 1;
  for (int k = 0; k < len; ++k) {
    int i = list[k];
    real dx = px - sc.u[size_t(i)];
    real dy = py - sc.v[size_t(i)];
    real power = real(-0.5) * (sc.ca[size_t(i)] * dx * dx +
                               sc.cc[size_t(i)] * dy * dy) -
                 sc.cb[size_t(i)] * dx * dy;
    if (power > 0) continue;
    real w = std::exp(power);
    if (w < kMinWeight) continue;
    real a = sc.a[size_t(i)] * w;
    if (a > kAlphaClamp) a = kAlphaClamp;
    real wt = a * t;
    acc.c[0] += sc.rgb[size_t(3 * i)] * wt;
    acc.c[1] += sc.rgb[size_t(3 * i + 1)] * wt;
    acc.c[2] += sc.rgb[size_t(3 * i + 2)] * wt;
    acc.acc_alpha += wt;
    acc.acc_depth += sc.z[size_t(i)] * wt;
    acc.n += 1;
    if (recs) recs->push_back({i, w, a, t});
    t *= real(1) - a;
    if (t < kEarlyOutT) break;
  }
  return acc;
}

std::shared_ptr<Screen> extract_screen(const ProjectedSplats& ps) {
  auto sc = std::make_shared<Screen>();
  int g = int(ps.culled.size());
  sc->g = g;
  sc->u.resize(size_t(g));
  sc->v.resize(size_t(g));
  sc->ca.resize(size_t(g));
  sc->cb.resize(size_t(g));
  sc->cc.resize(size_t(g));
  sc->z.resize(size_t(g));
  sc->a.resize(size_t(g));
  sc->rgb.resize(size_t(g) * 3);
  for (int i = 0; i < g; ++i) {
    if (ps.culled[size_t(i)]) continue;
    sc->u[size_t(i)] = ps.u.ptr()[i];
    sc->v[size_t(i)] = ps.v.ptr()[i];
    sc->ca[size_t(i)] = ps.conic_a.ptr()[i];
    sc->cb[size_t(i)] = ps.conic_b.ptr()[i];
    sc->cc[size_t(i)] = ps.conic_c.ptr()[i];
    sc->z[size_t(i)] = ps.depth.ptr()[i];
    sc->a[size_t(i)] = ps.alpha.ptr()[i];
    for (int k = 0; k < 3; ++k)
      sc->rgb[size_t(3 * i + k)] = ps.rgb.ptr()[3 * i + k];
    for (real fv : {sc->u[size_t(i)], sc->v[size_t(i)], sc->ca[size_t(i)],
                    sc->cb[size_t(i)], sc->cc[size_t(i)], sc->z[size_t(i)],
                    sc->a[size_t(i)], sc->rgb[size_t(3 * i)],
                    sc->rgb[size_t(3 * i + 1)], sc->rgb[size_t(3 * i + 2)]})
      if (!std::isfinite(double(fv)))
        throw ContractError(strformat("rasterize: non-finite field for primitive %d", i));
    sc->order.push_back(i);
  }
  std::stable_sort(sc->order.begin(), sc->order.end(), [&](int lhs, int rhs) {
    if (sc->z[size_t(lhs)] != sc->z[size_t(rhs)])
      return sc->z[size_t(lhs)] < sc->z[size_t(rhs)];
    return lhs < rhs;
  });
  return sc;
}

struct TileGrid {
  int tiles_x = 0, tiles_y = 0;
  std::vector<std::vector<int>> lists;  // per tile, depth-ordered
};

std::shared_ptr<TileGrid> bin_tiles(const Screen& sc, const ProjectedSplats& ps,
                                    int width, int height) {
  auto grid = std::make_shared<TileGrid>();
  grid->tiles_x = (width + kTileSize - 1) / kTileSize;
  grid->tiles_y = (height + kTileSize - 1) / kTileSize;
  grid->lists.assign(size_t(grid->tiles_x) * grid->tiles_y, {});
  for (int i : sc.order) {
    real rad = ps.radius[size_t(i)];
    int x0 = std::max(0, int(std::floor((sc.u[size_t(i)] - rad) / kTileSize)));
    int x1 = std::min(grid->tiles_x - 1,
                      int(std::floor((sc.u[size_t(i)] + rad) / kTileSize)));
    int y0 = std::max(0, int(std::floor((sc.v[size_t(i)] - rad) / kTileSize)));
    int y1 = std::min(grid->tiles_y - 1,
                      int(std::floor((sc.v[size_t(i)] + rad) / kTileSize)));
    for (int ty = y0; ty <= y1; ++ty)
      for (int tx = x0; tx <= x1; ++tx)
        grid->lists[size_t(ty) * grid->tiles_x + tx].push_back(i);
  }
  return grid;
}

void finalize_pixel(const PixelAccum& acc, const Vec3& bg, real* out5) {
  real rem = real(1) - acc.acc_alpha;
  out5[0] = acc.c[0] + rem * bg[0];
  out5[1] = acc.c[1] + rem * bg[1];
  out5[2] = acc.c[2] + rem * bg[2];
  out5[3] = acc.acc_alpha;
  real denom = acc.acc_alpha > kDepthEps ? acc.acc_alpha : kDepthEps;
  out5[4] = acc.acc_depth / denom;
}

}  // namespace

RenderOutput rasterize(const PrimitiveBatch& prims, const Camera& cam,
                       const Vec3& background) {
  cam.validate();
  int W = cam.width, H = cam.height;
  RenderOutput ro;
  ro.splat_count.assign(size_t(H) * W, 0);
  if (prims.count() == 0) {
    std::vector<real> cvals(size_t(H) * W * 3);
    for (int64_t p = 0; p < int64_t(H) * W; ++p)
      for (int k = 0; k < 3; ++k) cvals[size_t(3 * p + k)] = background[size_t(k)];
    ro.color = constant({H, W, 3}, std::move(cvals));
    ro.alpha = zeros({H, W});
    ro.depth = zeros({H, W});
    return ro;
  }

  ProjectedSplats ps = project(prims, cam);
  auto sc = extract_screen(ps);
  auto grid = bin_tiles(*sc, ps, W, H);

  auto bundle = std::make_shared<std::vector<real>>(size_t(H) * W * 5, real(0));
  int n_tiles = grid->tiles_x * grid->tiles_y;
  Vec3 bg = background;
  std::vector<int>& counts = ro.splat_count;

  parallel_for(n_tiles, [&](int64_t t0, int64_t t1) {
    for (int64_t tid = t0; tid < t1; ++tid) {
      int tx = int(tid) % grid->tiles_x, ty = int(tid) / grid->tiles_x;
      const auto& list = grid->lists[size_t(tid)];
      int px0 = tx * kTileSize, py0 = ty * kTileSize;
      int px1 = std::min(W, px0 + kTileSize), py1 = std::min(H, py0 + kTileSize);
      for (int y = py0; y < py1; ++y) {
        for (int x = px0; x < px1; ++x) {
          PixelAccum acc = walk_pixel(*sc, list.data(), int(list.size()),
                                      real(x) + real(0.5), real(y) + real(0.5),
                                      nullptr);
          finalize_pixel(acc, bg, bundle->data() + (int64_t(y) * W + x) * 5);
          counts[size_t(y) * W + x] = acc.n;
        }
      }
    }
  });

  // Record one bundle node; color/alpha/depth are slices of it.
  Tensor bundle_t;
  {
    // find the recording tape among the differentiable inputs
    const Tensor* ins[] = {&ps.u, &ps.v, &ps.conic_a, &ps.conic_b, &ps.conic_c,
                           &ps.depth, &ps.alpha, &ps.rgb};
    Tape* tape = nullptr;
    for (const Tensor* t : ins) {
      if (t->tracked()) {
        tape = t->tape;
        break;
      }
    }
    bundle_t.shape = {H, W, 5};
    bundle_t.data = bundle;
    if (tape) {
      int pu = ps.u.node, pv = ps.v.node, pca = ps.conic_a.node;
      int pcb = ps.conic_b.node, pcc = ps.conic_c.node, pz = ps.depth.node;
      int pa = ps.alpha.tracked() ? ps.alpha.node : -1;
      int prgb = ps.rgb.tracked() ? ps.rgb.node : -1;
      auto grid_k = grid;
      auto sc_k = sc;
      int g = sc->g;
      auto fn = [=](const real* gout, Tape& t) {
        // per-tile partial gradients, merged in tile order
        int ntl = grid_k->tiles_x * grid_k->tiles_y;
        std::vector<std::vector<real>> partials(static_cast<size_t>(ntl));
        parallel_for(ntl, [&](int64_t b0, int64_t b1) {
          for (int64_t tid = b0; tid < b1; ++tid) {
            const auto& list = grid_k->lists[size_t(tid)];
            if (list.empty()) continue;
            auto& part = partials[size_t(tid)];
            part.assign(list.size() * 10, real(0));
            // local index of each splat in this tile's list
            int ttx = int(tid) % grid_k->tiles_x, tty = int(tid) / grid_k->tiles_x;
            int px0 = ttx * kTileSize, py0 = tty * kTileSize;
            int px1 = std::min(W, px0 + kTileSize);
            int py1 = std::min(H, py0 + kTileSize);
            std::vector<SplatRec> recs;
            for (int y = py0; y < py1; ++y) {
              for (int x = px0; x < px1; ++x) {
                recs.clear();
                real px = real(x) + real(0.5), py = real(y) + real(0.5);
                PixelAccum acc = walk_pixel(*sc_k, list.data(), int(list.size()),
                                            px, py, &recs);
                if (recs.empty()) continue;
                const real* gp = gout + (int64_t(y) * W + x) * 5;
                real amax = acc.acc_alpha > kDepthEps ? acc.acc_alpha : kDepthEps;
                real dval = acc.acc_depth / amax;
                real ddepth_dA =
                    acc.acc_alpha > kDepthEps ? -dval / amax : real(0);
                // back-to-front: S accumulates (dL/dw_j) * w_j for j behind i
                real s_after = 0;
                // local positions of recs within `list`: recs are in list
                // walk order, so find by advancing an index
                size_t cursor = 0;
                std::vector<int> rec_local(recs.size());
                for (size_t ri = 0; ri < recs.size(); ++ri) {
                  while (list[cursor] != recs[ri].idx) ++cursor;
                  rec_local[ri] = int(cursor);
                }
                for (int ri = int(recs.size()) - 1; ri >= 0; --ri) {
                  const SplatRec& rec = recs[size_t(ri)];
                  int i = rec.idx;
                  real wt = rec.a * rec.t;
                  // dL/d omega_i (omega = a_i * T_i)
                  real dldw = 0;
                  for (int k = 0; k < 3; ++k)
                    dldw += gp[k] * (sc_k->rgb[size_t(3 * i + k)] - bg[size_t(k)]);
                  dldw += gp[3];
                  dldw += gp[4] * (sc_k->z[size_t(i)] / amax + ddepth_dA);
                  // dL/d a_i through omega_i and the transmittances behind
                  real da = dldw * rec.t - s_after / (real(1) - rec.a);
                  s_after += dldw * wt;
                  real* pr = part.data() + size_t(rec_local[size_t(ri)]) * 10;
                  // rgb and depth gradients
                  for (int k = 0; k < 3; ++k) pr[7 + k] += gp[k] * wt;
                  pr[6] += gp[4] * wt / amax;
                  // alpha clamp: zero gradient when saturated
                  real araw = sc_k->a[size_t(i)] * rec.w;
                  if (araw <= kAlphaClamp) {
                    real dalpha = da * rec.w;
                    real dw = da * sc_k->a[size_t(i)];
                    real dpower = dw * rec.w;
                    real dx = px - sc_k->u[size_t(i)];
                    real dy = py - sc_k->v[size_t(i)];
                    pr[5] += dalpha;
                    pr[2] += dpower * real(-0.5) * dx * dx;  // conic_a
                    pr[3] += dpower * (-dx * dy);            // conic_b
                    pr[4] += dpower * real(-0.5) * dy * dy;  // conic_c
                    pr[0] += dpower * (sc_k->ca[size_t(i)] * dx +
                                       sc_k->cb[size_t(i)] * dy);  // u
                    pr[1] += dpower * (sc_k->cc[size_t(i)] * dy +
                                       sc_k->cb[size_t(i)] * dx);  // v
                  }
                }
              }
            }
          }
        });
        // merge per-tile partials into per-splat gradients, fixed order
        std::vector<real> gu(size_t(g), 0), gv(size_t(g), 0), gca(size_t(g), 0),
            gcb(size_t(g), 0), gcc(size_t(g), 0), gz(size_t(g), 0),
            ga(size_t(g), 0), grgb(size_t(g) * 3, 0);
        for (int tid = 0; tid < ntl; ++tid) {
          const auto& list = grid_k->lists[size_t(tid)];
          const auto& part = partials[size_t(tid)];
          if (part.empty()) continue;
          for (size_t li = 0; li < list.size(); ++li) {
            int i = list[li];
            const real* pr = part.data() + li * 10;
            gu[size_t(i)] += pr[0];
            gv[size_t(i)] += pr[1];
            gca[size_t(i)] += pr[2];
            gcb[size_t(i)] += pr[3];
            gcc[size_t(i)] += pr[4];
            ga[size_t(i)] += pr[5];
            gz[size_t(i)] += pr[6];
            for (int k = 0; k < 3; ++k) grgb[size_t(3 * i + k)] += pr[7 + k];
          }
        }
        auto push = [&](int node, const std::vector<real>& src) {
          if (node < 0) return;
          auto& dst = t.scratch(node);
          for (size_t k = 0; k < src.size(); ++k) dst[k] += src[k];
        };
        push(pu, gu);
        push(pv, gv);
        push(pca, gca);
        push(pcb, gcb);
        push(pcc, gcc);
        push(pz, gz);
        push(pa, ga);
        push(prgb, grgb);
      };
      bundle_t.tape = tape;
      bundle_t.tape_uid = tape->uid();
      bundle_t.node = tape->record(int64_t(H) * W * 5, std::move(fn));
    }
  }

  ro.color = slice(bundle_t, 2, 0, 3);
  ro.alpha = reshape(slice(bundle_t, 2, 3, 1), {H, W});
  ro.depth = reshape(slice(bundle_t, 2, 4, 1), {H, W});
  return ro;
}

RenderOutput rasterize_oracle(const PrimitiveBatch& prims, const Camera& cam,
                              const Vec3& background) {
  cam.validate();
  int W = cam.width, H = cam.height;
  RenderOutput ro;
  ro.splat_count.assign(size_t(H) * W, 0);
  if (prims.count() == 0) {
    std::vector<real> cvals(size_t(H) * W * 3);
    for (int64_t p = 0; p < int64_t(H) * W; ++p)
      for (int k = 0; k < 3; ++k) cvals[size_t(3 * p + k)] = background[size_t(k)];
    ro.color = constant({H, W, 3}, std::move(cvals));
    ro.alpha = zeros({H, W});
    ro.depth = zeros({H, W});
    return ro;
  }
  ProjectedSplats ps = project(prims, cam);
  auto sc = extract_screen(ps);
  std::vector<real> cvals(size_t(H) * W * 3), avals(size_t(H) * W),
      dvals(size_t(H) * W);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      PixelAccum acc = walk_pixel(*sc, sc->order.data(), int(sc->order.size()),
                                  real(x) + real(0.5), real(y) + real(0.5),
                                  nullptr);
      real out5[5];
      finalize_pixel(acc, background, out5);
      int64_t p = int64_t(y) * W + x;
      for (int k = 0; k < 3; ++k) cvals[size_t(3 * p + k)] = out5[k];
      avals[size_t(p)] = out5[3];
      dvals[size_t(p)] = out5[4];
      ro.splat_count[size_t(p)] = acc.n;
    }
  }
  ro.color = constant({H, W, 3}, std::move(cvals));
  ro.alpha = constant({H, W}, std::move(avals));
  ro.depth = constant({H, W}, std::move(dvals));
  return ro;
}

}  // namespace splat
