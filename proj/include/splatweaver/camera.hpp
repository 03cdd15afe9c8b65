#pragma once

#include <array>

#include "splatweaver/common.hpp"

namespace splat {

using Vec3 = std::array<real, 3>;

Vec3 vadd(const Vec3& a, const Vec3& b);
Vec3 vsub(const Vec3& a, const Vec3& b);
Vec3 vscale(const Vec3& a, real s);
real vdot(const Vec3& a, const Vec3& b);
Vec3 vcross(const Vec3& a, const Vec3& b);
real vnorm(const Vec3& a);
Vec3 vnormalize(const Vec3& a);

// Pinhole camera. rot/trans map world to camera: Xc = R Xw + t. The camera
// frame is x-right, y-up, z-forward (det +1); pixel (ix, iy) has center
// (ix + 0.5, iy + 0.5) and projects from u = fx X/Z + cx, v = fy Y/Z + cy.
struct Camera {
  real fx = 0, fy = 0, cx = 0, cy = 0;
  std::array<real, 9> rot{1, 0, 0, 0, 1, 0, 0, 0, 1};  // row-major
  Vec3 trans{0, 0, 0};
  int width = 0, height = 0;
  real near_clip = real(0.1), far_clip = real(100);

  void validate() const;  // orthonormal rot, fx/fy > 0, 0 < near < far

  Vec3 center() const;  // camera position in world coordinates
  Vec3 world_point(real px, real py, real depth) const;
  // Unit world-space direction through a pixel-plane point (u, v).
  Vec3 ray_dir(real u, real v) const;
  Vec3 to_camera(const Vec3& world) const;

  static Camera look_at(const Vec3& eye, const Vec3& target, const Vec3& up,
                        real focal_px, int width, int height);
};

}  // namespace splat
