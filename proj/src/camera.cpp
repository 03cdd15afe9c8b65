#include "splatweaver/camera.hpp"

#include <cmath>

namespace splat {

Vec3 vadd(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
Vec3 vsub(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
Vec3 vscale(const Vec3& a, real s) { return {a[0] * s, a[1] * s, a[2] * s}; }
real vdot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }

Vec3 vcross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2],
          a[0] * b[1] - a[1] * b[0]};
}

real vnorm(const Vec3& a) { return std::sqrt(vdot(a, a)); }

Vec3 vnormalize(const Vec3& a) {
  real n = vnorm(a);
  if (n <= real(0)) throw ContractError("vnormalize: zero vector");
  return vscale(a, real(1) / n);
}

void Camera::validate() const {
  if (!(fx > 0) || !(fy > 0))
    throw ContractError(strformat("camera: focal lengths must be positive (fx=%g fy=%g)",
                                  double(fx), double(fy)));
  if (!(near_clip > 0) || !(near_clip < far_clip))
    throw ContractError(strformat("camera: need 0 < near < far (near=%g far=%g)",
                                  double(near_clip), double(far_clip)));
  if (width <= 0 || height <= 0)
    throw ContractError("camera: image size must be positive");
  // R R^T == I within 1e-9
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      real dot = 0;
      for (int k = 0; k < 3; ++k) dot += rot[size_t(3 * i + k)] * rot[size_t(3 * j + k)];
      real want = i == j ? real(1) : real(0);
      if (std::fabs(dot - want) > real(1e-9))
        throw ContractError("camera: rotation is not orthonormal");
    }
  }
}

Vec3 Camera::center() const {
  // Xc = R Xw + t, camera at Xc = 0 -> Xw = -R^T t
  Vec3 c{};
  for (int i = 0; i < 3; ++i)
    c[size_t(i)] = -(rot[size_t(i)] * trans[0] + rot[size_t(3 + i)] * trans[1] +
                     rot[size_t(6 + i)] * trans[2]);
  return c;
}

Vec3 Camera::ray_dir(real u, real v) const {
  Vec3 dc{(u - cx) / fx, (v - cy) / fy, real(1)};
  Vec3 dw{};
  for (int i = 0; i < 3; ++i)
    dw[size_t(i)] = rot[size_t(i)] * dc[0] + rot[size_t(3 + i)] * dc[1] +
                    rot[size_t(6 + i)] * dc[2];
  return vnormalize(dw);
}

Vec3 Camera::world_point(real px, real py, real depth) const {
  return vadd(center(), vscale(ray_dir(px, py), depth));
}

Vec3 Camera::to_camera(const Vec3& w) const {
  Vec3 c{};
  for (int i = 0; i < 3; ++i)
    c[size_t(i)] = rot[size_t(3 * i)] * w[0] + rot[size_t(3 * i + 1)] * w[1] +
                   rot[size_t(3 * i + 2)] * w[2] + trans[size_t(i)];
  return c;
}

Camera Camera::look_at(const Vec3& eye, const Vec3& target, const Vec3& up,
                       real focal_px, int width, int height) {
  Vec3 fwd = vnormalize(vsub(target, eye));
  Vec3 right = vnormalize(vcross(up, fwd));
  Vec3 cam_up = vcross(fwd, right);
  Camera cam;
  cam.fx = cam.fy = focal_px;
  cam.cx = real(width) / 2;
  cam.cy = real(height) / 2;
  cam.width = width;
  cam.height = height;
  for (int j = 0; j < 3; ++j) {
    cam.rot[size_t(j)] = right[size_t(j)];
    cam.rot[size_t(3 + j)] = cam_up[size_t(j)];
    cam.rot[size_t(6 + j)] = fwd[size_t(j)];
  }
  // t = -R * eye
  for (int i = 0; i < 3; ++i)
    cam.trans[size_t(i)] = -(cam.rot[size_t(3 * i)] * eye[0] +
                             cam.rot[size_t(3 * i + 1)] * eye[1] +
                             cam.rot[size_t(3 * i + 2)] * eye[2]);
  return cam;
}

}  // namespace splat
