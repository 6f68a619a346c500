#pragma once

#include "dgs/common.hpp"

namespace dgs {

// Pinhole camera. World-to-camera: x_cam = R * x_world + t, camera looks down +z.
template <class S>
struct Camera {
  Mat3<S> rotation{Mat3<S>::Identity()};
  Vec3<S> translation{Vec3<S>::Zero()};
  S fx = S(1), fy = S(1);
  S cx = S(0), cy = S(0);
  int width = 1, height = 1;
  S near_plane = S(0.1);

  void validate() const {
    require(width >= 1 && height >= 1, cat("Camera: invalid size ", width, "x", height));
    const Mat3<S> err = rotation * rotation.transpose() - Mat3<S>::Identity();
    require(err.template lpNorm<Eigen::Infinity>() < S(1e-5),
            "Camera: rotation is not orthonormal");
    require(all_finite(translation.data(), 3) && std::isfinite(fx) && std::isfinite(fy),
            "Camera: non-finite parameters");
  }

  Vec3<S> world_to_cam(const Vec3<S>& p) const { return rotation * p + translation; }
  Vec3<S> center() const { return -(rotation.transpose() * translation); }

  template <class T>
  Camera<T> cast() const {
    Camera<T> c;
    c.rotation = rotation.template cast<T>();
    c.translation = translation.template cast<T>();
    c.fx = T(fx); c.fy = T(fy); c.cx = T(cx); c.cy = T(cy);
    c.width = width; c.height = height;
    c.near_plane = T(near_plane);
    return c;
  }

  // Camera at `eye` looking at `target` with +y world as down-ish reference.
  static Camera look_at(const Vec3<S>& eye, const Vec3<S>& target, const Vec3<S>& up_world,
                        S fx_, S fy_, int w, int h, S near) {
    Camera c;
    Vec3<S> fwd = (target - eye).normalized();
    Vec3<S> right = fwd.cross(up_world).normalized();
    Vec3<S> down = fwd.cross(right).normalized();
    c.rotation.row(0) = right.transpose();
    c.rotation.row(1) = down.transpose();
    c.rotation.row(2) = fwd.transpose();
    c.translation = -(c.rotation * eye);
    c.fx = fx_; c.fy = fy_;
    c.cx = S(w) / S(2); c.cy = S(h) / S(2);
    c.width = w; c.height = h;
    c.near_plane = near;
    return c;
  }
};

}  // namespace dgs
