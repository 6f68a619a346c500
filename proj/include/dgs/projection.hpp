#pragma once

#include <optional>

#include "dgs/camera.hpp"
#include "dgs/gaussian_field.hpp"

namespace dgs {

// Isotropic low-pass dilation added to every 2D covariance, in pixels^2.
inline constexpr double kCovDilation = 0.3;
// Contributions below this projected alpha are skipped everywhere.
inline constexpr double kAlphaSkip = 1.0 / 255.0;

template <class S>
struct ProjectedGaussian {
  Vec2<S> mean2d{Vec2<S>::Zero()};  // pixel coordinates
  S cov_xx{0}, cov_xy{0}, cov_yy{0};  // dilated 2D covariance, pixels^2
  S conic_xx{0}, conic_xy{0}, conic_yy{0};  // inverse of the 2D covariance
  S depth{0};                      // camera-space z
  Vec3<S> color{Vec3<S>::Zero()};  // SH-decoded RGB
  S alpha{0};                      // activated opacity
  S radius{0};                     // conservative pixel radius of the alpha >= 1/255 level set
  int src{-1};                     // source primitive index
};

// Projects one primitive; nullopt means culled (normal outcome).
// Pixel (x, y) samples the footprint at coordinates (x + 0.5, y + 0.5).
template <class S>
std::optional<ProjectedGaussian<S>> project_gaussian(const GaussianSet<S>& set, size_t i,
                                                     const Camera<S>& cam) {
  ProjectedGaussian<S> out;
  out.src = int(i);

  const Vec3<S> mu = set.center(i);
  require(all_finite(mu.data(), 3) && all_finite(set.scale_raw(i).data(), 3) &&
              all_finite(set.rotation(i).data(), 4) && std::isfinite(set.opacities_raw[i]),
          cat("project_gaussian: non-finite parameter in primitive ", i));

  const Vec3<S> t = cam.world_to_cam(mu);
  if (!(t[2] > cam.near_plane)) return std::nullopt;
  out.depth = t[2];

  out.alpha = activate_opacity(set.opacities_raw[i]);
  if (!(out.alpha * S(255) > S(1))) return std::nullopt;  // below skip threshold everywhere

  out.mean2d[0] = cam.fx * t[0] / t[2] + cam.cx;
  out.mean2d[1] = cam.fy * t[1] / t[2] + cam.cy;

  const Vec3<S> s_act = set.activated_scale(i);
  const Vec4<S> q = normalize_quat(Vec4<S>(set.rotation(i)));
  const Mat3<S> sigma = covariance_from_scale_rotation(s_act, q);

  const S tz2 = t[2] * t[2];
  Eigen::Matrix<S, 2, 3> jac;
  jac << cam.fx / t[2], S(0), -cam.fx * t[0] / tz2,
         S(0), cam.fy / t[2], -cam.fy * t[1] / tz2;
  const Eigen::Matrix<S, 2, 3> m = jac * cam.rotation;
  const Mat2<S> cov2d_m = m * sigma * m.transpose();
  out.cov_xx = cov2d_m(0, 0) + S(kCovDilation);
  out.cov_xy = S(0.5) * (cov2d_m(0, 1) + cov2d_m(1, 0));
  out.cov_yy = cov2d_m(1, 1) + S(kCovDilation);

  const S det = out.cov_xx * out.cov_yy - out.cov_xy * out.cov_xy;
  if (!(det > S(0))) return std::nullopt;  // numerically degenerate footprint
  const S inv_det = S(1) / det;
  out.conic_xx = out.cov_yy * inv_det;
  out.conic_xy = -out.cov_xy * inv_det;
  out.conic_yy = out.cov_xx * inv_det;

  const S mid = S(0.5) * (out.cov_xx + out.cov_yy);
  const S disc = std::sqrt(std::max(S(0), mid * mid - det));
  const S sigma_max = std::sqrt(std::max(S(1e-12), mid + disc));

  // 3-sigma cull against the image rectangle.
  const S r3 = S(3) * sigma_max;
  if (out.mean2d[0] + r3 < S(0) || out.mean2d[0] - r3 > S(cam.width) ||
      out.mean2d[1] + r3 < S(0) || out.mean2d[1] - r3 > S(cam.height))
    return std::nullopt;

  // Conservative tile-binning radius: alpha * exp(-0.5 d^T Q d) >= 1/255 implies
  // |d| <= sigma_max * sqrt(2 ln(255 alpha)). One pixel of slack absorbs rounding.
  out.radius = sigma_max * std::sqrt(S(2) * std::log(out.alpha * S(255))) + S(1);

  const Vec3<S> view = mu - cam.center();
  const S dist = view.norm();
  out.color = dist > S(0)
                  ? sh_to_color(set.sh_degree, set.feature(i), set.sh_dim(), Vec3<S>(view / dist))
                  : Vec3<S>(sh_to_color(set.sh_degree, set.feature(i), set.sh_dim(),
                                        Vec3<S>(S(0), S(0), S(1))));
  return out;
}

// Projects the whole set, preserving primitive-index order in the output.
template <class S>
std::vector<ProjectedGaussian<S>> project_all(const GaussianSet<S>& set, const Camera<S>& cam) {
  const size_t n = set.count();
  std::vector<std::optional<ProjectedGaussian<S>>> slots(n);
  std::exception_ptr err;
#pragma omp parallel for schedule(static)
  for (long i = 0; i < long(n); ++i) {
    try {
      slots[size_t(i)] = project_gaussian(set, size_t(i), cam);
    } catch (...) {
#pragma omp critical
      if (!err) err = std::current_exception();
    }
  }
  if (err) std::rethrow_exception(err);
  std::vector<ProjectedGaussian<S>> out;
  out.reserve(n);
  for (auto& s : slots)
    if (s) out.push_back(*s);
  return out;
}

}  // namespace dgs
