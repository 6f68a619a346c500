#pragma once

#include "dgs/common.hpp"

namespace dgs {

enum class BranchTag { Face, Mouth };

inline const char* to_string(BranchTag t) { return t == BranchTag::Face ? "face" : "mouth"; }
inline BranchTag branch_from_string(const std::string& s) {
  if (s == "face") return BranchTag::Face;
  if (s == "mouth") return BranchTag::Mouth;
  throw std::invalid_argument(cat("unknown branch tag '", s, "'"));
}

inline int sh_basis_count(int degree) { return (degree + 1) * (degree + 1); }
inline int sh_coeff_count(int degree) { return 3 * sh_basis_count(degree); }

// One primitive, row view for construction and tests.
template <class S>
struct GaussianPrimitive {
  Vec3<S> center{Vec3<S>::Zero()};
  Vec3<S> scale_raw{Vec3<S>::Zero()};         // pre-softplus
  Vec4<S> rotation{S(1), S(0), S(0), S(0)};   // (w, x, y, z)
  S opacity_raw{S(0)};                        // pre-sigmoid logit
  VecX<S> features;                           // Z = 3*(deg+1)^2, layout [basis][rgb]
};

// SoA set of primitives. Doubles as the canonical field and as a deformed set;
// ordering is stable and is the checkpoint order.
template <class S>
struct GaussianSet {
  int sh_degree = 1;
  BranchTag branch_tag = BranchTag::Face;

  std::vector<S> centers;        // 3N
  std::vector<S> scales_raw;     // 3N
  std::vector<S> rotations;      // 4N, (w,x,y,z)
  std::vector<S> opacities_raw;  // N
  std::vector<S> features;       // Z*N

  int sh_dim() const { return sh_coeff_count(sh_degree); }
  size_t count() const { return opacities_raw.size(); }

  Eigen::Map<Vec3<S>> center(size_t i) { return {centers.data() + 3 * i}; }
  Eigen::Map<const Vec3<S>> center(size_t i) const { return {centers.data() + 3 * i}; }
  Eigen::Map<Vec3<S>> scale_raw(size_t i) { return {scales_raw.data() + 3 * i}; }
  Eigen::Map<const Vec3<S>> scale_raw(size_t i) const { return {scales_raw.data() + 3 * i}; }
  Eigen::Map<Vec4<S>> rotation(size_t i) { return {rotations.data() + 4 * i}; }
  Eigen::Map<const Vec4<S>> rotation(size_t i) const { return {rotations.data() + 4 * i}; }
  S* feature(size_t i) { return features.data() + size_t(sh_dim()) * i; }
  const S* feature(size_t i) const { return features.data() + size_t(sh_dim()) * i; }

  void push_back(const GaussianPrimitive<S>& p) {
    require(p.features.size() == sh_dim(),
            cat("GaussianSet::push_back: feature dim ", p.features.size(), " != ", sh_dim()));
    centers.insert(centers.end(), p.center.data(), p.center.data() + 3);
    scales_raw.insert(scales_raw.end(), p.scale_raw.data(), p.scale_raw.data() + 3);
    rotations.insert(rotations.end(), p.rotation.data(), p.rotation.data() + 4);
    opacities_raw.push_back(p.opacity_raw);
    features.insert(features.end(), p.features.data(), p.features.data() + p.features.size());
  }

  GaussianPrimitive<S> get(size_t i) const {
    GaussianPrimitive<S> p;
    p.center = center(i);
    p.scale_raw = scale_raw(i);
    p.rotation = rotation(i);
    p.opacity_raw = opacities_raw[i];
    p.features = Eigen::Map<const VecX<S>>(feature(i), sh_dim());
    return p;
  }

  Vec3<S> activated_scale(size_t i) const {
    const auto raw = scale_raw(i);
    return {activate_scale(raw[0]), activate_scale(raw[1]), activate_scale(raw[2])};
  }
  S activated_opacity(size_t i) const { return activate_opacity(opacities_raw[i]); }

  void keep(const std::vector<uint8_t>& mask) {
    require(mask.size() == count(), "GaussianSet::keep: mask size mismatch");
    const int z = sh_dim();
    size_t w = 0;
    for (size_t i = 0; i < mask.size(); ++i) {
      if (!mask[i]) continue;
      if (w != i) {
        std::copy_n(centers.data() + 3 * i, 3, centers.data() + 3 * w);
        std::copy_n(scales_raw.data() + 3 * i, 3, scales_raw.data() + 3 * w);
        std::copy_n(rotations.data() + 4 * i, 4, rotations.data() + 4 * w);
        opacities_raw[w] = opacities_raw[i];
        std::copy_n(features.data() + size_t(z) * i, z, features.data() + size_t(z) * w);
      }
      ++w;
    }
    centers.resize(3 * w);
    scales_raw.resize(3 * w);
    rotations.resize(4 * w);
    opacities_raw.resize(w);
    features.resize(size_t(z) * w);
  }

  template <class T>
  GaussianSet<T> cast() const {
    GaussianSet<T> o;
    o.sh_degree = sh_degree;
    o.branch_tag = branch_tag;
    auto cv = [](const std::vector<S>& v) {
      std::vector<T> r(v.size());
      for (size_t i = 0; i < v.size(); ++i) r[i] = T(v[i]);
      return r;
    };
    o.centers = cv(centers);
    o.scales_raw = cv(scales_raw);
    o.rotations = cv(rotations);
    o.opacities_raw = cv(opacities_raw);
    o.features = cv(features);
    return o;
  }
};

// Per-primitive deformation offsets. Mouth-branch deltas keep d_scales and
// d_rotations at zero.
template <class S>
struct DeformationSet {
  std::vector<S> d_centers;    // 3N
  std::vector<S> d_scales;     // 3N, raw (pre-activation) space
  std::vector<S> d_rotations;  // 4N

  size_t count() const { return d_centers.size() / 3; }

  static DeformationSet zeros(size_t n) {
    DeformationSet d;
    d.d_centers.assign(3 * n, S(0));
    d.d_scales.assign(3 * n, S(0));
    d.d_rotations.assign(4 * n, S(0));
    return d;
  }
};

// Sigma = R * diag(s)^2 * R^T for activated scale s and unit quaternion q.
template <class S>
Mat3<S> covariance_from_scale_rotation(const Vec3<S>& s_activated, const Vec4<S>& q) {
  require(all_finite(s_activated.data(), 3) && all_finite(q.data(), 4),
          "covariance_from_scale_rotation: non-finite input");
  require(s_activated.minCoeff() > S(0), "covariance_from_scale_rotation: scale must be positive");
  const Mat3<S> r = quat_to_rotmat(q);
  const Vec3<S> s2 = s_activated.cwiseProduct(s_activated);
  return r * s2.asDiagonal() * r.transpose();
}

// theta_D = {mu + dmu, s + ds, q + dq, alpha, f}. The quaternion sum is kept raw
// here and normalized where it is consumed; a near-zero sum is rejected.
template <class S>
GaussianSet<S> apply_deformation(const GaussianSet<S>& canonical, const DeformationSet<S>& delta) {
  require(delta.count() == canonical.count(),
          cat("apply_deformation: delta count ", delta.count(), " != primitive count ",
              canonical.count()));
  GaussianSet<S> out = canonical;
  const size_t n = canonical.count();
  for (size_t i = 0; i < 3 * n; ++i) {
    out.centers[i] += delta.d_centers[i];
    out.scales_raw[i] += delta.d_scales[i];
  }
  for (size_t i = 0; i < 4 * n; ++i) out.rotations[i] += delta.d_rotations[i];
  for (size_t i = 0; i < n; ++i) {
    const S norm = out.rotation(i).norm();
    require(norm > S(kQuatNormEps),
            cat("apply_deformation: near-zero quaternion sum at primitive ", i));
  }
  return out;
}

// Real SH basis values up to `degree` for a unit direction, 3DGS ordering.
template <class S>
void sh_basis(int degree, const Vec3<S>& dir, S* out) {
  constexpr double kC0 = 0.28209479177387814;
  constexpr double kC1 = 0.4886025119029199;
  constexpr double kC2[5] = {1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
                             -1.0925484305920792, 0.5462742152960396};
  constexpr double kC3[7] = {-0.5900435899266435, 2.890611442640554,  -0.4570457994644658,
                             0.3731763325901154,  -0.4570457994644658, 1.445305721320277,
                             -0.5900435899266435};
  const S x = dir[0], y = dir[1], z = dir[2];
  out[0] = S(kC0);
  if (degree < 1) return;
  out[1] = S(-kC1) * y;
  out[2] = S(kC1) * z;
  out[3] = S(-kC1) * x;
  if (degree < 2) return;
  const S xx = x * x, yy = y * y, zz = z * z;
  out[4] = S(kC2[0]) * x * y;
  out[5] = S(kC2[1]) * y * z;
  out[6] = S(kC2[2]) * (S(2) * zz - xx - yy);
  out[7] = S(kC2[3]) * x * z;
  out[8] = S(kC2[4]) * (xx - yy);
  if (degree < 3) return;
  out[9] = S(kC3[0]) * y * (S(3) * xx - yy);
  out[10] = S(kC3[1]) * x * y * z;
  out[11] = S(kC3[2]) * y * (S(4) * zz - xx - yy);
  out[12] = S(kC3[3]) * z * (S(2) * zz - S(3) * xx - S(3) * yy);
  out[13] = S(kC3[4]) * x * (S(4) * zz - xx - yy);
  out[14] = S(kC3[5]) * z * (xx - yy);
  out[15] = S(kC3[6]) * x * (xx - S(3) * yy);
}

// d(basis_k)/d(dir) for each basis value, same ordering as sh_basis.
template <class S>
void sh_basis_grad(int degree, const Vec3<S>& dir, Vec3<S>* out) {
  constexpr double kC1 = 0.4886025119029199;
  constexpr double kC2[5] = {1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
                             -1.0925484305920792, 0.5462742152960396};
  constexpr double kC3[7] = {-0.5900435899266435, 2.890611442640554,  -0.4570457994644658,
                             0.3731763325901154,  -0.4570457994644658, 1.445305721320277,
                             -0.5900435899266435};
  const S x = dir[0], y = dir[1], z = dir[2];
  out[0].setZero();
  if (degree < 1) return;
  out[1] = Vec3<S>(S(0), S(-kC1), S(0));
  out[2] = Vec3<S>(S(0), S(0), S(kC1));
  out[3] = Vec3<S>(S(-kC1), S(0), S(0));
  if (degree < 2) return;
  const S xx = x * x, yy = y * y, zz = z * z;
  out[4] = S(kC2[0]) * Vec3<S>(y, x, S(0));
  out[5] = S(kC2[1]) * Vec3<S>(S(0), z, y);
  out[6] = S(kC2[2]) * Vec3<S>(S(-2) * x, S(-2) * y, S(4) * z);
  out[7] = S(kC2[3]) * Vec3<S>(z, S(0), x);
  out[8] = S(kC2[4]) * Vec3<S>(S(2) * x, S(-2) * y, S(0));
  if (degree < 3) return;
  out[9] = S(kC3[0]) * Vec3<S>(S(6) * x * y, S(3) * xx - S(3) * yy, S(0));
  out[10] = S(kC3[1]) * Vec3<S>(y * z, x * z, x * y);
  out[11] = S(kC3[2]) * Vec3<S>(S(-2) * x * y, S(4) * zz - xx - S(3) * yy, S(8) * y * z);
  out[12] = S(kC3[3]) * Vec3<S>(S(-6) * x * z, S(-6) * y * z, S(6) * zz - S(3) * xx - S(3) * yy);
  out[13] = S(kC3[4]) * Vec3<S>(S(4) * zz - S(3) * xx - yy, S(-2) * x * y, S(8) * x * z);
  out[14] = S(kC3[5]) * Vec3<S>(S(2) * x * z, S(-2) * y * z, xx - yy);
  out[15] = S(kC3[6]) * Vec3<S>(S(3) * xx - S(3) * yy, S(-6) * x * y, S(0));
}

// Decoded color: per-channel nonnegative clamp of the SH expansion.
template <class S>
Vec3<S> sh_to_color(int degree, const S* f, int f_dim, const Vec3<S>& view_dir) {
  require(f_dim == sh_coeff_count(degree),
          cat("sh_to_color: feature dim ", f_dim, " inconsistent with degree ", degree,
              " (expected ", sh_coeff_count(degree), ")"));
  S basis[16];
  sh_basis(degree, view_dir, basis);
  const int nb = sh_basis_count(degree);
  Vec3<S> c = Vec3<S>::Zero();
  for (int k = 0; k < nb; ++k)
    for (int ch = 0; ch < 3; ++ch) c[ch] += f[3 * k + ch] * basis[k];
  return c.cwiseMax(S(0));
}

// Backward of sh_to_color; accumulates df and returns d(view_dir).
template <class S>
Vec3<S> sh_to_color_backward(int degree, const S* f, const Vec3<S>& view_dir, const Vec3<S>& dc,
                             S* df) {
  S basis[16];
  Vec3<S> bgrad[16];
  sh_basis(degree, view_dir, basis);
  sh_basis_grad(degree, view_dir, bgrad);
  const int nb = sh_basis_count(degree);
  // Recompute the pre-clamp value to gate the clamp.
  Vec3<S> pre = Vec3<S>::Zero();
  for (int k = 0; k < nb; ++k)
    for (int ch = 0; ch < 3; ++ch) pre[ch] += f[3 * k + ch] * basis[k];
  Vec3<S> ddir = Vec3<S>::Zero();
  for (int ch = 0; ch < 3; ++ch) {
    const S g = pre[ch] > S(0) ? dc[ch] : S(0);
    if (g == S(0)) {
      for (int k = 0; k < nb; ++k) df[3 * k + ch] += S(0);
      continue;
    }
    for (int k = 0; k < nb; ++k) {
      df[3 * k + ch] += g * basis[k];
      ddir += g * f[3 * k + ch] * bgrad[k];
    }
  }
  return ddir;
}

}  // namespace dgs
