#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace dgs {

template <class S> using Vec2 = Eigen::Matrix<S, 2, 1>;
template <class S> using Vec3 = Eigen::Matrix<S, 3, 1>;
template <class S> using Vec4 = Eigen::Matrix<S, 4, 1>;
template <class S> using Mat2 = Eigen::Matrix<S, 2, 2>;
template <class S> using Mat3 = Eigen::Matrix<S, 3, 3>;
template <class S> using VecX = Eigen::Matrix<S, Eigen::Dynamic, 1>;
template <class S> using MatX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

using Rng = std::mt19937_64;

// Floor added to activated scale; keeps covariances SPD.
inline constexpr double kScaleFloor = 1e-6;
// Quaternion sums below this norm cannot be renormalized.
inline constexpr double kQuatNormEps = 1e-8;

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

template <class... Args>
std::string cat(Args&&... args) {
  std::ostringstream os;
  (os << ... << args);
  return os.str();
}

template <class S>
S sigmoid(S x) {
  if (x >= S(0)) {
    const S e = std::exp(-x);
    return S(1) / (S(1) + e);
  }
  const S e = std::exp(x);
  return e / (S(1) + e);
}

template <class S>
S softplus(S x) {
  // log(1 + e^x), stable for large |x|
  if (x > S(20)) return x;
  if (x < S(-20)) return std::exp(x);
  return std::log1p(std::exp(x));
}

template <class S>
S inv_softplus(S y) {
  // inverse of softplus on y > 0
  if (y > S(20)) return y;
  return std::log(std::expm1(y));
}

template <class S>
S activate_scale(S raw) {
  return softplus(raw) + S(kScaleFloor);
}

template <class S>
S activate_scale_grad(S raw) {
  return sigmoid(raw);
}

template <class S>
S raw_from_scale(S activated) {
  return inv_softplus(activated - S(kScaleFloor));
}

template <class S>
S activate_opacity(S raw) {
  return sigmoid(raw);
}

template <class S>
S activate_opacity_grad(S raw) {
  const S s = sigmoid(raw);
  return s * (S(1) - s);
}

template <class S>
S raw_from_opacity(S activated) {
  return std::log(activated) - std::log1p(-activated);
}

// Rotation matrix of a unit quaternion (w, x, y, z).
template <class S>
Mat3<S> quat_to_rotmat(const Vec4<S>& q) {
  const S w = q[0], x = q[1], y = q[2], z = q[3];
  Mat3<S> r;
  r << S(1) - S(2) * (y * y + z * z), S(2) * (x * y - w * z), S(2) * (x * z + w * y),
       S(2) * (x * y + w * z), S(1) - S(2) * (x * x + z * z), S(2) * (y * z - w * x),
       S(2) * (x * z - w * y), S(2) * (y * z + w * x), S(1) - S(2) * (x * x + y * y);
  return r;
}

// d(quat_to_rotmat)/dq_k for a unit quaternion, k in {w,x,y,z}.
template <class S>
std::array<Mat3<S>, 4> quat_to_rotmat_grad(const Vec4<S>& q) {
  const S w = q[0], x = q[1], y = q[2], z = q[3];
  std::array<Mat3<S>, 4> g;
  g[0] << S(0), -z, y,
          z, S(0), -x,
          -y, x, S(0);
  g[1] << S(0), y, z,
          y, S(-2) * x, -w,
          z, w, S(-2) * x;
  g[2] << S(-2) * y, x, w,
          x, S(0), z,
          -w, z, S(-2) * y;
  g[3] << S(-2) * z, -w, x,
          w, S(-2) * z, y,
          x, y, S(0);
  for (auto& m : g) m *= S(2);
  return g;
}

template <class S>
Vec4<S> normalize_quat(const Vec4<S>& q) {
  const S n = q.norm();
  require(n > S(kQuatNormEps), "normalize_quat: near-zero quaternion");
  return q / n;
}

// Pulls upstream gradient through q_hat = q / |q|.
template <class S>
Vec4<S> normalize_quat_backward(const Vec4<S>& q, const Vec4<S>& d_qhat) {
  const S n = q.norm();
  const Vec4<S> qh = q / n;
  return (d_qhat - qh * qh.dot(d_qhat)) / n;
}

template <class S>
bool all_finite(const S* p, size_t n) {
  for (size_t i = 0; i < n; ++i)
    if (!std::isfinite(p[i])) return false;
  return true;
}

template <class S>
S uniform(Rng& rng, S lo, S hi) {
  std::uniform_real_distribution<S> d(lo, hi);
  return d(rng);
}

template <class S>
S normal(Rng& rng, S mean = S(0), S stddev = S(1)) {
  std::normal_distribution<S> d(mean, stddev);
  return d(rng);
}

template <class S>
struct Aabb {
  Vec3<S> lo{Vec3<S>::Zero()};
  Vec3<S> hi{Vec3<S>::Ones()};

  Vec3<S> extent() const { return hi - lo; }
  S diagonal() const { return extent().norm(); }
  // Maps world position to the unit cube, clamping outside queries.
  Vec3<S> to_unit(const Vec3<S>& p) const {
    Vec3<S> u;
    for (int k = 0; k < 3; ++k) {
      const S span = hi[k] - lo[k];
      S v = span > S(0) ? (p[k] - lo[k]) / span : S(0);
      u[k] = std::min(S(1), std::max(S(0), v));
    }
    return u;
  }
};

}  // namespace dgs
