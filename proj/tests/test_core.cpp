#include <doctest.h>

#include <filesystem>

#include "dgs/checkpoint.hpp"
#include "dgs/gaussian_field.hpp"

using namespace dgs;

namespace {

GaussianSet<double> random_set(Rng& rng, int n, int degree = 1) {
  GaussianSet<double> set;
  set.sh_degree = degree;
  for (int i = 0; i < n; ++i) {
    GaussianPrimitive<double> p;
    for (int k = 0; k < 3; ++k) p.center[k] = uniform<double>(rng, -1.0, 1.0);
    for (int k = 0; k < 3; ++k) p.scale_raw[k] = uniform<double>(rng, -2.0, 1.0);
    Vec4<double> q;
    for (int k = 0; k < 4; ++k) q[k] = normal<double>(rng);
    p.rotation = q / q.norm();
    p.opacity_raw = uniform<double>(rng, -2.0, 2.0);
    p.features = VecX<double>::Zero(set.sh_dim());
    for (int k = 0; k < set.sh_dim(); ++k) p.features[k] = normal<double>(rng);
    set.push_back(p);
  }
  return set;
}

}  // namespace

TEST_CASE("covariance: identity cases") {
  const Vec3<double> ones(1, 1, 1);
  const Vec4<double> qid(1, 0, 0, 0);
  const Mat3<double> s1 = covariance_from_scale_rotation(ones, qid);
  CHECK((s1 - Mat3<double>::Identity()).norm() == doctest::Approx(0.0).epsilon(1e-12));

  const Mat3<double> s2 = covariance_from_scale_rotation(Vec3<double>(2, 1, 1), qid);
  CHECK(s2(0, 0) == doctest::Approx(4.0));
  CHECK(s2(1, 1) == doctest::Approx(1.0));
  CHECK(s2(2, 2) == doctest::Approx(1.0));
  CHECK(std::abs(s2(0, 1)) < 1e-12);
}

TEST_CASE("covariance: 90-degree rotation about z permutes axes") {
  const double s = std::sqrt(0.5);
  const Vec4<double> q90z(s, 0, 0, s);
  const Mat3<double> sig = covariance_from_scale_rotation(Vec3<double>(2, 1, 1), q90z);
  CHECK(sig(0, 0) == doctest::Approx(1.0));
  CHECK(sig(1, 1) == doctest::Approx(4.0));
  CHECK(sig(2, 2) == doctest::Approx(1.0));
}

TEST_CASE("covariance: PSD over random draws") {
  Rng rng(99);
  for (int t = 0; t < 1000; ++t) {
    Vec3<double> s;
    for (int k = 0; k < 3; ++k) s[k] = activate_scale(uniform<double>(rng, -4.0, 2.0));
    Vec4<double> q;
    for (int k = 0; k < 4; ++k) q[k] = normal<double>(rng);
    q /= q.norm();
    const Mat3<double> sig = covariance_from_scale_rotation(s, q);
    Eigen::SelfAdjointEigenSolver<Mat3<double>> es(sig);
    CHECK(es.eigenvalues().minCoeff() >= -1e-12);
  }
}

TEST_CASE("covariance: rejects non-finite input") {
  const Vec4<double> qid(1, 0, 0, 0);
  CHECK_THROWS_AS(
      covariance_from_scale_rotation(Vec3<double>(std::nan(""), 1, 1), qid),
      std::invalid_argument);
}

TEST_CASE("apply_deformation: identity and locality") {
  Rng rng(7);
  GaussianSet<double> set = random_set(rng, 5);
  const DeformationSet<double> zero = DeformationSet<double>::zeros(5);
  const GaussianSet<double> same = apply_deformation(set, zero);
  CHECK(same.centers == set.centers);
  CHECK(same.scales_raw == set.scales_raw);
  CHECK(same.rotations == set.rotations);

  DeformationSet<double> one = DeformationSet<double>::zeros(5);
  one.d_centers[3 * 2 + 0] = 0.1;
  const GaussianSet<double> moved = apply_deformation(set, one);
  for (size_t i = 0; i < 5; ++i) {
    const double expected = set.centers[3 * i] + (i == 2 ? 0.1 : 0.0);
    CHECK(moved.centers[3 * i] == expected);
    CHECK(moved.centers[3 * i + 1] == set.centers[3 * i + 1]);
  }
}

TEST_CASE("apply_deformation: additive inverse recovers centers") {
  Rng rng(13);
  GaussianSet<double> set = random_set(rng, 8);
  DeformationSet<double> d = DeformationSet<double>::zeros(8);
  for (auto& v : d.d_centers) v = 0.01 * normal<double>(rng);
  const GaussianSet<double> fwd = apply_deformation(set, d);
  for (auto& v : d.d_centers) v = -v;
  d.d_scales.assign(d.d_scales.size(), 0.0);
  GaussianSet<double> roundtrip = fwd;
  for (size_t i = 0; i < d.d_centers.size(); ++i) roundtrip.centers[i] += d.d_centers[i];
  for (size_t i = 0; i < d.d_centers.size(); ++i)
    CHECK(std::abs(roundtrip.centers[i] - set.centers[i]) < 1e-12);
}

TEST_CASE("apply_deformation: alpha and features byte-identical") {
  Rng rng(21);
  GaussianSet<double> set = random_set(rng, 16);
  DeformationSet<double> d = DeformationSet<double>::zeros(16);
  for (auto& v : d.d_centers) v = normal<double>(rng);
  for (auto& v : d.d_scales) v = 0.1 * normal<double>(rng);
  for (auto& v : d.d_rotations) v = 0.1 * normal<double>(rng);
  const GaussianSet<double> out = apply_deformation(set, d);
  CHECK(std::memcmp(out.opacities_raw.data(), set.opacities_raw.data(),
                    set.opacities_raw.size() * sizeof(double)) == 0);
  CHECK(std::memcmp(out.features.data(), set.features.data(),
                    set.features.size() * sizeof(double)) == 0);
}

TEST_CASE("apply_deformation: errors") {
  Rng rng(3);
  GaussianSet<double> set = random_set(rng, 3);
  CHECK_THROWS_AS(apply_deformation(set, DeformationSet<double>::zeros(2)),
                  std::invalid_argument);

  DeformationSet<double> d = DeformationSet<double>::zeros(3);
  for (int k = 0; k < 4; ++k) d.d_rotations[4 * 1 + k] = -set.rotations[4 * 1 + k];
  try {
    apply_deformation(set, d);
    CHECK(false);
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("primitive 1") != std::string::npos);
  }
}

TEST_CASE("quaternion renormalization stays unit under perturbation") {
  Rng rng(31);
  for (int t = 0; t < 500; ++t) {
    Vec4<double> q;
    for (int k = 0; k < 4; ++k) q[k] = normal<double>(rng);
    q /= q.norm();
    Vec4<double> dq;
    for (int k = 0; k < 4; ++k) dq[k] = uniform<double>(rng, -1.0, 1.0);
    if (dq.norm() > 0.5) dq *= 0.5 / dq.norm();
    const Vec4<double> n = normalize_quat(Vec4<double>(q + dq));
    CHECK(std::abs(n.norm() - 1.0) < 1e-6);
  }
}

TEST_CASE("sh_to_color: DC term is view independent") {
  const int deg = 0;
  VecX<double> f = VecX<double>::Zero(3);
  f << 1.3, 0.4, -0.2;
  const Vec3<double> c1 = sh_to_color(deg, f.data(), 3, Vec3<double>(0, 0, 1));
  const Vec3<double> c2 =
      sh_to_color(deg, f.data(), 3, Vec3<double>(1, 0, 0));
  CHECK(c1 == c2);
  CHECK(c1[0] == doctest::Approx(1.3 * 0.28209479177387814));
  CHECK(c1[2] == 0.0);  // clamped
}

TEST_CASE("sh_to_color: zero coefficients give black") {
  VecX<double> f = VecX<double>::Zero(12);
  const Vec3<double> c = sh_to_color(1, f.data(), 12, Vec3<double>(0, 1, 0));
  CHECK(c == Vec3<double>::Zero());
}

TEST_CASE("sh_to_color: degree-1 terms flip under antipodal views") {
  // brute-force polynomial oracle for the degree-1 basis
  auto oracle = [](const VecX<double>& f, const Vec3<double>& d) {
    const double c0 = 0.28209479177387814, c1 = 0.4886025119029199;
    Vec3<double> out;
    for (int ch = 0; ch < 3; ++ch) {
      out[ch] = c0 * f[ch] - c1 * d[1] * f[3 + ch] + c1 * d[2] * f[6 + ch] -
                c1 * d[0] * f[9 + ch];
      out[ch] = std::max(0.0, out[ch]);
    }
    return out;
  };
  Rng rng(5);
  for (int t = 0; t < 50; ++t) {
    VecX<double> f(12);
    for (int k = 0; k < 12; ++k) f[k] = normal<double>(rng);
    Vec3<double> d;
    for (int k = 0; k < 3; ++k) d[k] = normal<double>(rng);
    d /= d.norm();
    const Vec3<double> a = sh_to_color(1, f.data(), 12, d);
    const Vec3<double> e = oracle(f, d);
    CHECK((a - e).norm() < 1e-12);
    const Vec3<double> b = sh_to_color(1, f.data(), 12, Vec3<double>(-d));
    const Vec3<double> eb = oracle(f, Vec3<double>(-d));
    CHECK((b - eb).norm() < 1e-12);
  }
}

TEST_CASE("sh_to_color: dimension mismatch rejected") {
  VecX<double> f = VecX<double>::Zero(12);
  CHECK_THROWS_AS(sh_to_color(2, f.data(), 12, Vec3<double>(0, 0, 1)), std::invalid_argument);
}

TEST_CASE("canonical field save/load round-trips bit-exactly") {
  Rng rng(101);
  GaussianSet<float> set;
  set.sh_degree = 1;
  set.branch_tag = BranchTag::Mouth;
  for (int i = 0; i < 37; ++i) {
    GaussianPrimitive<float> p;
    for (int k = 0; k < 3; ++k) p.center[k] = normal<float>(rng);
    for (int k = 0; k < 3; ++k) p.scale_raw[k] = normal<float>(rng);
    for (int k = 0; k < 4; ++k) p.rotation[k] = normal<float>(rng);
    p.opacity_raw = normal<float>(rng);
    p.features = VecX<float>::Zero(set.sh_dim());
    for (int k = 0; k < set.sh_dim(); ++k) p.features[k] = normal<float>(rng);
    set.push_back(p);
  }
  const auto dir = std::filesystem::temp_directory_path() / "dgs_test_ckpt";
  std::filesystem::create_directories(dir);
  save_gaussian_set(dir / "field", set);
  const GaussianSet<float> loaded = load_gaussian_set(dir / "field");
  CHECK(loaded.sh_degree == set.sh_degree);
  CHECK(loaded.branch_tag == set.branch_tag);
  CHECK(loaded.centers == set.centers);
  CHECK(loaded.scales_raw == set.scales_raw);
  CHECK(loaded.rotations == set.rotations);
  CHECK(loaded.opacities_raw == set.opacities_raw);
  CHECK(loaded.features == set.features);
}

TEST_CASE("activations: ranges and inverses") {
  Rng rng(55);
  for (int t = 0; t < 200; ++t) {
    const double raw = uniform<double>(rng, -30.0, 30.0);
    CHECK(activate_scale(raw) > 0.0);
    const double a = activate_opacity(raw);
    CHECK(a > 0.0);
    CHECK(a < 1.0);
  }
  CHECK(raw_from_scale(activate_scale(0.37)) == doctest::Approx(0.37).epsilon(1e-9));
  CHECK(raw_from_opacity(activate_opacity(-1.2)) == doctest::Approx(-1.2).epsilon(1e-9));
}
