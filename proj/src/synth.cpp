#include "dgs/synth.hpp"

#include <json.hpp>

#include <cstdio>

#include "dgs/io.hpp"
#include "dgs/rasterizer.hpp"

namespace dgs {

using nlohmann::json;

namespace {

double smoothstep(double lo, double hi, double x) {
  const double t = std::min(1.0, std::max(0.0, (x - lo) / (hi - lo)));
  return t * t * (3.0 - 2.0 * t);
}

void normalize_trace(std::vector<double>& v) {
  double lo = v[0], hi = v[0];
  for (double x : v) {
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  const double span = hi - lo;
  for (double& x : v) x = span > 0 ? (x - lo) / span : 0.0;
}

std::string frame_name(const char* prefix, int i) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s/%05d.png", prefix, i);
  return buf;
}

// Head geometry constants (world units; +y is down, camera looks down +z).
constexpr double kHeadRx = 0.50, kHeadRy = 0.60, kHeadRz = 0.42;
constexpr double kMouthY = 0.25;
constexpr double kApertureHalfW = 0.17, kApertureHalfH = 0.085;
constexpr double kEyeX = 0.19, kEyeY = -0.16;
constexpr double kCameraDist = 2.2;

// Depth (z < 0) of the ellipsoid front surface above image-plane point (x, y).
double shell_z(double x, double y) {
  const double q = 1.0 - (x * x) / (kHeadRx * kHeadRx) - (y * y) / (kHeadRy * kHeadRy);
  return -kHeadRz * std::sqrt(std::max(0.0, q));
}

struct Builder {
  SynthGroundTruth gt;
  int z_dim;

  void add(const Vec3<double>& mu, double sigma, double alpha, const Vec3<double>& rgb,
           bool cavity, double w_jaw, double w_blink) {
    GaussianPrimitive<double> p;
    p.center = mu;
    p.scale_raw = Vec3<double>::Constant(raw_from_scale(sigma));
    p.rotation = Vec4<double>(1, 0, 0, 0);
    p.opacity_raw = raw_from_opacity(alpha);
    p.features = VecX<double>::Zero(z_dim);
    constexpr double kShC0 = 0.28209479177387814;
    for (int c = 0; c < 3; ++c) p.features[c] = rgb[c] / kShC0;
    gt.canonical.push_back(p);
    gt.is_cavity.push_back(cavity ? 1 : 0);
    gt.jaw_weight.push_back(w_jaw);
    gt.blink_weight.push_back(w_blink);
  }
};

}  // namespace

GaussianSet<double> SynthGroundTruth::frame_set(int frame) const {
  GaussianSet<double> out = canonical;
  const double jaw = jaw_trace[size_t(frame)];
  const double blink = blink_trace[size_t(frame)];
  for (size_t i = 0; i < out.count(); ++i)
    out.centers[3 * i + 1] += jaw * jaw_weight[i] + blink * blink_weight[i];
  return out;
}

SynthGroundTruth build_ground_truth(const SynthSceneSpec& spec) {
  Rng rng(spec.seed);
  Builder b;
  b.z_dim = sh_coeff_count(spec.sh_degree);
  b.gt.canonical.sh_degree = spec.sh_degree;
  b.gt.background = Vec3<double>(0.12, 0.30, 0.24);

  // Face shell: front hemisphere of the ellipsoid, aperture removed.
  const double shell_area = 2.0 * M_PI * std::sqrt(kHeadRx * kHeadRy) * kHeadRz * 2.2;
  const double sigma_shell = 0.8 * std::sqrt(shell_area / std::max(1, spec.shell_points));
  int placed = 0;
  while (placed < spec.shell_points) {
    Vec3<double> d(normal<double>(rng), normal<double>(rng), normal<double>(rng));
    if (d.norm() < 1e-6) continue;
    d.normalize();
    Vec3<double> p(kHeadRx * d[0], kHeadRy * d[1], kHeadRz * d[2]);
    if (p[2] > 0.06) continue;  // back of the head is never seen
    const double ax = (p[0]) / kApertureHalfW;
    const double ay = (p[1] - kMouthY) / kApertureHalfH;
    if (p[2] < 0 && ax * ax + ay * ay < 1.3) continue;  // mouth aperture hole
    Vec3<double> rgb(0.80, 0.62, 0.52);
    if (p[1] < -0.38) rgb = Vec3<double>(0.20, 0.13, 0.10);  // hair cap
    rgb[0] += 0.05 * std::sin(7.0 * p[0]) * std::cos(5.0 * p[1]);
    rgb[2] += 0.04 * std::sin(6.0 * p[1] + 2.0 * p[0]);
    const double w_jaw = smoothstep(kMouthY + 0.02, kMouthY + 0.20, p[1]);
    b.add(p, sigma_shell, 0.92, rgb, false, w_jaw, 0.0);
    ++placed;
  }

  // Lower curtain: lip and chin patch sealing the aperture at rest, rides the jaw.
  {
    const int nx = 13, ny = 7;
    for (int iy = 0; iy < ny; ++iy)
      for (int ix = 0; ix < nx; ++ix) {
        const double x = -kApertureHalfW + 2.0 * kApertureHalfW * ix / (nx - 1);
        const double y = kMouthY - kApertureHalfH + (2.0 * kApertureHalfH + 0.05) * iy / (ny - 1);
        const double z = shell_z(x, y) - 0.015;
        const bool lip = iy <= 2;
        const Vec3<double> rgb = lip ? Vec3<double>(0.72, 0.36, 0.34)
                                     : Vec3<double>(0.78, 0.58, 0.50);
        b.add(Vec3<double>(x, y, z), 0.030, 0.95, rgb, false, 1.0, 0.0);
      }
  }

  // Upper lip: static row along the top edge of the aperture.
  for (int ix = 0; ix < 13; ++ix) {
    const double x = -kApertureHalfW + 2.0 * kApertureHalfW * ix / 12.0;
    const double y = kMouthY - kApertureHalfH - 0.018;
    b.add(Vec3<double>(x, y, shell_z(x, y) - 0.012), 0.028, 0.95, Vec3<double>(0.70, 0.34, 0.33),
          false, 0.0, 0.0);
  }

  // Inside-mouth content, static: teeth row, tongue, cavity backdrop.
  for (int ix = 0; ix < 7; ++ix) {
    const double x = -0.12 + 0.24 * ix / 6.0;
    b.add(Vec3<double>(x, kMouthY - 0.042, -0.30), 0.020, 0.95, Vec3<double>(0.93, 0.93, 0.88),
          true, 0.0, 0.0);
  }
  for (int ix = 0; ix < 3; ++ix)
    b.add(Vec3<double>(-0.07 + 0.07 * ix, kMouthY + 0.035, -0.26), 0.036, 0.92,
          Vec3<double>(0.55, 0.22, 0.22), true, 0.0, 0.0);
  for (int iy = 0; iy < 3; ++iy)
    for (int ix = 0; ix < 5; ++ix)
      b.add(Vec3<double>(-0.14 + 0.07 * ix, kMouthY - 0.06 + 0.06 * iy, -0.21), 0.055, 0.92,
            Vec3<double>(0.10, 0.05, 0.05), true, 0.0, 0.0);

  // Eyes and eyelids.
  for (int side = -1; side <= 1; side += 2) {
    const double ex = side * kEyeX;
    for (int k = -1; k <= 1; ++k)
      b.add(Vec3<double>(ex + 0.030 * k, kEyeY, shell_z(ex + 0.030 * k, kEyeY) - 0.012), 0.027,
            0.94, Vec3<double>(0.92, 0.92, 0.92), false, 0.0, 0.0);
    b.add(Vec3<double>(ex, kEyeY, shell_z(ex, kEyeY) - 0.020), 0.020, 0.95,
          Vec3<double>(0.13, 0.22, 0.40), false, 0.0, 0.0);
    for (int iy = 0; iy < 2; ++iy)
      for (int ix = 0; ix < 4; ++ix) {
        const double x = ex - 0.055 + 0.110 * ix / 3.0;
        const double y = kEyeY - 0.075 + 0.030 * iy;
        b.add(Vec3<double>(x, y, shell_z(x, y) - 0.028), 0.026, 0.95,
              Vec3<double>(0.78, 0.58, 0.48), false, 0.0, 1.0);
      }
  }

  // Scale group gains by the spec amplitudes.
  for (size_t i = 0; i < b.gt.canonical.count(); ++i) {
    b.gt.jaw_weight[i] *= spec.jaw_amplitude;
    b.gt.blink_weight[i] *= spec.blink_amplitude;
  }

  // Analytic motion traces, min-max normalized to [0,1].
  const int F = spec.frames;
  b.gt.jaw_trace.resize(size_t(F));
  b.gt.blink_trace.resize(size_t(F));
  b.gt.teeth_trace.resize(size_t(F));
  std::vector<double> blink_centers;
  for (int k = 0; k < int(spec.blink_count); ++k)
    blink_centers.push_back(uniform<double>(rng, 0.12, 0.88));
  for (int f = 0; f < F; ++f) {
    const double u = F > 1 ? double(f) / double(F - 1) : 0.0;
    b.gt.jaw_trace[size_t(f)] = 0.5 - 0.5 * std::cos(2.0 * M_PI * spec.jaw_cycles * u) +
                                0.12 * std::sin(2.0 * M_PI * 0.7 * spec.jaw_cycles * u + 1.0);
    double blink = 0.0;
    for (double c : blink_centers) blink += std::exp(-0.5 * std::pow((u - c) / 0.022, 2.0));
    b.gt.blink_trace[size_t(f)] = std::min(1.0, blink);
  }
  if (F > 1) {
    normalize_trace(b.gt.jaw_trace);
    normalize_trace(b.gt.blink_trace);
  }
  for (int f = 0; f < F; ++f)
    b.gt.teeth_trace[size_t(f)] = smoothstep(0.08, 0.85, b.gt.jaw_trace[size_t(f)]);
  if (F > 1) normalize_trace(b.gt.teeth_trace);

  // Condition vectors: channel 0 carries the driving trace, the rest are
  // decorrelated nuisance harmonics.
  std::vector<double> freq_a, phase_a, freq_e, phase_e;
  for (int k = 1; k < spec.dim_audio; ++k) {
    freq_a.push_back(uniform<double>(rng, 0.5, 4.0));
    phase_a.push_back(uniform<double>(rng, 0.0, 2.0 * M_PI));
  }
  for (int k = 1; k < spec.dim_expr; ++k) {
    freq_e.push_back(uniform<double>(rng, 0.5, 4.0));
    phase_e.push_back(uniform<double>(rng, 0.0, 2.0 * M_PI));
  }
  b.gt.audio.resize(size_t(F));
  b.gt.expr.resize(size_t(F));
  for (int f = 0; f < F; ++f) {
    const double u = F > 1 ? double(f) / double(F - 1) : 0.0;
    VecX<double> a = VecX<double>::Zero(spec.dim_audio);
    a[0] = 2.0 * b.gt.jaw_trace[size_t(f)] - 1.0;
    for (int k = 1; k < spec.dim_audio; ++k)
      a[k] = 0.3 * std::sin(2.0 * M_PI * freq_a[size_t(k - 1)] * u + phase_a[size_t(k - 1)]);
    VecX<double> e = VecX<double>::Zero(spec.dim_expr);
    e[0] = 2.0 * b.gt.blink_trace[size_t(f)] - 1.0;
    for (int k = 1; k < spec.dim_expr; ++k)
      e[k] = 0.2 * std::sin(2.0 * M_PI * freq_e[size_t(k - 1)] * u + phase_e[size_t(k - 1)]);
    b.gt.audio[size_t(f)] = a;
    b.gt.expr[size_t(f)] = e;
  }

  // Camera orbit.
  const double f_len = 1.4 * std::min(spec.width, spec.height);
  b.gt.cameras.resize(size_t(F));
  for (int f = 0; f < F; ++f) {
    const double u = F > 1 ? double(f) / double(F - 1) : 0.0;
    const double yaw = spec.orbit_amplitude * std::sin(2.0 * M_PI * spec.orbit_cycles * u);
    const double pitch = 0.4 * spec.orbit_amplitude * std::sin(2.0 * M_PI * 0.5 * u + 0.7);
    const Vec3<double> eye(kCameraDist * std::sin(yaw) * std::cos(pitch),
                           kCameraDist * std::sin(pitch),
                           -kCameraDist * std::cos(yaw) * std::cos(pitch));
    b.gt.cameras[size_t(f)] =
        Camera<double>::look_at(eye, Vec3<double>::Zero(), Vec3<double>(0, -1, 0), f_len, f_len,
                                spec.width, spec.height, 0.1);
  }

  // Bounding boxes: scene-wide plus per-branch initialization regions, padded
  // to cover the full motion range.
  const double pad = 0.08 + spec.jaw_amplitude + spec.blink_amplitude;
  Aabb<double> scene;
  scene.lo = Vec3<double>(1e9, 1e9, 1e9);
  scene.hi = Vec3<double>(-1e9, -1e9, -1e9);
  Aabb<double> mouth = scene, face = scene;
  for (size_t i = 0; i < b.gt.canonical.count(); ++i) {
    const Vec3<double> p = b.gt.canonical.center(i);
    Aabb<double>& box = b.gt.is_cavity[i] ? mouth : face;
    for (int k = 0; k < 3; ++k) {
      box.lo[k] = std::min(box.lo[k], p[k]);
      box.hi[k] = std::max(box.hi[k], p[k]);
      scene.lo[k] = std::min(scene.lo[k], p[k]);
      scene.hi[k] = std::max(scene.hi[k], p[k]);
    }
  }
  for (int k = 0; k < 3; ++k) {
    scene.lo[k] -= pad; scene.hi[k] += pad;
    face.lo[k] -= pad; face.hi[k] += pad;
    mouth.lo[k] -= 0.05; mouth.hi[k] += 0.05;
  }
  b.gt.scene_bbox = scene;
  b.gt.face_bbox = face;
  b.gt.mouth_bbox = mouth;
  b.gt.canonical.branch_tag = BranchTag::Face;
  return b.gt;
}

namespace {

// Per-pixel alpha-weighted shares of cavity vs. face content, used to derive
// the inside-mouth mask from known memberships.
void membership_shares(const GaussianSet<double>& set, const Camera<double>& cam,
                       const std::vector<uint8_t>& is_cavity, Image<double>& w_face,
                       Image<double>& w_cavity) {
  auto projected = project_all(set, cam);
  std::vector<int> order(projected.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = int(i);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (projected[size_t(a)].depth != projected[size_t(b)].depth)
      return projected[size_t(a)].depth < projected[size_t(b)].depth;
    return projected[size_t(a)].src < projected[size_t(b)].src;
  });
  w_face = Image<double>(cam.height, cam.width, 1);
  w_cavity = Image<double>(cam.height, cam.width, 1);
  for (int y = 0; y < cam.height; ++y)
    for (int x = 0; x < cam.width; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      double trans = 1.0;
      for (int li : order) {
        const auto& g = projected[size_t(li)];
        const double alpha_t = g.alpha * detail::gaussian_weight(g, px, py);
        if (alpha_t < kAlphaSkip) continue;
        (is_cavity[size_t(g.src)] ? w_cavity : w_face).at(0, y, x) += alpha_t * trans;
        trans *= 1.0 - alpha_t;
      }
    }
}

}  // namespace

SynthSceneSpec synth_spec_from_json(const std::string& text) {
  const json j = json::parse(text);
  SynthSceneSpec s;
  auto get = [&j](const char* key, auto fallback) {
    using T = decltype(fallback);
    return j.contains(key) ? j.at(key).get<T>() : fallback;
  };
  s.seed = get("seed", s.seed);
  s.frames = get("frames", s.frames);
  s.width = get("width", s.width);
  s.height = get("height", s.height);
  s.shell_points = get("shell_points", s.shell_points);
  s.jaw_amplitude = get("jaw_amplitude", s.jaw_amplitude);
  s.blink_amplitude = get("blink_amplitude", s.blink_amplitude);
  s.jaw_cycles = get("jaw_cycles", s.jaw_cycles);
  s.blink_count = get("blink_count", s.blink_count);
  s.orbit_amplitude = get("orbit_amplitude", s.orbit_amplitude);
  s.orbit_cycles = get("orbit_cycles", s.orbit_cycles);
  s.dim_audio = get("dim_audio", s.dim_audio);
  s.dim_expr = get("dim_expr", s.dim_expr);
  s.test_every = get("test_every", s.test_every);
  s.sh_degree = get("sh_degree", s.sh_degree);
  return s;
}

std::string synth_spec_to_json(const SynthSceneSpec& s) {
  json j{{"seed", s.seed},
         {"frames", s.frames},
         {"width", s.width},
         {"height", s.height},
         {"shell_points", s.shell_points},
         {"jaw_amplitude", s.jaw_amplitude},
         {"blink_amplitude", s.blink_amplitude},
         {"jaw_cycles", s.jaw_cycles},
         {"blink_count", s.blink_count},
         {"orbit_amplitude", s.orbit_amplitude},
         {"orbit_cycles", s.orbit_cycles},
         {"dim_audio", s.dim_audio},
         {"dim_expr", s.dim_expr},
         {"test_every", s.test_every},
         {"sh_degree", s.sh_degree}};
  return j.dump(2) + "\n";
}

void generate_synthetic(const SynthSceneSpec& spec, const std::filesystem::path& out_dir) {
  require(spec.frames >= 1, "generate_synthetic: frame count must be >= 1");
  const SynthGroundTruth gt = build_ground_truth(spec);

  namespace fs = std::filesystem;
  fs::create_directories(out_dir / "frames");
  fs::create_directories(out_dir / "masks_face");
  fs::create_directories(out_dir / "masks_mouth");
  fs::create_directories(out_dir / "cond");

  json jframes = json::array();
  std::vector<float> audio_blob, expr_blob;
  RenderOptions<double> opts;
  opts.background = gt.background;
  opts.early_termination = false;

  for (int f = 0; f < spec.frames; ++f) {
    const GaussianSet<double> set = gt.frame_set(f);
    const Camera<double>& cam = gt.cameras[size_t(f)];
    const RenderOutput<double> rendered = render_naive(set, cam, opts);
    write_png(out_dir / frame_name("frames", f), rendered.color.cast<float>());

    Image<double> w_face, w_cavity;
    membership_shares(set, cam, gt.is_cavity, w_face, w_cavity);
    Image<float> mask_mouth(spec.height, spec.width, 1);
    Image<float> mask_face(spec.height, spec.width, 1);
    for (int y = 0; y < spec.height; ++y)
      for (int x = 0; x < spec.width; ++x) {
        const bool mouth =
            w_cavity.at(0, y, x) > std::max(w_face.at(0, y, x), 0.02);
        mask_mouth.at(0, y, x) = mouth ? 1.0f : 0.0f;
        mask_face.at(0, y, x) = mouth ? 0.0f : 1.0f;
      }
    write_png(out_dir / frame_name("masks_mouth", f), mask_mouth);
    write_png(out_dir / frame_name("masks_face", f), mask_face);

    json jr{{"file", frame_name("frames", f)},
            {"mask_face", frame_name("masks_face", f)},
            {"mask_mouth", frame_name("masks_mouth", f)}};
    json rot = json::array();
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) rot.push_back(float(cam.rotation(r, c)));
    json tr = json::array();
    for (int k = 0; k < 3; ++k) tr.push_back(float(cam.translation[k]));
    jr["rotation"] = rot;
    jr["translation"] = tr;
    jframes.push_back(jr);

    for (int k = 0; k < spec.dim_audio; ++k) audio_blob.push_back(float(gt.audio[size_t(f)][k]));
    for (int k = 0; k < spec.dim_expr; ++k) expr_blob.push_back(float(gt.expr[size_t(f)][k]));
  }

  write_f32_blob(out_dir / "cond" / "a.bin", audio_blob.data(), audio_blob.size());
  write_f32_blob(out_dir / "cond" / "e.bin", expr_blob.data(), expr_blob.size());
  const json jm{{"jaw_open", gt.jaw_trace}, {"blink", gt.blink_trace},
                {"teeth_vis", gt.teeth_trace}};
  write_text_file(out_dir / "cond" / "m.json", jm.dump(2) + "\n");

  std::vector<int> train_split, test_split;
  for (int f = 0; f < spec.frames; ++f)
    (spec.test_every > 0 && f % spec.test_every == 0 ? test_split : train_split).push_back(f);

  auto bbox_json = [](const Aabb<double>& b) {
    return json{{"lo", {float(b.lo[0]), float(b.lo[1]), float(b.lo[2])}},
                {"hi", {float(b.hi[0]), float(b.hi[1]), float(b.hi[2])}}};
  };
  const Camera<double>& cam0 = gt.cameras[0];
  json manifest{
      {"version", 1},
      {"frame_count", spec.frames},
      {"width", spec.width},
      {"height", spec.height},
      {"background", {float(gt.background[0]), float(gt.background[1]), float(gt.background[2])}},
      {"dim_audio", spec.dim_audio},
      {"dim_expr", spec.dim_expr},
      {"intrinsics",
       {{"fx", float(cam0.fx)},
        {"fy", float(cam0.fy)},
        {"cx", float(cam0.cx)},
        {"cy", float(cam0.cy)},
        {"near", float(cam0.near_plane)}}},
      {"scene_bbox", bbox_json(gt.scene_bbox)},
      {"face_bbox", bbox_json(gt.face_bbox)},
      {"mouth_bbox", bbox_json(gt.mouth_bbox)},
      {"train_split", train_split},
      {"test_split", test_split},
      {"frames", jframes},
  };
  write_text_file(out_dir / "manifest.json", manifest.dump(2) + "\n");
}

}  // namespace dgs
