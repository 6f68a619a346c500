#pragma once

#include "dgs/fusion.hpp"
#include "dgs/losses.hpp"
#include "dgs/motion_field.hpp"
#include "dgs/rasterizer.hpp"

namespace dgs {

struct GradReport {
  std::string name;
  double max_rel_err = 0.0;
  long checks = 0;

  void absorb(double rel) {
    max_rel_err = std::max(max_rel_err, rel);
    checks += 1;
  }
};

namespace gradcheck_detail {

// Relative error with an absolute floor so never-excited parameters compare
// cleanly against zero.
inline double rel_err(double analytic, double fd, double floor_eps) {
  const double scale = std::max({std::abs(analytic), std::abs(fd), floor_eps});
  return std::abs(analytic - fd) / scale;
}

// Gradcheck scenes keep every projected footprint wide and opaque enough that
// no pixel sits near the 1/255 skip gate, the 3-sigma cull, or the SH clamp;
// finite differencing then probes smooth territory only.
template <class S>
GaussianSet<S> random_wide_scene(Rng& rng, int n, int sh_degree) {
  GaussianSet<S> set;
  set.sh_degree = sh_degree;
  const int z = set.sh_dim();
  for (int i = 0; i < n; ++i) {
    GaussianPrimitive<S> p;
    p.center = Vec3<S>(uniform<S>(rng, S(-0.4), S(0.4)), uniform<S>(rng, S(-0.4), S(0.4)),
                       uniform<S>(rng, S(2.6), S(3.4)));
    for (int k = 0; k < 3; ++k)
      p.scale_raw[k] = raw_from_scale(uniform<S>(rng, S(1.2), S(1.8)));
    Vec4<S> q;
    for (int k = 0; k < 4; ++k) q[k] = normal<S>(rng);
    p.rotation = q.norm() > S(1e-3) ? Vec4<S>(q / q.norm()) : Vec4<S>(S(1), S(0), S(0), S(0));
    p.opacity_raw = uniform<S>(rng, S(0.4), S(1.4));
    p.features = VecX<S>::Zero(z);
    for (int k = 0; k < z; ++k)
      p.features[k] = k < 3 ? uniform<S>(rng, S(0.9), S(1.6))
                            : uniform<S>(rng, S(-0.05), S(0.05));
    set.push_back(p);
  }
  return set;
}

template <class S>
Camera<S> gradcheck_camera() {
  Camera<S> cam;
  cam.width = 24;
  cam.height = 24;
  cam.fx = cam.fy = S(30);
  cam.cx = S(12);
  cam.cy = S(12);
  cam.near_plane = S(0.1);
  return cam;
}

template <class S>
Image<S> random_image(Rng& rng, int h, int w, int c, S lo, S hi) {
  Image<S> img(h, w, c);
  for (auto& v : img.data) v = uniform<S>(rng, lo, hi);
  return img;
}

}  // namespace gradcheck_detail

// Finite-difference suite for the rasterizer: loss = sum(Wc . C) + sum(Wa . A)
// with fixed random weights, background compositing on, early termination off.
template <class S>
std::vector<GradReport> gradcheck_rasterizer(int n_scenes, uint64_t seed, S h = S(1e-5)) {
  using namespace gradcheck_detail;
  std::vector<GradReport> reports{{"centers"}, {"scales_raw"}, {"rotations"},
                                  {"opacities_raw"}, {"features"}};
  const double floor_eps = 1e-6;

  for (int scene = 0; scene < n_scenes; ++scene) {
    Rng rng(seed + uint64_t(scene) * 7919);
    const int n = 4 + int(rng() % 5);
    GaussianSet<S> set = random_wide_scene<S>(rng, n, /*sh_degree=*/1);
    const Camera<S> cam = gradcheck_camera<S>();
    RenderOptions<S> opts;
    opts.background = Vec3<S>(S(0.2), S(0.3), S(0.4));
    opts.early_termination = false;
    const Image<S> wc = random_image<S>(rng, cam.height, cam.width, 3, S(-1), S(1));
    const Image<S> wa = random_image<S>(rng, cam.height, cam.width, 1, S(-1), S(1));

    auto loss = [&](const GaussianSet<S>& s) {
      const RenderOutput<S> out = render_forward(s, cam, opts);
      S acc = S(0);
      for (size_t i = 0; i < out.color.data.size(); ++i) acc += out.color.data[i] * wc.data[i];
      for (size_t i = 0; i < out.alpha.data.size(); ++i) acc += out.alpha.data[i] * wa.data[i];
      return acc;
    };

    const RenderOutput<S> fwd = render_forward(set, cam, opts);
    const GaussianGrads<S> grads = render_backward(set, fwd, wc, wa);

    auto check = [&](GradReport& rep, std::vector<S>& params, const std::vector<S>& analytic) {
      for (size_t k = 0; k < params.size(); ++k) {
        const S saved = params[k];
        params[k] = saved + h;
        const S lp = loss(set);
        params[k] = saved - h;
        const S lm = loss(set);
        params[k] = saved;
        const double fd = double(lp - lm) / double(2 * h);
        rep.absorb(rel_err(double(analytic[k]), fd, floor_eps));
      }
    };
    check(reports[0], set.centers, grads.d_centers);
    check(reports[1], set.scales_raw, grads.d_scales_raw);
    check(reports[2], set.rotations, grads.d_rotations);
    check(reports[3], set.opacities_raw, grads.d_opacities_raw);
    check(reports[4], set.features, grads.d_features);
  }
  return reports;
}

// Finite-difference suite for a motion-field branch: loss = sum(W . delta)
// with fixed random weights over the deformation outputs.
template <class S>
std::vector<GradReport> gradcheck_motion_field(BranchTag tag, int n_configs, uint64_t seed,
                                               S h = S(1e-5)) {
  using namespace gradcheck_detail;
  std::vector<GradReport> reports{{"hash_tables"}, {"attention_grids"}, {"decoder_weights"}};
  const double floor_eps = 1e-6;

  for (int c = 0; c < n_configs; ++c) {
    Rng rng(seed + uint64_t(c) * 104729);
    MotionFieldConfig<S> cfg;
    cfg.grid.levels = 3;
    cfg.grid.features = 2;
    cfg.grid.log2_table_size = 6;  // exercises the hashed path
    cfg.grid.base_resolution = 4;
    cfg.hidden_width = 16;
    cfg.hidden_depth = 2;
    cfg.dim_audio = 5;
    cfg.dim_expr = 3;
    Aabb<S> bbox;
    bbox.lo = Vec3<S>(S(-1), S(-1), S(-1));
    bbox.hi = Vec3<S>(S(1), S(1), S(1));

    MotionFieldBranch<S> branch;
    branch.init(tag, cfg, bbox, seed + uint64_t(c));
    // Randomize the zero output head so decoder gradients are exercised.
    for (auto& w : branch.decoder.weights)
      for (int i = 0; i < w.size(); ++i) w.data()[i] += S(0.2) * normal<S>(rng);
    for (auto& bs : branch.decoder.biases)
      for (int i = 0; i < bs.size(); ++i) bs.data()[i] += S(0.1) * normal<S>(rng);
    if (branch.has_attention())
      for (auto& plane : branch.attention.planes)
        for (auto& v : plane) v = S(0.5) * normal<S>(rng);

    const int n = 10;
    GaussianSet<S> set;
    set.sh_degree = 0;
    for (int i = 0; i < n; ++i) {
      GaussianPrimitive<S> p;
      for (int k = 0; k < 3; ++k) p.center[k] = uniform<S>(rng, S(-0.9), S(0.9));
      p.features = VecX<S>::Zero(set.sh_dim());
      set.push_back(p);
    }
    VecX<S> audio(cfg.dim_audio), expr(cfg.dim_expr);
    for (int k = 0; k < cfg.dim_audio; ++k) audio[k] = normal<S>(rng);
    for (int k = 0; k < cfg.dim_expr; ++k) expr[k] = normal<S>(rng);
    if (tag == BranchTag::Mouth) expr = VecX<S>();

    DeformationSet<S> w = DeformationSet<S>::zeros(size_t(n));
    for (auto& v : w.d_centers) v = normal<S>(rng);
    if (tag == BranchTag::Face) {
      for (auto& v : w.d_scales) v = normal<S>(rng);
      for (auto& v : w.d_rotations) v = normal<S>(rng);
    }

    auto loss = [&]() {
      const DeformationSet<S> d = branch.forward(set, audio, expr, nullptr);
      S acc = S(0);
      for (size_t i = 0; i < d.d_centers.size(); ++i) acc += d.d_centers[i] * w.d_centers[i];
      for (size_t i = 0; i < d.d_scales.size(); ++i) acc += d.d_scales[i] * w.d_scales[i];
      for (size_t i = 0; i < d.d_rotations.size(); ++i)
        acc += d.d_rotations[i] * w.d_rotations[i];
      return acc;
    };

    typename MotionFieldBranch<S>::Trace trace;
    branch.forward(set, audio, expr, &trace);
    const auto grads = branch.backward(trace, w);

    auto check_span = [&](GradReport& rep, S* params, const S* analytic, size_t count) {
      for (size_t k = 0; k < count; ++k) {
        const S saved = params[k];
        params[k] = saved + h;
        const S lp = loss();
        params[k] = saved - h;
        const S lm = loss();
        params[k] = saved;
        const double fd = double(lp - lm) / double(2 * h);
        rep.absorb(rel_err(double(analytic[k]), fd, floor_eps));
      }
    };

    for (size_t t = 0; t < branch.encoder.tables.size(); ++t)
      check_span(reports[0], branch.encoder.tables[t].data(), grads.d_tables[t].data(),
                 branch.encoder.tables[t].size());
    if (branch.has_attention())
      for (size_t t = 0; t < branch.attention.planes.size(); ++t)
        check_span(reports[1], branch.attention.planes[t].data(), grads.d_attention[t].data(),
                   branch.attention.planes[t].size());
    for (int l = 0; l < branch.decoder.layer_count(); ++l) {
      check_span(reports[2], branch.decoder.weights[size_t(l)].data(),
                 grads.d_weights[size_t(l)].data(),
                 size_t(branch.decoder.weights[size_t(l)].size()));
      check_span(reports[2], branch.decoder.biases[size_t(l)].data(),
                 grads.d_biases[size_t(l)].data(),
                 size_t(branch.decoder.biases[size_t(l)].size()));
    }
  }
  return reports;
}

// Finite-difference checks of every loss gradient at sampled pixels.
template <class S>
std::vector<GradReport> gradcheck_losses(int n_pixels, uint64_t seed, S h = S(1e-5)) {
  using namespace gradcheck_detail;
  std::vector<GradReport> reports{{"l1"}, {"dssim"}, {"perceptual"}, {"finetune_total"}};
  const double floor_eps = 1e-6;
  Rng rng(seed);
  const int hgt = 24, wid = 24;
  Image<S> a = random_image<S>(rng, hgt, wid, 3, S(0.05), S(0.95));
  const Image<S> b = random_image<S>(rng, hgt, wid, 3, S(0.05), S(0.95));
  const LossWeights<S> weights;

  struct Case {
    GradReport* rep;
    std::function<S(const Image<S>&, Image<S>*)> fn;
  };
  std::vector<Case> cases;
  cases.push_back({&reports[0], [&](const Image<S>& x, Image<S>* g) {
                     return l1_loss(x, b, nullptr, g);
                   }});
  cases.push_back({&reports[1], [&](const Image<S>& x, Image<S>* g) {
                     return dssim_loss(x, b, g);
                   }});
  cases.push_back({&reports[2], [&](const Image<S>& x, Image<S>* g) {
                     return pyramid_perceptual_loss(x, b, g);
                   }});
  cases.push_back({&reports[3], [&](const Image<S>& x, Image<S>* g) {
                     return loss_finetune(x, b, weights, g).total;
                   }});

  for (auto& c : cases) {
    Image<S> grad;
    c.fn(a, &grad);
    for (int k = 0; k < n_pixels; ++k) {
      const size_t idx = rng() % a.data.size();
      const S saved = a.data[idx];
      a.data[idx] = saved + h;
      const S lp = c.fn(a, nullptr);
      a.data[idx] = saved - h;
      const S lm = c.fn(a, nullptr);
      a.data[idx] = saved;
      const double fd = double(lp - lm) / double(2 * h);
      c.rep->absorb(rel_err(double(grad.data[idx]), fd, floor_eps));
    }
  }
  return reports;
}

// Finite-difference check of the Eq.-9 fusion gradients.
template <class S>
GradReport gradcheck_fusion(int n_pixels, uint64_t seed, S h = S(1e-5)) {
  using namespace gradcheck_detail;
  GradReport rep{"fusion"};
  const double floor_eps = 1e-6;
  Rng rng(seed);
  const int hgt = 8, wid = 8;
  Image<S> c_face = random_image<S>(rng, hgt, wid, 3, S(0), S(1));
  Image<S> a_face = random_image<S>(rng, hgt, wid, 1, S(0.05), S(0.95));
  Image<S> c_mouth = random_image<S>(rng, hgt, wid, 3, S(0), S(1));
  const Image<S> w = random_image<S>(rng, hgt, wid, 3, S(-1), S(1));

  auto loss = [&]() {
    const Image<S> fused = fuse_head(c_face, a_face, c_mouth);
    S acc = S(0);
    for (size_t i = 0; i < fused.data.size(); ++i) acc += fused.data[i] * w.data[i];
    return acc;
  };
  Image<S> d_cf, d_af, d_cm;
  fuse_head_backward(w, c_face, a_face, c_mouth, d_cf, d_af, d_cm);

  auto probe = [&](Image<S>& img, const Image<S>& analytic) {
    for (int k = 0; k < n_pixels; ++k) {
      const size_t idx = rng() % img.data.size();
      const S saved = img.data[idx];
      img.data[idx] = saved + h;
      const S lp = loss();
      img.data[idx] = saved - h;
      const S lm = loss();
      img.data[idx] = saved;
      const double fd = double(lp - lm) / double(2 * h);
      rep.absorb(rel_err(double(analytic.data[idx]), fd, floor_eps));
    }
  };
  probe(c_face, d_cf);
  probe(a_face, d_af);
  probe(c_mouth, d_cm);
  return rep;
}

}  // namespace dgs
