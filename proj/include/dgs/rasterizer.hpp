#pragma once

#include <algorithm>
#include <optional>

#include "dgs/image.hpp"
#include "dgs/projection.hpp"

namespace dgs {

inline constexpr int kTileSize = 16;
// Compositing for a pixel stops once transmittance drops below this.
inline constexpr double kTransmittanceFloor = 1e-4;

template <class S>
struct RenderOptions {
  std::optional<Vec3<S>> background;  // composite C + (1-A)*B when set
  bool early_termination = true;
};

// Everything the backward pass needs to replay the forward compositing.
template <class S>
struct RenderAux {
  std::vector<ProjectedGaussian<S>> projected;
  std::vector<std::vector<int>> tile_lists;  // per tile, indices into projected, depth order
  int tiles_x = 0, tiles_y = 0;
  Camera<S> camera;
  RenderOptions<S> options;
};

template <class S>
struct RenderOutput {
  Image<S> color;                      // H x W x 3
  Image<S> alpha;                      // H x W x 1
  std::vector<int32_t> contrib_count;  // per pixel, composited contributors
  RenderAux<S> aux;
};

// Gradients with respect to every primitive parameter, raw parametrization.
template <class S>
struct GaussianGrads {
  std::vector<S> d_centers;        // 3N
  std::vector<S> d_scales_raw;     // 3N
  std::vector<S> d_rotations;      // 4N
  std::vector<S> d_opacities_raw;  // N
  std::vector<S> d_features;       // Z*N
  // Norm of the screen-space positional gradient in NDC units, for densification.
  std::vector<S> pos2d_grad_norm;  // N

  static GaussianGrads zeros(size_t n, int sh_dim) {
    GaussianGrads g;
    g.d_centers.assign(3 * n, S(0));
    g.d_scales_raw.assign(3 * n, S(0));
    g.d_rotations.assign(4 * n, S(0));
    g.d_opacities_raw.assign(n, S(0));
    g.d_features.assign(size_t(sh_dim) * n, S(0));
    g.pos2d_grad_norm.assign(n, S(0));
    return g;
  }
};

namespace detail {

template <class S>
S gaussian_weight(const ProjectedGaussian<S>& g, S px, S py) {
  const S dx = px - g.mean2d[0];
  const S dy = py - g.mean2d[1];
  const S p = S(-0.5) * (g.conic_xx * dx * dx + S(2) * g.conic_xy * dx * dy +
                         g.conic_yy * dy * dy);
  return p > S(0) ? S(1) : std::exp(p);
}

template <class S>
void sort_by_depth(std::vector<int>& idx, const std::vector<ProjectedGaussian<S>>& proj) {
  std::sort(idx.begin(), idx.end(), [&proj](int a, int b) {
    if (proj[a].depth != proj[b].depth) return proj[a].depth < proj[b].depth;
    return proj[a].src < proj[b].src;  // deterministic tie-break
  });
}

}  // namespace detail

// Tile-binned front-to-back splatting. Tiles run in parallel; pixels are
// disjoint, so the output is identical for any worker count.
template <class S>
RenderOutput<S> render_forward(const GaussianSet<S>& set, const Camera<S>& cam,
                               const RenderOptions<S>& opts = {}) {
  cam.validate();
  const int w = cam.width, h = cam.height;
  RenderOutput<S> out;
  out.color = Image<S>(h, w, 3);
  out.alpha = Image<S>(h, w, 1);
  out.contrib_count.assign(size_t(h) * w, 0);
  out.aux.camera = cam;
  out.aux.options = opts;
  out.aux.projected = project_all(set, cam);
  out.aux.tiles_x = (w + kTileSize - 1) / kTileSize;
  out.aux.tiles_y = (h + kTileSize - 1) / kTileSize;
  const int n_tiles = out.aux.tiles_x * out.aux.tiles_y;
  out.aux.tile_lists.assign(n_tiles, {});

  const auto& proj = out.aux.projected;
  for (int pi = 0; pi < int(proj.size()); ++pi) {
    const auto& g = proj[pi];
    const int tx0 = std::max(0, int(std::floor((g.mean2d[0] - g.radius) / kTileSize)));
    const int tx1 = std::min(out.aux.tiles_x - 1, int(std::floor((g.mean2d[0] + g.radius) / kTileSize)));
    const int ty0 = std::max(0, int(std::floor((g.mean2d[1] - g.radius) / kTileSize)));
    const int ty1 = std::min(out.aux.tiles_y - 1, int(std::floor((g.mean2d[1] + g.radius) / kTileSize)));
    for (int ty = ty0; ty <= ty1; ++ty)
      for (int tx = tx0; tx <= tx1; ++tx)
        out.aux.tile_lists[size_t(ty) * out.aux.tiles_x + tx].push_back(pi);
  }

#pragma omp parallel for schedule(dynamic)
  for (int tile = 0; tile < n_tiles; ++tile) {
    auto& list = out.aux.tile_lists[tile];
    detail::sort_by_depth(list, proj);
    const int tx = tile % out.aux.tiles_x, ty = tile / out.aux.tiles_x;
    const int x0 = tx * kTileSize, x1 = std::min(w, x0 + kTileSize);
    const int y0 = ty * kTileSize, y1 = std::min(h, y0 + kTileSize);
    for (int y = y0; y < y1; ++y) {
      for (int x = x0; x < x1; ++x) {
        const S px = S(x) + S(0.5), py = S(y) + S(0.5);
        S trans = S(1);
        Vec3<S> c = Vec3<S>::Zero();
        S a = S(0);
        int32_t count = 0;
        for (int li : list) {
          const auto& g = proj[li];
          const S alpha_t = g.alpha * detail::gaussian_weight(g, px, py);
          if (alpha_t < S(kAlphaSkip)) continue;
          c += g.color * (alpha_t * trans);
          a += alpha_t * trans;
          trans *= (S(1) - alpha_t);
          ++count;
          if (opts.early_termination && trans < S(kTransmittanceFloor)) break;
        }
        if (opts.background) c += (S(1) - a) * (*opts.background);
        for (int ch = 0; ch < 3; ++ch) out.color.at(ch, y, x) = c[ch];
        out.alpha.at(0, y, x) = a;
        out.contrib_count[size_t(y) * w + x] = count;
      }
    }
  }
  return out;
}

// Serial per-pixel reference compositor: globally depth-sorted, no tiling, no
// early termination. Shares the projection and skip rules with render_forward.
template <class S>
RenderOutput<S> render_naive(const GaussianSet<S>& set, const Camera<S>& cam,
                             const RenderOptions<S>& opts = {}) {
  cam.validate();
  const int w = cam.width, h = cam.height;
  RenderOutput<S> out;
  out.color = Image<S>(h, w, 3);
  out.alpha = Image<S>(h, w, 1);
  out.contrib_count.assign(size_t(h) * w, 0);
  out.aux.camera = cam;
  out.aux.options = opts;
  out.aux.projected = project_all(set, cam);

  std::vector<int> order(out.aux.projected.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = int(i);
  detail::sort_by_depth(order, out.aux.projected);

  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const S px = S(x) + S(0.5), py = S(y) + S(0.5);
      S trans = S(1);
      Vec3<S> c = Vec3<S>::Zero();
      S a = S(0);
      int32_t count = 0;
      for (int li : order) {
        const auto& g = out.aux.projected[li];
        const S alpha_t = g.alpha * detail::gaussian_weight(g, px, py);
        if (alpha_t < S(kAlphaSkip)) continue;
        c += g.color * (alpha_t * trans);
        a += alpha_t * trans;
        trans *= (S(1) - alpha_t);
        ++count;
      }
      if (opts.background) c += (S(1) - a) * (*opts.background);
      for (int ch = 0; ch < 3; ++ch) out.color.at(ch, y, x) = c[ch];
      out.alpha.at(0, y, x) = a;
      out.contrib_count[size_t(y) * w + x] = count;
    }
  }
  return out;
}

namespace detail {

// Per-projected-gaussian gradient slot in image space.
template <class S>
struct ProjGradSlot {
  S d_mean_x{0}, d_mean_y{0};
  S d_conic_xx{0}, d_conic_xy{0}, d_conic_yy{0};
  S d_color[3]{S(0), S(0), S(0)};
  S d_alpha{0};  // w.r.t. activated opacity
};

}  // namespace detail

// Analytic gradients of a scalar loss with upstream images dL/dC and dL/dA.
// Tiles are processed in parallel; per-tile partials merge in fixed tile order,
// so results are identical for any worker count.
template <class S>
GaussianGrads<S> render_backward(const GaussianSet<S>& set, const RenderOutput<S>& fwd,
                                 const Image<S>& d_color, const Image<S>& d_alpha) {
  const auto& aux = fwd.aux;
  const Camera<S>& cam = aux.camera;
  require(!aux.tile_lists.empty() || aux.projected.empty(),
          "render_backward: missing forward aux buffers (was this a render_forward output?)");
  require(d_color.height == cam.height && d_color.width == cam.width && d_color.channels == 3,
          "render_backward: dL/dC shape mismatch");
  require(d_alpha.height == cam.height && d_alpha.width == cam.width && d_alpha.channels == 1,
          "render_backward: dL/dA shape mismatch");

  const int w = cam.width, h = cam.height;
  const int n_tiles = aux.tiles_x * aux.tiles_y;
  const auto& proj = aux.projected;

  std::vector<std::vector<detail::ProjGradSlot<S>>> tile_grads(n_tiles);

#pragma omp parallel for schedule(dynamic)
  for (int tile = 0; tile < n_tiles; ++tile) {
    const auto& list = aux.tile_lists[tile];
    if (list.empty()) continue;
    auto& slots = tile_grads[tile];
    slots.assign(list.size(), {});
    const int tx = tile % aux.tiles_x, ty = tile / aux.tiles_x;
    const int x0 = tx * kTileSize, x1 = std::min(w, x0 + kTileSize);
    const int y0 = ty * kTileSize, y1 = std::min(h, y0 + kTileSize);

    struct Entry {
      int pos;  // position in tile list
      S alpha_t, weight, trans, dx, dy;
    };
    std::vector<Entry> seq;
    seq.reserve(list.size());

    for (int y = y0; y < y1; ++y) {
      for (int x = x0; x < x1; ++x) {
        const int32_t count = fwd.contrib_count[size_t(y) * w + x];
        if (count == 0) continue;
        const S px = S(x) + S(0.5), py = S(y) + S(0.5);

        Vec3<S> dc(d_color.at(0, y, x), d_color.at(1, y, x), d_color.at(2, y, x));
        S da = d_alpha.at(0, y, x);
        if (aux.options.background) da -= dc.dot(*aux.options.background);

        // Replay the composited sequence exactly as forward produced it.
        seq.clear();
        S trans = S(1);
        for (int pos = 0; pos < int(list.size()) && int(seq.size()) < count; ++pos) {
          const auto& g = proj[list[pos]];
          const S dx = px - g.mean2d[0];
          const S dy = py - g.mean2d[1];
          const S p = S(-0.5) * (g.conic_xx * dx * dx + S(2) * g.conic_xy * dx * dy +
                                 g.conic_yy * dy * dy);
          const S weight = p > S(0) ? S(1) : std::exp(p);
          const S alpha_t = g.alpha * weight;
          if (alpha_t < S(kAlphaSkip)) continue;
          seq.push_back({pos, alpha_t, weight, trans, dx, dy});
          trans *= (S(1) - alpha_t);
        }

        // Back-to-front suffix recurrences avoid any division by (1 - alpha).
        Vec3<S> rec_c = Vec3<S>::Zero();
        S rec_a = S(0);
        for (int k = int(seq.size()) - 1; k >= 0; --k) {
          const Entry& e = seq[size_t(k)];
          const auto& g = proj[list[e.pos]];
          auto& slot = slots[size_t(e.pos)];

          const S wt = e.alpha_t * e.trans;
          for (int ch = 0; ch < 3; ++ch) slot.d_color[ch] += dc[ch] * wt;

          const S d_alpha_t =
              dc.dot((g.color - rec_c)) * e.trans + da * e.trans * (S(1) - rec_a);
          slot.d_alpha += d_alpha_t * e.weight;

          const S d_weight = d_alpha_t * g.alpha;
          const S d_p = d_weight * e.weight;  // dG/dp = G (zero-slope clamp at p > 0 is unreachable)
          const S gx = g.conic_xx * e.dx + g.conic_xy * e.dy;
          const S gy = g.conic_xy * e.dx + g.conic_yy * e.dy;
          // d = pix - mean, so d(mean) = -d(d)
          slot.d_mean_x += d_p * gx;
          slot.d_mean_y += d_p * gy;
          slot.d_conic_xx += d_p * (S(-0.5) * e.dx * e.dx);
          slot.d_conic_xy += d_p * (-e.dx * e.dy);
          slot.d_conic_yy += d_p * (S(-0.5) * e.dy * e.dy);

          rec_c = g.color * e.alpha_t + (S(1) - e.alpha_t) * rec_c;
          rec_a = e.alpha_t + (S(1) - e.alpha_t) * rec_a;
        }
      }
    }
  }

  // Fixed-order merge across tiles.
  std::vector<detail::ProjGradSlot<S>> merged(proj.size());
  for (int tile = 0; tile < n_tiles; ++tile) {
    const auto& list = aux.tile_lists[tile];
    const auto& slots = tile_grads[tile];
    for (size_t k = 0; k < slots.size(); ++k) {
      auto& dst = merged[size_t(list[k])];
      const auto& s = slots[k];
      dst.d_mean_x += s.d_mean_x;
      dst.d_mean_y += s.d_mean_y;
      dst.d_conic_xx += s.d_conic_xx;
      dst.d_conic_xy += s.d_conic_xy;
      dst.d_conic_yy += s.d_conic_yy;
      for (int ch = 0; ch < 3; ++ch) dst.d_color[ch] += s.d_color[ch];
      dst.d_alpha += s.d_alpha;
    }
  }

  // Chain image-space gradients to primitive parameters. Each projected entry
  // maps to a distinct primitive, so this loop is write-disjoint.
  GaussianGrads<S> grads = GaussianGrads<S>::zeros(set.count(), set.sh_dim());
#pragma omp parallel for schedule(static)
  for (long pi = 0; pi < long(proj.size()); ++pi) {
    const auto& g = proj[size_t(pi)];
    const auto& m = merged[size_t(pi)];
    const size_t i = size_t(g.src);

    const Vec3<S> mu = set.center(i);
    const Vec3<S> t = cam.world_to_cam(mu);
    const S tz2 = t[2] * t[2];

    // conic = inv(cov2d): dL/dcov = -Q dL/dQ_sym Q
    const Mat2<S> q_mat = (Mat2<S>() << g.conic_xx, g.conic_xy, g.conic_xy, g.conic_yy).finished();
    const Mat2<S> dq_mat =
        (Mat2<S>() << m.d_conic_xx, S(0.5) * m.d_conic_xy, S(0.5) * m.d_conic_xy, m.d_conic_yy)
            .finished();
    const Mat2<S> dcov = -q_mat * dq_mat * q_mat;  // symmetric

    // cov2d = M Sigma M^T + dilation, M = J W
    const Vec3<S> s_act = set.activated_scale(i);
    const Vec4<S> q_raw = set.rotation(i);
    const Vec4<S> q_unit = normalize_quat(q_raw);
    const Mat3<S> rot = quat_to_rotmat(q_unit);
    const Mat3<S> sigma = rot * s_act.cwiseProduct(s_act).asDiagonal() * rot.transpose();

    Eigen::Matrix<S, 2, 3> jac;
    jac << cam.fx / t[2], S(0), -cam.fx * t[0] / tz2,
           S(0), cam.fy / t[2], -cam.fy * t[1] / tz2;
    const Eigen::Matrix<S, 2, 3> mm = jac * cam.rotation;

    const Mat3<S> d_sigma = mm.transpose() * dcov * mm;               // symmetric
    const Eigen::Matrix<S, 2, 3> d_mm = S(2) * dcov * mm * sigma;     // dcov symmetric
    const Eigen::Matrix<S, 2, 3> d_jac = d_mm * cam.rotation.transpose();

    Vec3<S> dt = Vec3<S>::Zero();
    dt[0] += d_jac(0, 2) * (-cam.fx / tz2);
    dt[1] += d_jac(1, 2) * (-cam.fy / tz2);
    dt[2] += d_jac(0, 0) * (-cam.fx / tz2) + d_jac(1, 1) * (-cam.fy / tz2) +
             d_jac(0, 2) * (S(2) * cam.fx * t[0] / (tz2 * t[2]))+
             d_jac(1, 2) * (S(2) * cam.fy * t[1] / (tz2 * t[2]));

    // mean2d = (fx tx/tz + cx, fy ty/tz + cy)
    dt[0] += m.d_mean_x * cam.fx / t[2];
    dt[1] += m.d_mean_y * cam.fy / t[2];
    dt[2] += m.d_mean_x * (-cam.fx * t[0] / tz2) + m.d_mean_y * (-cam.fy * t[1] / tz2);

    Vec3<S> d_mu = cam.rotation.transpose() * dt;

    // Sigma = R diag(s^2) R^T
    const Mat3<S> rtgr = rot.transpose() * d_sigma * rot;
    Vec3<S> d_s_act;
    for (int k = 0; k < 3; ++k) d_s_act[k] = S(2) * s_act[k] * rtgr(k, k);
    const Mat3<S> d_rot = S(2) * d_sigma * rot * s_act.cwiseProduct(s_act).asDiagonal();
    const auto rot_grads = quat_to_rotmat_grad(q_unit);
    Vec4<S> d_q_unit;
    for (int k = 0; k < 4; ++k) d_q_unit[k] = (d_rot.array() * rot_grads[size_t(k)].array()).sum();
    const Vec4<S> d_q_raw = normalize_quat_backward(q_raw, d_q_unit);

    // SH color and its view-direction dependence on mu
    const Vec3<S> view = mu - cam.center();
    const S dist = view.norm();
    Vec3<S> dc_up(m.d_color[0], m.d_color[1], m.d_color[2]);
    S* df = grads.d_features.data() + size_t(set.sh_dim()) * i;
    if (dist > S(0)) {
      const Vec3<S> vdir = view / dist;
      const Vec3<S> d_dir =
          sh_to_color_backward(set.sh_degree, set.feature(i), vdir, dc_up, df);
      d_mu += (d_dir - vdir * vdir.dot(d_dir)) / dist;
    } else {
      sh_to_color_backward(set.sh_degree, set.feature(i), Vec3<S>(S(0), S(0), S(1)), dc_up, df);
    }

    for (int k = 0; k < 3; ++k) {
      grads.d_centers[3 * i + k] = d_mu[k];
      grads.d_scales_raw[3 * i + k] = d_s_act[k] * activate_scale_grad(set.scales_raw[3 * i + k]);
    }
    for (int k = 0; k < 4; ++k) grads.d_rotations[4 * i + k] = d_q_raw[k];
    grads.d_opacities_raw[i] = m.d_alpha * activate_opacity_grad(set.opacities_raw[i]);
    grads.pos2d_grad_norm[i] = std::hypot(m.d_mean_x * S(0.5) * S(w), m.d_mean_y * S(0.5) * S(h));
  }
  return grads;
}

}  // namespace dgs
