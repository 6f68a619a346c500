#pragma once

#include <functional>

#include "dgs/image.hpp"

namespace dgs {

template <class S>
struct LossWeights {
  S lambda_dssim = S(0.2);
  S gamma_perceptual = S(0.5);

  void validate() const {
    require(lambda_dssim >= S(0) && gamma_perceptual >= S(0),
            "LossWeights: weights must be nonnegative");
  }
};

// Mean absolute difference over (masked) pixels. Pixels where the mask is zero
// contribute nothing and are excluded from the denominator.
template <class S>
S l1_loss(const Image<S>& a, const Image<S>& b, const Image<S>* mask = nullptr,
          Image<S>* grad_a = nullptr) {
  require_same_shape(a, b, "l1_loss");
  if (mask)
    require(mask->height == a.height && mask->width == a.width && mask->channels == 1,
            "l1_loss: mask shape mismatch");
  if (grad_a) *grad_a = Image<S>(a.height, a.width, a.channels);

  size_t denom = 0;
  S sum = S(0);
  for (int y = 0; y < a.height; ++y)
    for (int x = 0; x < a.width; ++x) {
      if (mask && !(mask->at(0, y, x) > S(0.5))) continue;
      denom += size_t(a.channels);
      for (int c = 0; c < a.channels; ++c) sum += std::abs(a.at(c, y, x) - b.at(c, y, x));
    }
  if (denom == 0) return S(0);
  const S value = sum / S(denom);
  if (grad_a) {
    const S inv = S(1) / S(denom);
    for (int y = 0; y < a.height; ++y)
      for (int x = 0; x < a.width; ++x) {
        if (mask && !(mask->at(0, y, x) > S(0.5))) continue;
        for (int c = 0; c < a.channels; ++c) {
          const S d = a.at(c, y, x) - b.at(c, y, x);
          grad_a->at(c, y, x) = d > S(0) ? inv : (d < S(0) ? -inv : S(0));
        }
      }
  }
  return value;
}

namespace detail {

inline constexpr int kSsimWindow = 11;

template <class S>
const std::array<S, kSsimWindow>& ssim_kernel() {
  static const std::array<S, kSsimWindow> k = [] {
    std::array<S, kSsimWindow> v{};
    const double sigma = 1.5;
    double sum = 0;
    for (int i = 0; i < kSsimWindow; ++i) {
      const double d = i - (kSsimWindow - 1) / 2.0;
      v[size_t(i)] = S(std::exp(-d * d / (2 * sigma * sigma)));
      sum += double(v[size_t(i)]);
    }
    for (auto& x : v) x = S(double(x) / sum);
    return v;
  }();
  return k;
}

// Valid separable convolution of one channel plane (row-major h x w).
template <class S>
std::vector<S> conv_valid(const S* in, int h, int w, int& oh, int& ow) {
  const auto& k = ssim_kernel<S>();
  const int r = kSsimWindow;
  ow = w - r + 1;
  oh = h - r + 1;
  std::vector<S> tmp(size_t(h) * ow);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      S s = S(0);
      for (int t = 0; t < r; ++t) s += k[size_t(t)] * in[size_t(y) * w + x + t];
      tmp[size_t(y) * ow + x] = s;
    }
  std::vector<S> out(size_t(oh) * ow);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      S s = S(0);
      for (int t = 0; t < r; ++t) s += k[size_t(t)] * tmp[size_t(y + t) * ow + x];
      out[size_t(y) * ow + x] = s;
    }
  return out;
}

// Transpose of conv_valid: scatter window coefficients back to pixels.
template <class S>
void conv_valid_transpose_add(const S* coef, int oh, int ow, S* out, int h, int w, S scale) {
  const auto& k = ssim_kernel<S>();
  const int r = kSsimWindow;
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      const S c = coef[size_t(y) * ow + x] * scale;
      if (c == S(0)) continue;
      for (int ty = 0; ty < r; ++ty)
        for (int tx = 0; tx < r; ++tx)
          out[size_t(y + ty) * w + (x + tx)] += c * k[size_t(ty)] * k[size_t(tx)];
    }
}

template <class S>
struct SsimStats {
  int oh = 0, ow = 0;
  std::vector<S> mu_x, mu_y, sxx, syy, sxy;  // windowed moments per channel plane
};

template <class S>
SsimStats<S> ssim_stats(const S* x, const S* y, int h, int w) {
  SsimStats<S> st;
  std::vector<S> xx(size_t(h) * w), yy(size_t(h) * w), xy(size_t(h) * w);
  for (size_t i = 0; i < xx.size(); ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  st.mu_x = conv_valid(x, h, w, st.oh, st.ow);
  st.mu_y = conv_valid(y, h, w, st.oh, st.ow);
  st.sxx = conv_valid(xx.data(), h, w, st.oh, st.ow);
  st.syy = conv_valid(yy.data(), h, w, st.oh, st.ow);
  st.sxy = conv_valid(xy.data(), h, w, st.oh, st.ow);
  for (size_t i = 0; i < st.mu_x.size(); ++i) {
    st.sxx[i] -= st.mu_x[i] * st.mu_x[i];
    st.syy[i] -= st.mu_y[i] * st.mu_y[i];
    st.sxy[i] -= st.mu_x[i] * st.mu_y[i];
  }
  return st;
}

inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

}  // namespace detail

// Mean SSIM over valid 11x11 Gaussian-window positions, averaged over channels.
// Gradient (w.r.t. `a`) is written when grad_a is given.
template <class S>
S ssim(const Image<S>& a, const Image<S>& b, Image<S>* grad_a = nullptr) {
  require_same_shape(a, b, "ssim");
  require(a.height >= detail::kSsimWindow && a.width >= detail::kSsimWindow,
          cat("ssim: image ", a.height, "x", a.width, " smaller than the ",
              detail::kSsimWindow, "x", detail::kSsimWindow, " window"));
  if (grad_a) *grad_a = Image<S>(a.height, a.width, a.channels);

  const S c1 = S(detail::kSsimC1), c2 = S(detail::kSsimC2);
  S total = S(0);
  size_t n_windows = 0;
  for (int c = 0; c < a.channels; ++c) {
    const auto st = detail::ssim_stats(a.channel(c), b.channel(c), a.height, a.width);
    const size_t p = st.mu_x.size();
    n_windows += p;
    std::vector<S> d_mu(grad_a ? p : 0), d_sxx(grad_a ? p : 0), d_sxy(grad_a ? p : 0);
    for (size_t i = 0; i < p; ++i) {
      const S a1 = S(2) * st.mu_x[i] * st.mu_y[i] + c1;
      const S a2 = S(2) * st.sxy[i] + c2;
      const S b1 = st.mu_x[i] * st.mu_x[i] + st.mu_y[i] * st.mu_y[i] + c1;
      const S b2 = st.sxx[i] + st.syy[i] + c2;
      const S s = (a1 * a2) / (b1 * b2);
      total += s;
      if (grad_a) {
        const S d_a1 = a2 / (b1 * b2);
        const S d_a2 = a1 / (b1 * b2);
        const S d_b1 = -s / b1;
        const S d_b2 = -s / b2;
        const S d_mux = d_a1 * S(2) * st.mu_y[i] + d_b1 * S(2) * st.mu_x[i];
        d_sxx[i] = d_b2;
        d_sxy[i] = d_a2 * S(2);
        // sigma terms re-center on the mean; fold those into the mu coefficient
        d_mu[i] = d_mux - S(2) * d_sxx[i] * st.mu_x[i] - d_sxy[i] * st.mu_y[i];
      }
    }
    if (grad_a) {
      std::vector<S> t1(size_t(a.height) * a.width, S(0));
      std::vector<S> t2(size_t(a.height) * a.width, S(0));
      std::vector<S> t3(size_t(a.height) * a.width, S(0));
      detail::conv_valid_transpose_add(d_mu.data(), st.oh, st.ow, t1.data(), a.height, a.width,
                                       S(1));
      detail::conv_valid_transpose_add(d_sxx.data(), st.oh, st.ow, t2.data(), a.height, a.width,
                                       S(1));
      detail::conv_valid_transpose_add(d_sxy.data(), st.oh, st.ow, t3.data(), a.height, a.width,
                                       S(1));
      const S* xp = a.channel(c);
      const S* yp = b.channel(c);
      S* gp = grad_a->channel(c);
      for (size_t i = 0; i < t1.size(); ++i) gp[i] = t1[i] + S(2) * xp[i] * t2[i] + yp[i] * t3[i];
    }
  }
  const S mean = total / S(n_windows);
  if (grad_a) {
    // d(mean)/d(window) applied after the per-window accumulation above
    const S inv = S(1) / S(n_windows);
    for (auto& g : grad_a->data) g *= inv;
  }
  return mean;
}

// D-SSIM = (1 - SSIM) / 2.
template <class S>
S dssim_loss(const Image<S>& a, const Image<S>& b, Image<S>* grad_a = nullptr) {
  const S s = ssim(a, b, grad_a);
  if (grad_a)
    for (auto& g : grad_a->data) g *= S(-0.5);
  return (S(1) - s) / S(2);
}

namespace detail {

// 5-tap binomial blur with edge replication, then 2x decimation.
template <class S>
Image<S> downsample2(const Image<S>& in) {
  static const S k[5] = {S(1. / 16), S(4. / 16), S(6. / 16), S(4. / 16), S(1. / 16)};
  Image<S> blur_h(in.height, in.width, in.channels);
  for (int c = 0; c < in.channels; ++c)
    for (int y = 0; y < in.height; ++y)
      for (int x = 0; x < in.width; ++x) {
        S s = S(0);
        for (int t = -2; t <= 2; ++t)
          s += k[t + 2] * in.at(c, y, std::min(in.width - 1, std::max(0, x + t)));
        blur_h.at(c, y, x) = s;
      }
  Image<S> blur(in.height, in.width, in.channels);
  for (int c = 0; c < in.channels; ++c)
    for (int y = 0; y < in.height; ++y)
      for (int x = 0; x < in.width; ++x) {
        S s = S(0);
        for (int t = -2; t <= 2; ++t)
          s += k[t + 2] * blur_h.at(c, std::min(in.height - 1, std::max(0, y + t)), x);
        blur.at(c, y, x) = s;
      }
  Image<S> out((in.height + 1) / 2, (in.width + 1) / 2, in.channels);
  for (int c = 0; c < in.channels; ++c)
    for (int y = 0; y < out.height; ++y)
      for (int x = 0; x < out.width; ++x) out.at(c, y, x) = blur.at(c, 2 * y, 2 * x);
  return out;
}

// Transpose of downsample2, accumulating into `out`.
template <class S>
void downsample2_transpose_add(const Image<S>& g, Image<S>& out) {
  static const S k[5] = {S(1. / 16), S(4. / 16), S(6. / 16), S(4. / 16), S(1. / 16)};
  Image<S> gb(out.height, out.width, out.channels);
  for (int c = 0; c < g.channels; ++c)
    for (int y = 0; y < g.height; ++y)
      for (int x = 0; x < g.width; ++x) gb.at(c, 2 * y, 2 * x) = g.at(c, y, x);
  Image<S> gh(out.height, out.width, out.channels);
  for (int c = 0; c < out.channels; ++c)
    for (int y = 0; y < out.height; ++y)
      for (int x = 0; x < out.width; ++x) {
        S s = gb.at(c, y, x);
        if (s == S(0)) continue;
        for (int t = -2; t <= 2; ++t)
          gh.at(c, std::min(out.height - 1, std::max(0, y + t)), x) += k[t + 2] * s;
      }
  for (int c = 0; c < out.channels; ++c)
    for (int y = 0; y < out.height; ++y)
      for (int x = 0; x < out.width; ++x) {
        S s = gh.at(c, y, x);
        if (s == S(0)) continue;
        for (int t = -2; t <= 2; ++t)
          out.at(c, y, std::min(out.width - 1, std::max(0, x + t))) += k[t + 2] * s;
      }
}

}  // namespace detail

// Deterministic perceptual distance: L1 between finite-difference gradient maps
// of a 3-octave Gaussian pyramid. A pretrained-network-free LPIPS stand-in.
template <class S>
S pyramid_perceptual_loss(const Image<S>& a, const Image<S>& b, Image<S>* grad_a = nullptr) {
  require_same_shape(a, b, "pyramid_perceptual_loss");
  constexpr int kOctaves = 3;
  if (grad_a) *grad_a = Image<S>(a.height, a.width, a.channels);

  S total = S(0);
  Image<S> cur_a = a, cur_b = b;
  std::vector<Image<S>> grads;  // per octave, filled during descent
  std::vector<Image<S>> levels_a;
  for (int o = 0; o < kOctaves; ++o) {
    const int h = cur_a.height, w = cur_a.width, cc = cur_a.channels;
    const size_t n_dx = size_t(cc) * h * std::max(0, w - 1);
    const size_t n_dy = size_t(cc) * std::max(0, h - 1) * w;
    const S denom = S(std::max<size_t>(1, n_dx + n_dy));
    S sum = S(0);
    Image<S> g(h, w, cc);
    for (int c = 0; c < cc; ++c) {
      for (int y = 0; y < h; ++y)
        for (int x = 0; x + 1 < w; ++x) {
          const S da = cur_a.at(c, y, x + 1) - cur_a.at(c, y, x);
          const S db = cur_b.at(c, y, x + 1) - cur_b.at(c, y, x);
          const S d = da - db;
          sum += std::abs(d);
          if (grad_a) {
            const S sg = d > S(0) ? S(1) : (d < S(0) ? S(-1) : S(0));
            g.at(c, y, x + 1) += sg / denom;
            g.at(c, y, x) -= sg / denom;
          }
        }
      for (int y = 0; y + 1 < h; ++y)
        for (int x = 0; x < w; ++x) {
          const S da = cur_a.at(c, y + 1, x) - cur_a.at(c, y, x);
          const S db = cur_b.at(c, y + 1, x) - cur_b.at(c, y, x);
          const S d = da - db;
          sum += std::abs(d);
          if (grad_a) {
            const S sg = d > S(0) ? S(1) : (d < S(0) ? S(-1) : S(0));
            g.at(c, y + 1, x) += sg / denom;
            g.at(c, y, x) -= sg / denom;
          }
        }
    }
    total += sum / denom;
    if (grad_a) {
      grads.push_back(std::move(g));
      levels_a.push_back(cur_a);
    }
    if (o + 1 < kOctaves) {
      cur_a = detail::downsample2(cur_a);
      cur_b = detail::downsample2(cur_b);
    }
  }
  total /= S(kOctaves);

  if (grad_a) {
    // Walk back up the pyramid, folding each octave's gradient through the
    // downsampling transpose.
    Image<S> acc = grads.back();
    for (int o = kOctaves - 2; o >= 0; --o) {
      Image<S> up(levels_a[size_t(o)].height, levels_a[size_t(o)].width,
                  levels_a[size_t(o)].channels);
      detail::downsample2_transpose_add(acc, up);
      for (size_t i = 0; i < up.data.size(); ++i) up.data[i] += grads[size_t(o)].data[i];
      acc = std::move(up);
    }
    for (size_t i = 0; i < acc.data.size(); ++i) grad_a->data[i] = acc.data[i] / S(kOctaves);
  }
  return total;
}

template <class S>
using PerceptualFn = std::function<S(const Image<S>&, const Image<S>&, Image<S>*)>;

template <class S>
PerceptualFn<S> default_perceptual() {
  return [](const Image<S>& a, const Image<S>& b, Image<S>* g) {
    return pyramid_perceptual_loss(a, b, g);
  };
}

template <class S>
struct LossBreakdown {
  S total{0}, l1{0}, dssim{0}, perceptual{0};
};

namespace detail {

template <class S>
Image<S> apply_mask(const Image<S>& img, const Image<S>& mask) {
  Image<S> out = img;
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x)
        if (!(mask.at(0, y, x) > S(0.5))) out.at(c, y, x) = S(0);
  return out;
}

}  // namespace detail

// L_C / L_D: L1 + lambda * D-SSIM against a branch-masked target. The D-SSIM
// term sees both images zero-filled outside the mask so excluded pixels carry
// no error signal.
template <class S>
LossBreakdown<S> loss_reconstruction(const Image<S>& render, const Image<S>& target,
                                     const Image<S>* mask, const LossWeights<S>& weights,
                                     Image<S>* grad_render = nullptr) {
  weights.validate();
  LossBreakdown<S> out;
  Image<S> g_l1, g_dssim;
  out.l1 = l1_loss(render, target, mask, grad_render ? &g_l1 : nullptr);
  if (mask) {
    const Image<S> rm = detail::apply_mask(render, *mask);
    const Image<S> tm = detail::apply_mask(target, *mask);
    out.dssim = dssim_loss(rm, tm, grad_render ? &g_dssim : nullptr);
    if (grad_render)
      for (int y = 0; y < render.height; ++y)
        for (int x = 0; x < render.width; ++x)
          if (!(mask->at(0, y, x) > S(0.5)))
            for (int c = 0; c < render.channels; ++c) g_dssim.at(c, y, x) = S(0);
  } else {
    out.dssim = dssim_loss(render, target, grad_render ? &g_dssim : nullptr);
  }
  out.total = out.l1 + weights.lambda_dssim * out.dssim;
  if (grad_render) {
    *grad_render = Image<S>(render.height, render.width, render.channels);
    for (size_t i = 0; i < grad_render->data.size(); ++i)
      grad_render->data[i] = g_l1.data[i] + weights.lambda_dssim * g_dssim.data[i];
  }
  return out;
}

template <class S>
LossBreakdown<S> loss_static(const Image<S>& render, const Image<S>& target, const Image<S>* mask,
                             const LossWeights<S>& weights, Image<S>* grad_render = nullptr) {
  return loss_reconstruction(render, target, mask, weights, grad_render);
}

template <class S>
LossBreakdown<S> loss_motion(const Image<S>& render, const Image<S>& target, const Image<S>* mask,
                             const LossWeights<S>& weights, Image<S>* grad_render = nullptr) {
  return loss_reconstruction(render, target, mask, weights, grad_render);
}

// L_F: full-frame L1 + lambda * D-SSIM + gamma * perceptual on the fused render.
template <class S>
LossBreakdown<S> loss_finetune(const Image<S>& fused, const Image<S>& target,
                               const LossWeights<S>& weights, Image<S>* grad_render = nullptr,
                               const PerceptualFn<S>& perceptual = default_perceptual<S>()) {
  weights.validate();
  LossBreakdown<S> out;
  Image<S> g_l1, g_dssim, g_perc;
  out.l1 = l1_loss(fused, target, nullptr, grad_render ? &g_l1 : nullptr);
  out.dssim = dssim_loss(fused, target, grad_render ? &g_dssim : nullptr);
  out.perceptual = perceptual(fused, target, grad_render ? &g_perc : nullptr);
  out.total = out.l1 + weights.lambda_dssim * out.dssim + weights.gamma_perceptual * out.perceptual;
  if (grad_render) {
    *grad_render = Image<S>(fused.height, fused.width, fused.channels);
    for (size_t i = 0; i < grad_render->data.size(); ++i)
      grad_render->data[i] = g_l1.data[i] + weights.lambda_dssim * g_dssim.data[i] +
                             weights.gamma_perceptual * g_perc.data[i];
  }
  return out;
}

// Peak signal-to-noise ratio in dB on [0,1] images, capped at 100 dB.
template <class S>
S psnr(const Image<S>& a, const Image<S>& b, const Image<S>* mask = nullptr) {
  require_same_shape(a, b, "psnr");
  S mse = S(0);
  size_t n = 0;
  for (int y = 0; y < a.height; ++y)
    for (int x = 0; x < a.width; ++x) {
      if (mask && !(mask->at(0, y, x) > S(0.5))) continue;
      for (int c = 0; c < a.channels; ++c) {
        const S d = a.at(c, y, x) - b.at(c, y, x);
        mse += d * d;
        ++n;
      }
    }
  if (n == 0) return S(100);
  mse /= S(n);
  if (mse <= S(0)) return S(100);
  return std::min(S(100), S(-10) * std::log10(mse));
}

}  // namespace dgs
