#pragma once

#include "dgs/gaussian_field.hpp"

namespace dgs {

template <class S>
struct HashGridConfig {
  int levels = 8;
  int features = 2;
  int log2_table_size = 15;
  int base_resolution = 8;
  S growth = S(1.5);

  int feature_dim() const { return 3 * levels * features; }
};

namespace detail {

inline uint32_t grid_hash(uint32_t x, uint32_t y) {
  return x ^ (y * 2654435761u);
}

template <class S>
struct BilinearStencil {
  int ix[4], iy[4];
  S w[4];
  S fx, fy;  // cell-local fractions
  int res;   // cells per axis
};

// Stencil for a [0,1]^2 query on a grid with `res` cells per axis.
template <class S>
BilinearStencil<S> bilinear_stencil(S u, S v, int res) {
  BilinearStencil<S> st;
  st.res = res;
  const S x = u * S(res), y = v * S(res);
  int x0 = int(std::floor(x)), y0 = int(std::floor(y));
  x0 = std::min(std::max(x0, 0), res - 1);
  y0 = std::min(std::max(y0, 0), res - 1);
  st.fx = x - S(x0);
  st.fy = y - S(y0);
  st.ix[0] = x0;     st.iy[0] = y0;
  st.ix[1] = x0 + 1; st.iy[1] = y0;
  st.ix[2] = x0;     st.iy[2] = y0 + 1;
  st.ix[3] = x0 + 1; st.iy[3] = y0 + 1;
  st.w[0] = (S(1) - st.fx) * (S(1) - st.fy);
  st.w[1] = st.fx * (S(1) - st.fy);
  st.w[2] = (S(1) - st.fx) * st.fy;
  st.w[3] = st.fx * st.fy;
  return st;
}

inline constexpr int kPlaneAxes[3][2] = {{0, 1}, {1, 2}, {0, 2}};  // XY, YZ, XZ

}  // namespace detail

// Three axis-aligned planar multiresolution hash grids. Output is the
// concatenation over planes and levels of bilinearly interpolated features,
// C0-continuous in position.
template <class S>
struct TriPlaneHashEncoder {
  HashGridConfig<S> cfg;
  Aabb<S> bbox;
  std::vector<int> level_res;               // cells per axis per level
  std::vector<uint32_t> level_entries;      // table entries per level
  std::vector<uint8_t> level_dense;         // dense indexing when the full grid fits
  std::vector<std::vector<S>> tables;       // [plane * levels + level], entries * F

  void init(const Aabb<S>& box, Rng& rng) {
    bbox = box;
    level_res.resize(cfg.levels);
    level_entries.resize(cfg.levels);
    level_dense.resize(cfg.levels);
    const uint32_t table_cap = uint32_t(1) << cfg.log2_table_size;
    for (int l = 0; l < cfg.levels; ++l) {
      level_res[l] = int(std::floor(S(cfg.base_resolution) * std::pow(cfg.growth, S(l))));
      const uint64_t dense = uint64_t(level_res[l] + 1) * uint64_t(level_res[l] + 1);
      level_dense[l] = dense <= table_cap;
      level_entries[l] = level_dense[l] ? uint32_t(dense) : table_cap;
    }
    tables.assign(size_t(3) * cfg.levels, {});
    std::uniform_real_distribution<double> d(-1e-4, 1e-4);
    for (int p = 0; p < 3; ++p)
      for (int l = 0; l < cfg.levels; ++l) {
        auto& t = tables[size_t(p) * cfg.levels + l];
        t.resize(size_t(level_entries[l]) * cfg.features);
        for (auto& v : t) v = S(d(rng));
      }
  }

  uint32_t entry_index(int level, int x, int y) const {
    const int nv = level_res[level] + 1;
    const int cx = std::min(x, nv - 1), cy = std::min(y, nv - 1);
    if (level_dense[level]) return uint32_t(cy) * uint32_t(nv) + uint32_t(cx);
    return detail::grid_hash(uint32_t(cx), uint32_t(cy)) & (level_entries[level] - 1);
  }

  // Writes feature_dim() values to `out`; layout [plane][level][feature].
  void encode(const Vec3<S>& pos, S* out) const {
    const Vec3<S> u = bbox.to_unit(pos);
    int o = 0;
    for (int p = 0; p < 3; ++p) {
      const S a = u[detail::kPlaneAxes[p][0]];
      const S b = u[detail::kPlaneAxes[p][1]];
      for (int l = 0; l < cfg.levels; ++l) {
        const auto st = detail::bilinear_stencil(a, b, level_res[l]);
        const S* tab = tables[size_t(p) * cfg.levels + l].data();
        for (int f = 0; f < cfg.features; ++f) {
          S v = S(0);
          for (int c = 0; c < 4; ++c)
            v += st.w[c] * tab[size_t(entry_index(l, st.ix[c], st.iy[c])) * cfg.features + f];
          out[o++] = v;
        }
      }
    }
  }

  // Scatters upstream feature gradients into `table_grads` (same layout as
  // tables) and returns the gradient w.r.t. the world position.
  Vec3<S> encode_backward(const Vec3<S>& pos, const S* d_out,
                          std::vector<std::vector<S>>& table_grads) const {
    const Vec3<S> u = bbox.to_unit(pos);
    Vec3<S> d_pos = Vec3<S>::Zero();
    int o = 0;
    for (int p = 0; p < 3; ++p) {
      const int axis_a = detail::kPlaneAxes[p][0];
      const int axis_b = detail::kPlaneAxes[p][1];
      const S a = u[axis_a], b = u[axis_b];
      S d_a = S(0), d_b = S(0);
      for (int l = 0; l < cfg.levels; ++l) {
        const auto st = detail::bilinear_stencil(a, b, level_res[l]);
        const S* tab = tables[size_t(p) * cfg.levels + l].data();
        S* gtab = table_grads[size_t(p) * cfg.levels + l].data();
        uint32_t idx[4];
        for (int c = 0; c < 4; ++c) idx[c] = entry_index(l, st.ix[c], st.iy[c]);
        for (int f = 0; f < cfg.features; ++f) {
          const S g = d_out[o++];
          if (g == S(0)) continue;
          for (int c = 0; c < 4; ++c) gtab[size_t(idx[c]) * cfg.features + f] += g * st.w[c];
          const S t00 = tab[size_t(idx[0]) * cfg.features + f];
          const S t10 = tab[size_t(idx[1]) * cfg.features + f];
          const S t01 = tab[size_t(idx[2]) * cfg.features + f];
          const S t11 = tab[size_t(idx[3]) * cfg.features + f];
          d_a += g * S(level_res[l]) * ((t10 - t00) * (S(1) - st.fy) + (t11 - t01) * st.fy);
          d_b += g * S(level_res[l]) * ((t01 - t00) * (S(1) - st.fx) + (t11 - t10) * st.fx);
        }
      }
      // to_unit clamps; inside the box du/dx = 1/extent, outside 0
      const S ext_a = bbox.hi[axis_a] - bbox.lo[axis_a];
      const S ext_b = bbox.hi[axis_b] - bbox.lo[axis_b];
      if (a > S(0) && a < S(1) && ext_a > S(0)) d_pos[axis_a] += d_a / ext_a;
      if (b > S(0) && b < S(1) && ext_b > S(0)) d_pos[axis_b] += d_b / ext_b;
    }
    return d_pos;
  }

  std::vector<std::vector<S>> zero_grads() const {
    std::vector<std::vector<S>> g(tables.size());
    for (size_t i = 0; i < tables.size(); ++i) g[i].assign(tables[i].size(), S(0));
    return g;
  }
};

// Coarse tri-plane grid emitting per-position attention vectors V_a and V_e
// through a sigmoid; plane contributions are summed before the sigmoid.
template <class S>
struct RegionAttentionField {
  int resolution = 32;
  int dim_a = 0, dim_e = 0;
  Aabb<S> bbox;
  std::vector<std::vector<S>> planes;  // 3 x (res+1)^2 * (dim_a + dim_e)

  int channels() const { return dim_a + dim_e; }

  void init(const Aabb<S>& box, int da, int de) {
    bbox = box;
    dim_a = da;
    dim_e = de;
    const size_t nv = size_t(resolution + 1) * size_t(resolution + 1);
    planes.assign(3, std::vector<S>(nv * size_t(channels()), S(0)));
  }

  void eval(const Vec3<S>& pos, S* v_a, S* v_e) const {
    const Vec3<S> u = bbox.to_unit(pos);
    const int ch = channels();
    std::vector<S> logits(size_t(ch), S(0));
    for (int p = 0; p < 3; ++p) {
      const S a = u[detail::kPlaneAxes[p][0]];
      const S b = u[detail::kPlaneAxes[p][1]];
      const auto st = detail::bilinear_stencil(a, b, resolution);
      const S* tab = planes[p].data();
      const int nv = resolution + 1;
      for (int c = 0; c < 4; ++c) {
        const size_t base =
            (size_t(std::min(st.iy[c], nv - 1)) * nv + size_t(std::min(st.ix[c], nv - 1))) * ch;
        for (int k = 0; k < ch; ++k) logits[size_t(k)] += st.w[c] * tab[base + k];
      }
    }
    for (int k = 0; k < dim_a; ++k) v_a[k] = sigmoid(logits[size_t(k)]);
    for (int k = 0; k < dim_e; ++k) v_e[k] = sigmoid(logits[size_t(dim_a + k)]);
  }

  Vec3<S> eval_backward(const Vec3<S>& pos, const S* v_a, const S* v_e, const S* d_va,
                        const S* d_ve, std::vector<std::vector<S>>& plane_grads) const {
    const Vec3<S> u = bbox.to_unit(pos);
    const int ch = channels();
    std::vector<S> d_logits(size_t(ch));
    for (int k = 0; k < dim_a; ++k) d_logits[size_t(k)] = d_va[k] * v_a[k] * (S(1) - v_a[k]);
    for (int k = 0; k < dim_e; ++k)
      d_logits[size_t(dim_a + k)] = d_ve[k] * v_e[k] * (S(1) - v_e[k]);

    Vec3<S> d_pos = Vec3<S>::Zero();
    for (int p = 0; p < 3; ++p) {
      const int axis_a = detail::kPlaneAxes[p][0];
      const int axis_b = detail::kPlaneAxes[p][1];
      const S a = u[axis_a], b = u[axis_b];
      const auto st = detail::bilinear_stencil(a, b, resolution);
      const S* tab = planes[p].data();
      S* gtab = plane_grads[p].data();
      const int nv = resolution + 1;
      size_t base[4];
      for (int c = 0; c < 4; ++c)
        base[c] = (size_t(std::min(st.iy[c], nv - 1)) * nv + size_t(std::min(st.ix[c], nv - 1))) *
                  ch;
      S d_a = S(0), d_b = S(0);
      for (int k = 0; k < ch; ++k) {
        const S g = d_logits[size_t(k)];
        if (g == S(0)) continue;
        for (int c = 0; c < 4; ++c) gtab[base[c] + k] += g * st.w[c];
        const S t00 = tab[base[0] + k], t10 = tab[base[1] + k];
        const S t01 = tab[base[2] + k], t11 = tab[base[3] + k];
        d_a += g * S(resolution) * ((t10 - t00) * (S(1) - st.fy) + (t11 - t01) * st.fy);
        d_b += g * S(resolution) * ((t01 - t00) * (S(1) - st.fx) + (t11 - t10) * st.fx);
      }
      const S ext_a = bbox.hi[axis_a] - bbox.lo[axis_a];
      const S ext_b = bbox.hi[axis_b] - bbox.lo[axis_b];
      if (a > S(0) && a < S(1) && ext_a > S(0)) d_pos[axis_a] += d_a / ext_a;
      if (b > S(0) && b < S(1) && ext_b > S(0)) d_pos[axis_b] += d_b / ext_b;
    }
    return d_pos;
  }

  std::vector<std::vector<S>> zero_grads() const {
    std::vector<std::vector<S>> g(planes.size());
    for (size_t i = 0; i < planes.size(); ++i) g[i].assign(planes[i].size(), S(0));
    return g;
  }
};

// Fully connected stack: tanh hidden layers, linear output head initialized to
// zero so a fresh field is the identity deformation.
template <class S>
struct MlpDecoder {
  std::vector<MatX<S>> weights;
  std::vector<VecX<S>> biases;

  void init(int in_dim, int hidden, int depth, int out_dim, Rng& rng) {
    weights.clear();
    biases.clear();
    int prev = in_dim;
    for (int l = 0; l < depth; ++l) {
      weights.push_back(xavier(hidden, prev, rng));
      biases.push_back(VecX<S>::Zero(hidden));
      prev = hidden;
    }
    weights.push_back(MatX<S>::Zero(out_dim, prev));
    biases.push_back(VecX<S>::Zero(out_dim));
  }

  int layer_count() const { return int(weights.size()); }
  int input_dim() const { return int(weights.front().cols()); }
  int output_dim() const { return int(weights.back().rows()); }

  // Forward over a batch of columns; `hidden` receives post-tanh activations.
  MatX<S> forward(const MatX<S>& x, std::vector<MatX<S>>* hidden) const {
    MatX<S> cur = x;
    if (hidden) hidden->clear();
    const int n_hidden = layer_count() - 1;
    for (int l = 0; l < n_hidden; ++l) {
      cur = ((weights[size_t(l)] * cur).colwise() + biases[size_t(l)]).array().tanh().matrix();
      if (hidden) hidden->push_back(cur);
    }
    return (weights.back() * cur).colwise() + biases.back();
  }

  // Accumulates weight/bias gradients and returns dL/dx.
  MatX<S> backward(const MatX<S>& x, const std::vector<MatX<S>>& hidden, const MatX<S>& d_out,
                   std::vector<MatX<S>>& d_weights, std::vector<VecX<S>>& d_biases) const {
    const int n_hidden = layer_count() - 1;
    MatX<S> delta = d_out;
    for (int l = layer_count() - 1; l >= 0; --l) {
      const MatX<S>& input = l == 0 ? x : hidden[size_t(l - 1)];
      d_weights[size_t(l)] += delta * input.transpose();
      d_biases[size_t(l)] += delta.rowwise().sum();
      if (l == 0) return weights[0].transpose() * delta;
      delta = weights[size_t(l)].transpose() * delta;
      const auto& act = hidden[size_t(l - 1)];
      delta = (delta.array() * (S(1) - act.array().square())).matrix();
    }
    return {};
  }

  std::vector<MatX<S>> zero_weight_grads() const {
    std::vector<MatX<S>> g;
    for (const auto& w : weights) g.push_back(MatX<S>::Zero(w.rows(), w.cols()));
    return g;
  }
  std::vector<VecX<S>> zero_bias_grads() const {
    std::vector<VecX<S>> g;
    for (const auto& b : biases) g.push_back(VecX<S>::Zero(b.size()));
    return g;
  }

 private:
  static MatX<S> xavier(int rows, int cols, Rng& rng) {
    const double bound = std::sqrt(6.0 / double(rows + cols));
    std::uniform_real_distribution<double> d(-bound, bound);
    MatX<S> m(rows, cols);
    for (int c = 0; c < cols; ++c)
      for (int r = 0; r < rows; ++r) m(r, c) = S(d(rng));
    return m;
  }
};

template <class S>
struct MotionFieldConfig {
  HashGridConfig<S> grid;
  int attention_resolution = 32;
  int hidden_width = 64;
  int hidden_depth = 3;
  int dim_audio = 16;
  int dim_expr = 7;
};

// One deformable-field branch: position encoding, condition fusion (with
// region attention on the face branch) and the deformation decoder.
template <class S>
struct MotionFieldBranch {
  BranchTag tag = BranchTag::Face;
  MotionFieldConfig<S> cfg;
  TriPlaneHashEncoder<S> encoder;
  RegionAttentionField<S> attention;  // face branch only
  MlpDecoder<S> decoder;

  bool has_attention() const { return tag == BranchTag::Face; }
  int decoder_input_dim() const {
    return cfg.grid.feature_dim() + cfg.dim_audio + (has_attention() ? cfg.dim_expr : 0);
  }
  int decoder_output_dim() const { return tag == BranchTag::Face ? 10 : 3; }

  void init(BranchTag t, const MotionFieldConfig<S>& c, const Aabb<S>& bbox, uint64_t seed) {
    tag = t;
    cfg = c;
    encoder.cfg = cfg.grid;
    Rng rng(seed);
    encoder.init(bbox, rng);
    if (has_attention()) {
      attention.resolution = cfg.attention_resolution;
      attention.init(bbox, cfg.dim_audio, cfg.dim_expr);
    }
    decoder.init(decoder_input_dim(), cfg.hidden_width, cfg.hidden_depth, decoder_output_dim(),
                 rng);
  }

  struct Trace {
    MatX<S> positions;  // 3 x N
    MatX<S> input;      // decoder input, in x N
    MatX<S> v_a, v_e;   // attention values (face branch)
    std::vector<MatX<S>> hidden;
    VecX<S> audio, expr;
    size_t count() const { return size_t(positions.cols()); }
  };

  struct Grads {
    std::vector<std::vector<S>> d_tables;
    std::vector<std::vector<S>> d_attention;
    std::vector<MatX<S>> d_weights;
    std::vector<VecX<S>> d_biases;
    MatX<S> d_positions;  // 3 x N, available but unused by the trainer
  };

  // Predicts per-primitive deformations for the canonical centers.
  DeformationSet<S> forward(const GaussianSet<S>& canonical, const VecX<S>& audio,
                            const VecX<S>& expr, Trace* trace) const {
    require(audio.size() == cfg.dim_audio,
            cat(to_string(tag), " branch: audio dim ", audio.size(), " != ", cfg.dim_audio));
    if (has_attention())
      require(expr.size() == cfg.dim_expr,
              cat("face branch: expression dim ", expr.size(), " != ", cfg.dim_expr));
    const size_t n = canonical.count();
    const int enc_dim = cfg.grid.feature_dim();
    const int in_dim = decoder_input_dim();

    MatX<S> input(in_dim, n);
    MatX<S> positions(3, n);
    MatX<S> v_a, v_e;
    if (has_attention()) {
      v_a.resize(cfg.dim_audio, n);
      v_e.resize(cfg.dim_expr, n);
    }

#pragma omp parallel for schedule(static)
    for (long i = 0; i < long(n); ++i) {
      const Vec3<S> mu = canonical.center(size_t(i));
      positions.col(i) = mu;
      encoder.encode(mu, input.col(i).data());
      if (has_attention()) {
        attention.eval(mu, v_a.col(i).data(), v_e.col(i).data());
        for (int k = 0; k < cfg.dim_audio; ++k)
          input(enc_dim + k, i) = v_a(k, i) * audio[k];
        for (int k = 0; k < cfg.dim_expr; ++k)
          input(enc_dim + cfg.dim_audio + k, i) = v_e(k, i) * expr[k];
      } else {
        for (int k = 0; k < cfg.dim_audio; ++k) input(enc_dim + k, i) = audio[k];
      }
    }

    std::vector<MatX<S>> hidden;
    const MatX<S> out = decoder.forward(input, &hidden);

    DeformationSet<S> delta = DeformationSet<S>::zeros(n);
    for (size_t i = 0; i < n; ++i) {
      for (int k = 0; k < 3; ++k) delta.d_centers[3 * i + k] = out(k, Eigen::Index(i));
      if (tag == BranchTag::Face) {
        for (int k = 0; k < 3; ++k) delta.d_scales[3 * i + k] = out(3 + k, Eigen::Index(i));
        for (int k = 0; k < 4; ++k) delta.d_rotations[4 * i + k] = out(6 + k, Eigen::Index(i));
      }
    }

    if (trace) {
      trace->positions = std::move(positions);
      trace->input = std::move(input);
      trace->v_a = std::move(v_a);
      trace->v_e = std::move(v_e);
      trace->hidden = std::move(hidden);
      trace->audio = audio;
      trace->expr = expr;
    }
    return delta;
  }

  // Chain rule from upstream deformation gradients to every trainable tensor.
  Grads backward(const Trace& trace, const DeformationSet<S>& upstream) const {
    require(upstream.count() == trace.count(),
            cat(to_string(tag), " branch backward: upstream count ", upstream.count(),
                " does not match trace count ", trace.count()));
    const size_t n = trace.count();
    const int enc_dim = cfg.grid.feature_dim();

    MatX<S> d_out(decoder_output_dim(), n);
    for (size_t i = 0; i < n; ++i) {
      for (int k = 0; k < 3; ++k) d_out(k, Eigen::Index(i)) = upstream.d_centers[3 * i + k];
      if (tag == BranchTag::Face) {
        for (int k = 0; k < 3; ++k) d_out(3 + k, Eigen::Index(i)) = upstream.d_scales[3 * i + k];
        for (int k = 0; k < 4; ++k)
          d_out(6 + k, Eigen::Index(i)) = upstream.d_rotations[4 * i + k];
      }
    }

    Grads g;
    g.d_tables = encoder.zero_grads();
    if (has_attention()) g.d_attention = attention.zero_grads();
    g.d_weights = decoder.zero_weight_grads();
    g.d_biases = decoder.zero_bias_grads();
    g.d_positions = MatX<S>::Zero(3, n);

    const MatX<S> d_input = decoder.backward(trace.input, trace.hidden, d_out, g.d_weights,
                                             g.d_biases);

    // Scatter in primitive order: deterministic for any worker count.
    std::vector<S> d_va(size_t(cfg.dim_audio)), d_ve(size_t(cfg.dim_expr));
    for (size_t i = 0; i < n; ++i) {
      const Vec3<S> mu = trace.positions.col(Eigen::Index(i));
      Vec3<S> d_pos =
          encoder.encode_backward(mu, d_input.col(Eigen::Index(i)).data(), g.d_tables);
      if (has_attention()) {
        for (int k = 0; k < cfg.dim_audio; ++k)
          d_va[size_t(k)] = d_input(enc_dim + k, Eigen::Index(i)) * trace.audio[k];
        for (int k = 0; k < cfg.dim_expr; ++k)
          d_ve[size_t(k)] = d_input(enc_dim + cfg.dim_audio + k, Eigen::Index(i)) * trace.expr[k];
        d_pos += attention.eval_backward(mu, trace.v_a.col(Eigen::Index(i)).data(),
                                         trace.v_e.col(Eigen::Index(i)).data(), d_va.data(),
                                         d_ve.data(), g.d_attention);
      }
      g.d_positions.col(Eigen::Index(i)) = d_pos;
    }
    return g;
  }
};

// Eq-7 style face deformation for a single position (test/diagnostic path).
template <class S>
DeformationSet<S> face_deformation(const MotionFieldBranch<S>& branch, const GaussianSet<S>& set,
                                   const VecX<S>& audio, const VecX<S>& expr) {
  require(branch.tag == BranchTag::Face, "face_deformation: branch is not a face branch");
  return branch.forward(set, audio, expr, nullptr);
}

// Eq-8 style mouth deformation: translation only, audio-conditioned.
template <class S>
DeformationSet<S> mouth_deformation(const MotionFieldBranch<S>& branch, const GaussianSet<S>& set,
                                    const VecX<S>& audio) {
  require(branch.tag == BranchTag::Mouth, "mouth_deformation: branch is not a mouth branch");
  return branch.forward(set, audio, VecX<S>(), nullptr);
}

}  // namespace dgs
