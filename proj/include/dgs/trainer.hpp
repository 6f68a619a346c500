#pragma once

#include <fstream>
#include <optional>

#include "dgs/adam.hpp"
#include "dgs/dataset.hpp"
#include "dgs/fusion.hpp"
#include "dgs/sampler.hpp"

namespace dgs {

template <class S>
struct LrSchedule {
  S center_init = S(1.6e-4);   // scaled by branch extent, decays exponentially
  S center_final = S(1.6e-6);
  S scale_lr = S(5e-3);
  S rotation_lr = S(1e-3);
  S opacity_lr = S(5e-2);
  S feature_lr = S(2.5e-3);
  S hash_lr = S(5e-3);
  S attention_lr = S(5e-3);
  S decoder_lr = S(1e-3);
};

template <class S>
struct DensifyConfig {
  S grad_threshold = S(2e-4);   // on NDC-scale positional gradients
  long interval = 100;
  long start_iteration = 100;
  S prune_opacity = S(0.005);   // activated opacity below this is pruned
  S max_screen_size = S(0);     // pixels; 0 disables screen-size pruning
  S percent_dense = S(0.01);    // relative to branch extent: clone below, split above
  S split_scale_shrink = S(1.6);

  void validate() const {
    require(grad_threshold > S(0) && prune_opacity > S(0) && interval > 0,
            "DensifyConfig: thresholds must be positive");
  }
};

template <class S>
struct TrainSchedule {
  long static_iters = 1500;
  long motion_iters = 4000;
  long finetune_iters = 800;
  LossWeights<S> weights;
  LrSchedule<S> lr;
  DensifyConfig<S> densify;
  double densify_stop_fraction = 0.6;  // of the motion stage
  std::vector<IncrementalSamplerConfig> face_samplers;
  std::vector<IncrementalSamplerConfig> mouth_samplers;
  uint64_t seed = 1;
  int init_face_points = 700;
  int init_mouth_points = 160;
  long log_interval = 50;
  long checkpoint_interval = 0;  // 0: final checkpoint only

  void validate() const {
    require(static_iters >= 0 && motion_iters >= 0 && finetune_iters >= 0,
            "TrainSchedule: negative iteration count");
    densify.validate();
  }

  // Window traverses [0,1] over 70% of the motion stage unless configured.
  static IncrementalSamplerConfig default_sampler(const std::string& metric, long motion_iters,
                                                  SweepDirection dir) {
    IncrementalSamplerConfig c;
    c.metric = metric;
    c.lower = 0.0;
    c.upper = 0.15;
    c.step = motion_iters > 0 ? 1.0 / (0.7 * double(motion_iters)) : 0.0;
    c.cadence = 5;
    c.direction = dir;
    return c;
  }

  void fill_default_samplers() {
    if (face_samplers.empty()) {
      face_samplers.push_back(
          default_sampler("jaw_open", motion_iters, SweepDirection::Ascending));
      face_samplers.push_back(default_sampler("blink", motion_iters, SweepDirection::Ascending));
    }
    if (mouth_samplers.empty())
      mouth_samplers.push_back(
          default_sampler("teeth_vis", motion_iters, SweepDirection::Descending));
  }
};

enum class BranchMode { FaceMasked, MouthMasked, FullFrame };

struct IsEvent {
  long iteration = 0;
  std::string metric;
  double window_lo = 0.0, window_hi = 0.0;
  int frame = -1;  // -1: empty window, caller fell back to uniform sampling
  double metric_value = 0.0;
  bool ascending = true;
};

template <class S>
struct BranchState {
  BranchTag tag = BranchTag::Face;
  BranchMode mode = BranchMode::FaceMasked;
  GaussianSet<S> canonical;
  MotionFieldBranch<S> field;
  Aabb<S> bbox;
  Adam<S> adam;
  Rng rng{0};

  // densification statistics, reset at each densify event
  std::vector<S> grad_accum;
  std::vector<int> grad_count;
  std::vector<S> max_radii;

  std::vector<int> sampled_frames;  // per motion iteration, for diagnostics
  std::vector<IsEvent> is_events;
  size_t is_counter = 0;  // round-robin over sampler configs

  std::string name() const {
    return mode == BranchMode::FullFrame ? "single" : to_string(tag);
  }
};

// Three-stage optimizer for the deformable two-branch head model.
template <class S>
class Trainer {
 public:
  Trainer(const Dataset& dataset, const TrainSchedule<S>& schedule,
          std::ostream* log_stream = nullptr)
      : ds_(dataset), sched_(schedule), log_(log_stream) {
    sched_.validate();
    sched_.fill_default_samplers();
    require(!ds_.frames.empty(), "Trainer: empty dataset");
    require(!ds_.train_split.empty(), "Trainer: empty train split");
  }

  const TrainSchedule<S>& schedule() const { return sched_; }

  // Uniform canonical-field initialization inside the branch bounding box:
  // isotropic scale from the mean nearest-neighbor distance, opacity 0.1.
  void init_branch(BranchState<S>& b, BranchTag tag, BranchMode mode, int n_points,
                   int sh_degree = 1) {
    b.tag = tag;
    b.mode = mode;
    b.bbox = pick_bbox(mode).template cast<S>();
    b.rng.seed(sched_.seed * 0x9E3779B97F4A7C15ull + (mode == BranchMode::FullFrame ? 7
                                                      : tag == BranchTag::Face     ? 1
                                                                                   : 2));
    b.canonical = GaussianSet<S>();
    b.canonical.sh_degree = sh_degree;
    b.canonical.branch_tag = tag;

    std::vector<Vec3<S>> pts(size_t(n_points));
    for (auto& p : pts)
      for (int k = 0; k < 3; ++k) p[k] = uniform<S>(b.rng, b.bbox.lo[k], b.bbox.hi[k]);
    S mean_nn = S(0);
    for (size_t i = 0; i < pts.size(); ++i) {
      S best = std::numeric_limits<S>::max();
      for (size_t j = 0; j < pts.size(); ++j)
        if (j != i) best = std::min(best, S((pts[i] - pts[j]).norm()));
      mean_nn += best;
    }
    mean_nn = pts.size() > 1 ? mean_nn / S(pts.size()) : S(0.1);

    const int z = b.canonical.sh_dim();
    for (const auto& p : pts) {
      GaussianPrimitive<S> g;
      g.center = p;
      g.scale_raw = Vec3<S>::Constant(raw_from_scale(std::max(S(1e-3), mean_nn)));
      g.rotation = Vec4<S>(S(1), S(0), S(0), S(0));
      g.opacity_raw = raw_from_opacity(S(0.1));
      g.features = VecX<S>::Zero(z);
      constexpr double kShC0 = 0.28209479177387814;
      for (int c = 0; c < 3; ++c)
        g.features[c] = S(uniform<S>(b.rng, S(0.3), S(0.7)) / S(kShC0));
      b.canonical.push_back(g);
    }

    MotionFieldConfig<S> fc;
    fc.dim_audio = ds_.dim_audio;
    fc.dim_expr = ds_.dim_expr;
    b.field.init(tag, fc, b.bbox, sched_.seed * 1315423911ull + uint64_t(int(tag)) + 11u);
    reset_densify_stats(b);
  }

  // Stage 1 (Eq. 10): canonical field only, densification active.
  void stage_static_init(BranchState<S>& b) {
    for (long it = 0; it < sched_.static_iters; ++it) {
      const int frame = uniform_frame(b.rng);
      const auto stats = train_step(b, frame, it, /*use_field=*/false, "static",
                                    /*densify_active=*/true, sched_.static_iters);
      maybe_densify(b, it, /*stop_iter=*/sched_.static_iters);
      log_line(b, "static", it, stats);
    }
  }

  // Stage 2 (Eq. 11): joint canonical + motion-field optimization with
  // incremental sampling; densification until its stop iteration.
  void stage_motion_learning(BranchState<S>& b) {
    const long stop = long(sched_.densify_stop_fraction * double(sched_.motion_iters));
    const auto& samplers =
        b.tag == BranchTag::Mouth && b.mode != BranchMode::FullFrame ? sched_.mouth_samplers
                                                                     : sched_.face_samplers;
    for (long it = 0; it < sched_.motion_iters; ++it) {
      const int frame = pick_motion_frame(b, samplers, it);
      b.sampled_frames.push_back(frame);
      const auto stats = train_step(b, frame, it, /*use_field=*/true, "motion",
                                    /*densify_active=*/it < stop, sched_.motion_iters);
      maybe_densify(b, it, stop);
      log_line(b, "motion", it, stats, current_window(samplers, b, it));
    }
  }

  // Stage 3 (Eq. 12): fused full-frame fine-tuning; only color features move.
  void stage_finetune(BranchState<S>& face, BranchState<S>& mouth) {
    Rng rng(sched_.seed * 0x2545F4914F6CDD1Dull + 3);
    for (long it = 0; it < sched_.finetune_iters; ++it) {
      const int frame = ds_.train_split[uniform_idx(rng, ds_.train_split.size())];
      const DatasetFrame& df = ds_.frames[size_t(frame)];
      const Camera<S> cam = df.camera.template cast<S>();
      const VecX<S> audio = df.audio.template cast<S>();
      const VecX<S> expr = df.expr.template cast<S>();

      const DeformationSet<S> fd = face.field.forward(face.canonical, audio, expr, nullptr);
      const GaussianSet<S> face_set = apply_deformation(face.canonical, fd);
      RenderOptions<S> face_opts;
      const RenderOutput<S> face_out = render_forward(face_set, cam, face_opts);

      const DeformationSet<S> md =
          mouth.field.forward(mouth.canonical, audio, VecX<S>(), nullptr);
      const GaussianSet<S> mouth_set = apply_deformation(mouth.canonical, md);
      RenderOptions<S> mouth_opts;
      mouth_opts.background = background();
      const RenderOutput<S> mouth_out = render_forward(mouth_set, cam, mouth_opts);

      const Image<S> fused = fuse_head(face_out.color, face_out.alpha, mouth_out.color);
      const Image<S> target = df.frame.template cast<S>();
      Image<S> d_fused;
      const LossBreakdown<S> loss = loss_finetune(fused, target, sched_.weights, &d_fused);
      check_finite(loss.total, "finetune", it);

      Image<S> d_c_face, d_a_face, d_c_mouth;
      fuse_head_backward(d_fused, face_out.color, face_out.alpha, mouth_out.color, d_c_face,
                         d_a_face, d_c_mouth);
      const Image<S> zero_alpha(cam.height, cam.width, 1);
      const GaussianGrads<S> g_face =
          render_backward(face_set, face_out, d_c_face, d_a_face);
      const GaussianGrads<S> g_mouth =
          render_backward(mouth_set, mouth_out, d_c_mouth, zero_alpha);

      step_features_only(face, g_face);
      step_features_only(mouth, g_mouth);
      log_line(face, "finetune", it, loss);
    }
  }

  // Order: clone small high-gradient primitives, split large ones (children at
  // scale / shrink), prune low-opacity and oversized-footprint primitives.
  void densify_and_prune(BranchState<S>& b) {
    const auto& cfg = sched_.densify;
    const size_t n = b.canonical.count();
    const S extent = b.bbox.diagonal();
    const int z = b.canonical.sh_dim();

    std::vector<size_t> clone_idx, split_idx;
    for (size_t i = 0; i < n; ++i) {
      const S avg = b.grad_count[i] > 0 ? b.grad_accum[i] / S(b.grad_count[i]) : S(0);
      if (avg <= cfg.grad_threshold) continue;
      const Vec3<S> s_act = b.canonical.activated_scale(i);
      if (s_act.maxCoeff() <= cfg.percent_dense * extent)
        clone_idx.push_back(i);
      else
        split_idx.push_back(i);
    }

    GaussianSet<S> added;
    added.sh_degree = b.canonical.sh_degree;
    added.branch_tag = b.canonical.branch_tag;
    auto sample_child = [&](size_t i, S scale_div) {
      GaussianPrimitive<S> p = b.canonical.get(i);
      const Vec3<S> s_act = b.canonical.activated_scale(i);
      const Mat3<S> rot = quat_to_rotmat(normalize_quat(Vec4<S>(b.canonical.rotation(i))));
      Vec3<S> local;
      for (int k = 0; k < 3; ++k) local[k] = normal<S>(b.rng) * s_act[k];
      p.center += rot * local;
      for (int k = 0; k < 3; ++k)
        p.scale_raw[k] = raw_from_scale(std::max(S(1e-5), s_act[k] / scale_div));
      added.push_back(p);
    };
    for (size_t i : clone_idx) sample_child(i, S(1));
    for (size_t i : split_idx) {
      sample_child(i, cfg.split_scale_shrink);
      sample_child(i, cfg.split_scale_shrink);
    }

    // Prune: split parents, low opacity, oversized screen footprint.
    std::vector<uint8_t> keep(n, 1);
    for (size_t i : split_idx) keep[i] = 0;
    for (size_t i = 0; i < n; ++i) {
      if (b.canonical.activated_opacity(i) < cfg.prune_opacity) keep[i] = 0;
      if (cfg.max_screen_size > S(0) && b.max_radii[i] > cfg.max_screen_size) keep[i] = 0;
    }

    b.canonical.keep(keep);
    apply_keep_to_adam(b, keep);
    const size_t n_added = added.count();
    for (size_t i = 0; i < n_added; ++i) b.canonical.push_back(added.get(i));
    append_to_adam(b, n_added);
    require(b.canonical.count() > 0,
            cat(b.name(), " branch: densification pruned every primitive"));
    reset_densify_stats(b);
    (void)z;
  }

  TalkingHeadModel<S> assemble(const BranchState<S>& face, const BranchState<S>* mouth) const {
    TalkingHeadModel<S> m;
    m.face_canonical = face.canonical;
    m.face_field = face.field;
    m.background = background();
    if (mouth) {
      m.mouth_canonical = mouth->canonical;
      m.mouth_field = mouth->field;
    } else {
      m.single_branch = true;
    }
    return m;
  }

  const Dataset& dataset() const { return ds_; }

  Vec3<S> background() const { return ds_.background.template cast<S>(); }

  // One optimization step; exposed for tests that probe single iterations.
  LossBreakdown<S> train_step(BranchState<S>& b, int frame, long it, bool use_field,
                              const char* stage, bool densify_active, long stage_total) {
    const DatasetFrame& df = ds_.frames[size_t(frame)];
    const Camera<S> cam = df.camera.template cast<S>();
    const VecX<S> audio = df.audio.template cast<S>();
    const VecX<S> expr = df.expr.template cast<S>();

    typename MotionFieldBranch<S>::Trace trace;
    DeformationSet<S> delta;
    if (use_field)
      delta = b.field.forward(b.canonical, audio,
                              b.field.has_attention() ? expr : VecX<S>(), &trace);
    else
      delta = DeformationSet<S>::zeros(b.canonical.count());
    const GaussianSet<S> deformed = apply_deformation(b.canonical, delta);

    RenderOptions<S> opts;
    opts.background = background();
    const RenderOutput<S> fwd = render_forward(deformed, cam, opts);

    const Image<S> target = df.frame.template cast<S>();
    const Image<S>* mask = nullptr;
    Image<S> mask_s;
    if (b.mode == BranchMode::FaceMasked) mask_s = df.mask_face.template cast<S>();
    if (b.mode == BranchMode::MouthMasked) mask_s = df.mask_mouth.template cast<S>();
    if (b.mode != BranchMode::FullFrame) mask = &mask_s;

    Image<S> d_color;
    const LossBreakdown<S> loss =
        loss_reconstruction(fwd.color, target, mask, sched_.weights, &d_color);
    check_finite(loss.total, stage, it);

    const Image<S> zero_alpha(cam.height, cam.width, 1);
    const GaussianGrads<S> grads = render_backward(deformed, fwd, d_color, zero_alpha);

    if (use_field) {
      DeformationSet<S> upstream;
      upstream.d_centers = grads.d_centers;
      upstream.d_scales = grads.d_scales_raw;
      upstream.d_rotations = grads.d_rotations;
      const auto fg = b.field.backward(trace, upstream);
      step_field(b, fg, it, stage_total);
    }
    step_canonical(b, grads, it, stage_total);
    if (densify_active) accumulate_densify_stats(b, fwd, grads);
    return loss;
  }

  std::optional<std::pair<double, double>> current_window(
      const std::vector<IncrementalSamplerConfig>& samplers, const BranchState<S>& b,
      long it) const {
    if (samplers.empty()) return std::nullopt;
    const auto& cfg = samplers[b.is_counter % samplers.size()];
    return cfg.window_at(it);
  }

 private:
  Aabb<float> pick_bbox(BranchMode mode) const {
    switch (mode) {
      case BranchMode::FaceMasked: return ds_.face_bbox;
      case BranchMode::MouthMasked: return ds_.mouth_bbox;
      default: return ds_.scene_bbox;
    }
  }

  static size_t uniform_idx(Rng& rng, size_t n) {
    std::uniform_int_distribution<size_t> d(0, n - 1);
    return d(rng);
  }

  int uniform_frame(Rng& rng) const {
    return ds_.train_split[uniform_idx(rng, ds_.train_split.size())];
  }

  int pick_motion_frame(BranchState<S>& b, const std::vector<IncrementalSamplerConfig>& samplers,
                        long it) {
    if (samplers.empty()) return uniform_frame(b.rng);
    const auto& cfg = samplers[b.is_counter % samplers.size()];
    if (it % cfg.cadence != 0) return uniform_frame(b.rng);
    b.is_counter += 1;

    std::vector<double> train_metrics;
    const auto& all = ds_.metric(cfg.metric);
    for (int f : ds_.train_split) train_metrics.push_back(all[size_t(f)]);
    const auto picked = incremental_sample(train_metrics, it, cfg, b.rng);

    IsEvent ev;
    ev.iteration = it;
    ev.metric = cfg.metric;
    std::tie(ev.window_lo, ev.window_hi) = cfg.window_at(it);
    ev.ascending = cfg.direction == SweepDirection::Ascending;
    if (picked) {
      ev.frame = ds_.train_split[*picked];
      ev.metric_value = all[size_t(ev.frame)];
      b.is_events.push_back(ev);
      return ev.frame;
    }
    b.is_events.push_back(ev);
    return uniform_frame(b.rng);  // empty window
  }

  void check_finite(S loss, const char* stage, long it) const {
    if (!std::isfinite(loss))
      throw std::runtime_error(cat("training diverged: non-finite loss at ", stage,
                                   " iteration ", it));
  }

  void step_canonical(BranchState<S>& b, const GaussianGrads<S>& g, long it, long total) {
    const S extent = b.bbox.diagonal();
    const std::string p = b.name();
    const S center_lr = exp_decay_lr(sched_.lr.center_init * extent,
                                     sched_.lr.center_final * extent, it, total);
    b.adam.step(p + "/centers", b.canonical.centers.data(), g.d_centers.data(),
                g.d_centers.size(), center_lr);
    b.adam.step(p + "/scales", b.canonical.scales_raw.data(), g.d_scales_raw.data(),
                g.d_scales_raw.size(), sched_.lr.scale_lr);
    b.adam.step(p + "/rotations", b.canonical.rotations.data(), g.d_rotations.data(),
                g.d_rotations.size(), sched_.lr.rotation_lr);
    b.adam.step(p + "/opacities", b.canonical.opacities_raw.data(), g.d_opacities_raw.data(),
                g.d_opacities_raw.size(), sched_.lr.opacity_lr);
    b.adam.step(p + "/features", b.canonical.features.data(), g.d_features.data(),
                g.d_features.size(), sched_.lr.feature_lr);
  }

  void step_features_only(BranchState<S>& b, const GaussianGrads<S>& g) {
    b.adam.step(b.name() + "/features", b.canonical.features.data(), g.d_features.data(),
                g.d_features.size(), sched_.lr.feature_lr);
  }

  void step_field(BranchState<S>& b, const typename MotionFieldBranch<S>::Grads& g, long it,
                  long total) {
    (void)it;
    (void)total;
    const std::string p = b.name();
    auto& f = b.field;
    for (size_t t = 0; t < f.encoder.tables.size(); ++t)
      b.adam.step(cat(p, "/enc", t), f.encoder.tables[t].data(), g.d_tables[t].data(),
                  g.d_tables[t].size(), sched_.lr.hash_lr);
    if (f.has_attention())
      for (size_t t = 0; t < f.attention.planes.size(); ++t)
        b.adam.step(cat(p, "/attn", t), f.attention.planes[t].data(), g.d_attention[t].data(),
                    g.d_attention[t].size(), sched_.lr.attention_lr);
    for (int l = 0; l < f.decoder.layer_count(); ++l) {
      b.adam.step(cat(p, "/dec_w", l), f.decoder.weights[size_t(l)].data(),
                  g.d_weights[size_t(l)].data(), size_t(f.decoder.weights[size_t(l)].size()),
                  sched_.lr.decoder_lr);
      b.adam.step(cat(p, "/dec_b", l), f.decoder.biases[size_t(l)].data(),
                  g.d_biases[size_t(l)].data(), size_t(f.decoder.biases[size_t(l)].size()),
                  sched_.lr.decoder_lr);
    }
  }

  void accumulate_densify_stats(BranchState<S>& b, const RenderOutput<S>& fwd,
                                const GaussianGrads<S>& g) {
    for (const auto& pg : fwd.aux.projected) {
      const size_t i = size_t(pg.src);
      b.grad_accum[i] += g.pos2d_grad_norm[i];
      b.grad_count[i] += 1;
      b.max_radii[i] = std::max(b.max_radii[i], pg.radius);
    }
  }

  void maybe_densify(BranchState<S>& b, long it, long stop_iter) {
    const auto& cfg = sched_.densify;
    if (it < cfg.start_iteration || it >= stop_iter) return;
    if ((it + 1) % cfg.interval != 0) return;
    densify_and_prune(b);
  }

  void reset_densify_stats(BranchState<S>& b) {
    b.grad_accum.assign(b.canonical.count(), S(0));
    b.grad_count.assign(b.canonical.count(), 0);
    b.max_radii.assign(b.canonical.count(), S(0));
  }

  void apply_keep_to_adam(BranchState<S>& b, const std::vector<uint8_t>& keep) {
    const std::string p = b.name();
    b.adam.keep_rows(p + "/centers", keep, 3);
    b.adam.keep_rows(p + "/scales", keep, 3);
    b.adam.keep_rows(p + "/rotations", keep, 4);
    b.adam.keep_rows(p + "/opacities", keep, 1);
    b.adam.keep_rows(p + "/features", keep, size_t(b.canonical.sh_dim()));
  }

  void append_to_adam(BranchState<S>& b, size_t rows) {
    const std::string p = b.name();
    b.adam.append_rows(p + "/centers", rows, 3);
    b.adam.append_rows(p + "/scales", rows, 3);
    b.adam.append_rows(p + "/rotations", rows, 4);
    b.adam.append_rows(p + "/opacities", rows, 1);
    b.adam.append_rows(p + "/features", rows, size_t(b.canonical.sh_dim()));
  }

  void log_line(const BranchState<S>& b, const char* stage, long it, const LossBreakdown<S>& l,
                std::optional<std::pair<double, double>> window = std::nullopt) {
    if (!log_ || sched_.log_interval <= 0 || it % sched_.log_interval != 0) return;
    (*log_) << "{\"branch\":\"" << b.name() << "\",\"stage\":\"" << stage << "\",\"iter\":" << it
            << ",\"loss\":" << double(l.total) << ",\"l1\":" << double(l.l1)
            << ",\"dssim\":" << double(l.dssim) << ",\"perc\":" << double(l.perceptual)
            << ",\"n_primitives\":" << b.canonical.count();
    if (window)
      (*log_) << ",\"window_lo\":" << window->first << ",\"window_hi\":" << window->second;
    else
      (*log_) << ",\"window_lo\":null,\"window_hi\":null";
    (*log_) << "}\n";
    log_->flush();
  }

  const Dataset& ds_;
  TrainSchedule<S> sched_;
  std::ostream* log_;
};

}  // namespace dgs
