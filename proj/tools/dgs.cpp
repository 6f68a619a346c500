// Command-line front end: synthetic data generation, three-stage training,
// sequence rendering, evaluation and the numerical self-checks.

#include <CLI11.hpp>
#include <json.hpp>

#include <iostream>

#include "dgs/gradcheck.hpp"
#include "dgs/io.hpp"
#include "dgs/synth.hpp"
#include "dgs/trainer.hpp"

namespace {

using namespace dgs;
using nlohmann::json;

TrainSchedule<float> schedule_from_json(const json& j) {
  TrainSchedule<float> s;
  auto opt = [&j](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  opt("static_iters", s.static_iters);
  opt("motion_iters", s.motion_iters);
  opt("finetune_iters", s.finetune_iters);
  opt("seed", s.seed);
  opt("init_face_points", s.init_face_points);
  opt("init_mouth_points", s.init_mouth_points);
  opt("log_interval", s.log_interval);
  opt("lambda_dssim", s.weights.lambda_dssim);
  opt("gamma_perceptual", s.weights.gamma_perceptual);
  opt("densify_interval", s.densify.interval);
  opt("densify_grad_threshold", s.densify.grad_threshold);
  opt("densify_stop_fraction", s.densify_stop_fraction);
  opt("prune_opacity", s.densify.prune_opacity);
  opt("center_lr_init", s.lr.center_init);
  opt("center_lr_final", s.lr.center_final);
  opt("scale_lr", s.lr.scale_lr);
  opt("rotation_lr", s.lr.rotation_lr);
  opt("opacity_lr", s.lr.opacity_lr);
  opt("feature_lr", s.lr.feature_lr);
  opt("hash_lr", s.lr.hash_lr);
  opt("attention_lr", s.lr.attention_lr);
  opt("decoder_lr", s.lr.decoder_lr);
  return s;
}

int cmd_synth(const std::string& spec_path, const std::string& out) {
  SynthSceneSpec spec;
  if (!spec_path.empty()) spec = synth_spec_from_json(read_text_file(spec_path));
  generate_synthetic(spec, out);
  std::cout << "wrote dataset to " << out << "\n";
  return 0;
}

int cmd_train(const std::string& data, const std::string& out, const std::string& stage,
              long seed_override, const std::string& config_path, bool single_branch) {
  const Dataset ds = load_dataset(data);
  TrainSchedule<float> sched;
  if (!config_path.empty()) sched = schedule_from_json(json::parse(read_text_file(config_path)));
  if (seed_override >= 0) sched.seed = uint64_t(seed_override);
  sched.fill_default_samplers();

  std::filesystem::create_directories(out);
  std::ofstream log(std::filesystem::path(out) / "train.log", std::ios::app);
  Trainer<float> trainer(ds, sched, &log);

  BranchState<float> face, mouth;
  const bool fresh = stage == "all" || stage == "static";
  if (fresh) {
    trainer.init_branch(face, BranchTag::Face,
                        single_branch ? BranchMode::FullFrame : BranchMode::FaceMasked,
                        sched.init_face_points);
    if (!single_branch)
      trainer.init_branch(mouth, BranchTag::Mouth, BranchMode::MouthMasked,
                          sched.init_mouth_points);
  } else {
    const TalkingHeadModel<float> m = load_model(out);
    require(m.single_branch == single_branch,
            "train: checkpoint branch layout does not match --single-branch flag");
    face.tag = BranchTag::Face;
    face.mode = single_branch ? BranchMode::FullFrame : BranchMode::FaceMasked;
    face.canonical = m.face_canonical;
    face.field = m.face_field;
    face.bbox = m.face_field.encoder.bbox;
    face.rng.seed(sched.seed * 0x9E3779B97F4A7C15ull + (single_branch ? 7 : 1));
    face.grad_accum.assign(face.canonical.count(), 0.f);
    face.grad_count.assign(face.canonical.count(), 0);
    face.max_radii.assign(face.canonical.count(), 0.f);
    if (!single_branch) {
      mouth.tag = BranchTag::Mouth;
      mouth.mode = BranchMode::MouthMasked;
      mouth.canonical = m.mouth_canonical;
      mouth.field = m.mouth_field;
      mouth.bbox = m.mouth_field.encoder.bbox;
      mouth.rng.seed(sched.seed * 0x9E3779B97F4A7C15ull + 2);
      mouth.grad_accum.assign(mouth.canonical.count(), 0.f);
      mouth.grad_count.assign(mouth.canonical.count(), 0);
      mouth.max_radii.assign(mouth.canonical.count(), 0.f);
    }
  }

  const bool run_static = stage == "all" || stage == "static";
  const bool run_motion = stage == "all" || stage == "motion";
  const bool run_finetune = (stage == "all" || stage == "finetune") && !single_branch;
  if (run_static) {
    trainer.stage_static_init(face);
    if (!single_branch) trainer.stage_static_init(mouth);
  }
  if (run_motion) {
    trainer.stage_motion_learning(face);
    if (!single_branch) trainer.stage_motion_learning(mouth);
  }
  if (run_finetune) trainer.stage_finetune(face, mouth);

  const TalkingHeadModel<float> model =
      trainer.assemble(face, single_branch ? nullptr : &mouth);
  save_model(out, model);
  std::cout << "saved checkpoint to " << out << "\n";
  return 0;
}

struct Track {
  std::vector<Camera<float>> cameras;
  std::vector<VecX<float>> audio, expr;
};

Track load_track(const std::string& path) {
  const json j = json::parse(read_text_file(path));
  Track t;
  require(j.contains("frames"), cat(path, ": track has no frames array"));
  Camera<float> base;
  base.width = j.at("width").get<int>();
  base.height = j.at("height").get<int>();
  base.fx = j.at("fx").get<float>();
  base.fy = j.at("fy").get<float>();
  base.cx = j.at("cx").get<float>();
  base.cy = j.at("cy").get<float>();
  base.near_plane = j.contains("near") ? j.at("near").get<float>() : 0.1f;
  for (const auto& jf : j.at("frames")) {
    Camera<float> cam = base;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c)
        cam.rotation(r, c) = jf.at("rotation")[size_t(3 * r + c)].get<float>();
    for (int k = 0; k < 3; ++k) cam.translation[k] = jf.at("translation")[size_t(k)].get<float>();
    cam.validate();
    t.cameras.push_back(cam);
    const auto a = jf.at("a").get<std::vector<float>>();
    const auto e = jf.at("e").get<std::vector<float>>();
    t.audio.push_back(Eigen::Map<const VecX<float>>(a.data(), long(a.size())));
    t.expr.push_back(Eigen::Map<const VecX<float>>(e.data(), long(e.size())));
  }
  require(!t.cameras.empty(), cat(path, ": track is empty"));
  return t;
}

int cmd_render(const std::string& ckpt, const std::string& track_path, const std::string& out) {
  const TalkingHeadModel<float> model = load_model(ckpt);
  const Track track = load_track(track_path);
  const std::filesystem::path out_dir(out);
  render_sequence(model, track.cameras, track.audio, track.expr, nullptr, &out_dir);
  std::cout << "wrote " << track.cameras.size() << " frames to " << out << "\n";
  return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& data, const std::string& split) {
  const TalkingHeadModel<float> model = load_model(ckpt);
  const Dataset ds = load_dataset(data);
  const std::vector<int>& idx = split == "train" ? ds.train_split : ds.test_split;
  require(!idx.empty(), cat("eval: empty ", split, " split"));

  std::vector<Camera<float>> cams;
  std::vector<VecX<float>> audio, expr;
  std::vector<Image<float>> gt;
  for (int f : idx) {
    const auto& df = ds.frames[size_t(f)];
    cams.push_back(df.camera);
    audio.push_back(df.audio);
    expr.push_back(df.expr);
    gt.push_back(df.frame);
  }
  const auto result = render_sequence(model, cams, audio, expr, &gt, nullptr);
  double sum_psnr = 0, sum_ssim = 0;
  for (size_t k = 0; k < result.metrics.size(); ++k) {
    const auto& m = result.metrics[k];
    std::cout << "{\"frame\":" << idx[k] << ",\"psnr\":" << m.psnr << ",\"ssim\":" << m.ssim
              << "}\n";
    sum_psnr += m.psnr;
    sum_ssim += m.ssim;
  }
  std::cout << "{\"split\":\"" << split << "\",\"mean_psnr\":" << sum_psnr / double(idx.size())
            << ",\"mean_ssim\":" << sum_ssim / double(idx.size()) << "}\n";
  return 0;
}

template <class S>
int run_gradcheck(const std::string& module, double tolerance) {
  bool all_pass = true;
  auto report = [&](const std::vector<GradReport>& reps) {
    for (const auto& r : reps) {
      const bool ok = r.max_rel_err <= tolerance;
      all_pass = all_pass && ok;
      std::cout << (ok ? "PASS " : "FAIL ") << r.name << ": max_rel_err=" << r.max_rel_err
                << " checks=" << r.checks << "\n";
    }
  };
  if (module.empty() || module == "raster") report(gradcheck_rasterizer<S>(20, 42));
  if (module.empty() || module == "fields") {
    report(gradcheck_motion_field<S>(BranchTag::Face, 10, 43));
    report(gradcheck_motion_field<S>(BranchTag::Mouth, 10, 44));
  }
  if (module.empty() || module == "losses") {
    report(gradcheck_losses<S>(50, 45));
    report({gradcheck_fusion<S>(200, 46)});
  }
  return all_pass ? 0 : 1;
}

int cmd_oracle_check(int scenes) {
  Rng rng(2024);
  double max_dc = 0, max_da = 0;
  for (int s = 0; s < scenes; ++s) {
    const int n = 20 + int(rng() % 181);
    GaussianSet<double> set;
    set.sh_degree = 1;
    for (int i = 0; i < n; ++i) {
      GaussianPrimitive<double> p;
      p.center = Vec3<double>(uniform<double>(rng, -1.0, 1.0), uniform<double>(rng, -1.0, 1.0),
                              uniform<double>(rng, 1.5, 5.0));
      for (int k = 0; k < 3; ++k)
        p.scale_raw[k] = raw_from_scale(uniform<double>(rng, 0.02, 0.3));
      Vec4<double> q;
      for (int k = 0; k < 4; ++k) q[k] = normal<double>(rng);
      p.rotation = q / q.norm();
      p.opacity_raw = uniform<double>(rng, -2.0, 3.0);
      p.features = VecX<double>::Zero(set.sh_dim());
      for (int k = 0; k < set.sh_dim(); ++k) p.features[k] = uniform<double>(rng, -0.5, 1.5);
      set.push_back(p);
    }
    Camera<double> cam;
    cam.width = cam.height = 64;
    cam.fx = cam.fy = 70;
    cam.cx = cam.cy = 32;
    RenderOptions<double> opts;
    opts.background = Vec3<double>(0.1, 0.2, 0.3);
    opts.early_termination = false;
    const auto tiled = render_forward(set, cam, opts);
    const auto naive = render_naive(set, cam, opts);
    for (size_t i = 0; i < tiled.color.data.size(); ++i)
      max_dc = std::max(max_dc, std::abs(tiled.color.data[i] - naive.color.data[i]));
    for (size_t i = 0; i < tiled.alpha.data.size(); ++i)
      max_da = std::max(max_da, std::abs(tiled.alpha.data[i] - naive.alpha.data[i]));
  }
  std::cout << "oracle-check over " << scenes << " scenes: max|dC|=" << max_dc
            << " max|dA|=" << max_da << "\n";
  return (max_dc <= 1e-5 && max_da <= 1e-5) ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"deformable gaussian splatting talking-head engine"};
  app.require_subcommand(1);

  std::string spec_path, out, data, stage = "all", config_path, ckpt, track, split = "test";
  std::string module, precision = "double";
  long seed = -1;
  int scenes = 100;
  bool single_branch = false;

  auto* synth = app.add_subcommand("synth", "generate a synthetic dynamic dataset");
  synth->add_option("--spec", spec_path, "scene spec JSON");
  synth->add_option("--out", out, "output dataset directory")->required();

  auto* train = app.add_subcommand("train", "run the training stages");
  train->add_option("--data", data, "dataset directory")->required();
  train->add_option("--out", ckpt, "checkpoint directory")->required();
  train->add_option("--stage", stage)->check(CLI::IsMember({"all", "static", "motion",
                                                            "finetune"}));
  train->add_option("--seed", seed, "override schedule seed");
  train->add_option("--config", config_path, "schedule overrides JSON");
  train->add_flag("--single-branch", single_branch, "decomposition-ablation baseline");

  auto* render = app.add_subcommand("render", "render a camera/condition track");
  render->add_option("--ckpt", ckpt)->required();
  render->add_option("--track", track)->required();
  render->add_option("--out", out)->required();

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  gradcheck->add_option("--module", module)->check(CLI::IsMember({"raster", "fields",
                                                                  "losses"}));
  gradcheck->add_option("--precision", precision)->check(CLI::IsMember({"double", "single"}));

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
  eval->add_option("--ckpt", ckpt)->required();
  eval->add_option("--data", data)->required();
  eval->add_option("--split", split)->check(CLI::IsMember({"train", "test"}));

  auto* oracle = app.add_subcommand("oracle-check", "tile vs. naive renderer equivalence");
  oracle->add_option("--scenes", scenes);

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) return cmd_synth(spec_path, out);
    if (train->parsed()) return cmd_train(data, ckpt, stage, seed, config_path, single_branch);
    if (render->parsed()) return cmd_render(ckpt, track, out);
    if (gradcheck->parsed())
      return precision == "double" ? run_gradcheck<double>(module, 1e-6)
                                   : run_gradcheck<float>(module, 1e-3);
    if (eval->parsed()) return cmd_eval(ckpt, data, split);
    if (oracle->parsed()) return cmd_oracle_check(scenes);
  } catch (const std::exception& e) {
    std::cerr << "{\"error\":\"" << e.what() << "\"}\n";
    return 1;
  }
  return 0;
}
