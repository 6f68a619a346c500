#pragma once

#include <filesystem>

#include "dgs/dataset.hpp"
#include "dgs/gaussian_field.hpp"

namespace dgs {

// Procedural dynamic-scene description. Generation is deterministic per seed.
struct SynthSceneSpec {
  uint64_t seed = 1;
  int frames = 60;
  int width = 64, height = 64;
  int shell_points = 420;        // primitive budget for the face shell
  double jaw_amplitude = 0.16;   // world-space travel of the lower face
  double blink_amplitude = 0.085;
  double jaw_cycles = 2.3;       // condition-to-motion mapping
  double blink_count = 3.0;      // blink events over the clip
  double orbit_amplitude = 0.10; // camera yaw oscillation, radians
  double orbit_cycles = 1.0;
  int dim_audio = 16;
  int dim_expr = 7;
  int test_every = 6;            // frame i is held out when i % test_every == 0
  int sh_degree = 1;
};

SynthSceneSpec synth_spec_from_json(const std::string& text);
std::string synth_spec_to_json(const SynthSceneSpec& spec);

// Analytic ground truth behind the generator, exposed for tests.
struct SynthGroundTruth {
  GaussianSet<double> canonical;       // rest pose
  std::vector<uint8_t> is_cavity;      // per-primitive membership
  std::vector<double> jaw_weight;      // per-primitive translation gain, jaw
  std::vector<double> blink_weight;    // per-primitive translation gain, blink
  std::vector<double> jaw_trace;       // normalized [0,1], per frame
  std::vector<double> blink_trace;
  std::vector<double> teeth_trace;
  std::vector<Camera<double>> cameras;
  std::vector<VecX<double>> audio;     // per frame
  std::vector<VecX<double>> expr;
  Vec3<double> background;
  Aabb<double> scene_bbox, face_bbox, mouth_bbox;

  // Deformed primitive set for one frame of the analytic animation.
  GaussianSet<double> frame_set(int frame) const;
};

SynthGroundTruth build_ground_truth(const SynthSceneSpec& spec);

// Renders the analytic scene with the serial reference compositor (double
// precision), emits frames, masks, condition blobs and manifest.json.
void generate_synthetic(const SynthSceneSpec& spec, const std::filesystem::path& out_dir);

}  // namespace dgs
