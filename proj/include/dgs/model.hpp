#pragma once

#include "dgs/checkpoint.hpp"
#include "dgs/motion_field.hpp"
#include "dgs/rasterizer.hpp"

namespace dgs {

// Both deformable branches plus what is needed to render them together.
// In single-branch mode (decomposition ablation) only the face branch exists
// and its render over the background is the final image.
template <class S>
struct TalkingHeadModel {
  GaussianSet<S> face_canonical;
  GaussianSet<S> mouth_canonical;
  MotionFieldBranch<S> face_field;
  MotionFieldBranch<S> mouth_field;
  Vec3<S> background{Vec3<S>::Zero()};
  bool single_branch = false;
};

template <class S>
struct HeadRender {
  RenderOutput<S> face;   // raw C_face, A_face (no background)
  RenderOutput<S> mouth;  // composited over the scene background
  Image<S> fused;         // Eq.-9 combination
};

// Checkpoint directory: model.json plus <branch>_canonical / <branch>_field
// manifest+blob pairs.
void save_model(const std::filesystem::path& dir, const TalkingHeadModel<float>& model);
TalkingHeadModel<float> load_model(const std::filesystem::path& dir);

}  // namespace dgs
