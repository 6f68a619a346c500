#pragma once

#include <filesystem>

#include "dgs/io.hpp"
#include "dgs/losses.hpp"
#include "dgs/model.hpp"

namespace dgs {

// Eq.-9 fusion: C_head = C_face * A_face + C_mouth * (1 - A_face), per pixel.
// The mouth render is expected to already sit over the dataset background.
template <class S>
Image<S> fuse_head(const Image<S>& c_face, const Image<S>& a_face, const Image<S>& c_mouth) {
  require_same_shape(c_face, c_mouth, "fuse_head");
  require(a_face.height == c_face.height && a_face.width == c_face.width &&
              a_face.channels == 1,
          "fuse_head: A_face shape mismatch");
  for (const S a : a_face.data)
    require(a >= S(0) && a <= S(1), cat("fuse_head: A_face value ", a, " outside [0,1]"));
  Image<S> out(c_face.height, c_face.width, 3);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x) {
      const S a = a_face.at(0, y, x);
      for (int c = 0; c < 3; ++c)
        out.at(c, y, x) = c_face.at(c, y, x) * a + c_mouth.at(c, y, x) * (S(1) - a);
    }
  return out;
}

// Backward of fuse_head: dC_face = g * A, dA_face = g . (C_face - C_mouth),
// dC_mouth = g * (1 - A).
template <class S>
void fuse_head_backward(const Image<S>& d_head, const Image<S>& c_face, const Image<S>& a_face,
                        const Image<S>& c_mouth, Image<S>& d_c_face, Image<S>& d_a_face,
                        Image<S>& d_c_mouth) {
  d_c_face = Image<S>(c_face.height, c_face.width, 3);
  d_a_face = Image<S>(c_face.height, c_face.width, 1);
  d_c_mouth = Image<S>(c_face.height, c_face.width, 3);
  for (int y = 0; y < c_face.height; ++y)
    for (int x = 0; x < c_face.width; ++x) {
      const S a = a_face.at(0, y, x);
      S da = S(0);
      for (int c = 0; c < 3; ++c) {
        const S g = d_head.at(c, y, x);
        d_c_face.at(c, y, x) = g * a;
        d_c_mouth.at(c, y, x) = g * (S(1) - a);
        da += g * (c_face.at(c, y, x) - c_mouth.at(c, y, x));
      }
      d_a_face.at(0, y, x) = da;
    }
}

// Renders both branches for one condition sample and fuses them.
template <class S>
HeadRender<S> render_head(const TalkingHeadModel<S>& model, const Camera<S>& cam,
                          const VecX<S>& audio, const VecX<S>& expr) {
  HeadRender<S> out;
  RenderOptions<S> face_opts;  // raw C, A
  RenderOptions<S> mouth_opts;
  mouth_opts.background = model.background;

  const DeformationSet<S> face_delta =
      model.face_field.forward(model.face_canonical, audio, expr, nullptr);
  const GaussianSet<S> face_set = apply_deformation(model.face_canonical, face_delta);
  if (model.single_branch) {
    RenderOptions<S> opts;
    opts.background = model.background;
    out.face = render_forward(face_set, cam, opts);
    out.fused = out.face.color;
    return out;
  }
  out.face = render_forward(face_set, cam, face_opts);

  const DeformationSet<S> mouth_delta =
      model.mouth_field.forward(model.mouth_canonical, audio, VecX<S>(), nullptr);
  const GaussianSet<S> mouth_set = apply_deformation(model.mouth_canonical, mouth_delta);
  out.mouth = render_forward(mouth_set, cam, mouth_opts);

  out.fused = fuse_head(out.face.color, out.face.alpha, out.mouth.color);
  return out;
}

struct SequenceMetrics {
  int frame = 0;
  double psnr = 0.0, ssim = 0.0;
};

template <class S>
struct SequenceResult {
  std::vector<Image<S>> frames;
  std::vector<SequenceMetrics> metrics;  // present when ground truth was given
};

// Renders a camera/condition track frame by frame; optionally compares against
// ground-truth images and writes numbered PNGs.
template <class S>
SequenceResult<S> render_sequence(const TalkingHeadModel<S>& model,
                                  const std::vector<Camera<S>>& cameras,
                                  const std::vector<VecX<S>>& audio,
                                  const std::vector<VecX<S>>& expr,
                                  const std::vector<Image<S>>* ground_truth = nullptr,
                                  const std::filesystem::path* out_dir = nullptr) {
  require(!cameras.empty(), "render_sequence: empty track");
  require(cameras.size() == audio.size() && cameras.size() == expr.size(),
          cat("render_sequence: track length mismatch (cameras ", cameras.size(), ", audio ",
              audio.size(), ", expr ", expr.size(), ")"));
  if (ground_truth)
    require(ground_truth->size() == cameras.size(),
            "render_sequence: ground-truth length mismatch");

  SequenceResult<S> result;
  result.frames.resize(cameras.size());
  for (size_t f = 0; f < cameras.size(); ++f)
    result.frames[f] = render_head(model, cameras[f], audio[f], expr[f]).fused;

  if (ground_truth) {
    result.metrics.resize(cameras.size());
    for (size_t f = 0; f < cameras.size(); ++f) {
      result.metrics[f].frame = int(f);
      result.metrics[f].psnr = double(psnr(result.frames[f], (*ground_truth)[f]));
      result.metrics[f].ssim = double(ssim(result.frames[f], (*ground_truth)[f]));
    }
  }
  if (out_dir) {
    std::filesystem::create_directories(*out_dir);
    for (size_t f = 0; f < cameras.size(); ++f) {
      char name[32];
      std::snprintf(name, sizeof(name), "%05zu.png", f);
      write_png(*out_dir / name, result.frames[f].template cast<float>());
    }
  }
  return result;
}

}  // namespace dgs
