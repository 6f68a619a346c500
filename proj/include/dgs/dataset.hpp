#pragma once

#include <filesystem>
#include <map>

#include "dgs/camera.hpp"
#include "dgs/image.hpp"

namespace dgs {

struct DatasetFrame {
  std::string file, mask_face_file, mask_mouth_file;
  Image<float> frame;
  Image<float> mask_face;   // binary, complement of the inside-mouth region
  Image<float> mask_mouth;  // binary, inside-mouth region
  Camera<float> camera;
  VecX<float> audio;
  VecX<float> expr;
};

struct Dataset {
  int width = 0, height = 0;
  Vec3<float> background{Vec3<float>::Zero()};
  int dim_audio = 0, dim_expr = 0;
  Aabb<float> scene_bbox, face_bbox, mouth_bbox;
  std::vector<DatasetFrame> frames;
  std::vector<int> train_split, test_split;
  std::map<std::string, std::vector<double>> metrics;  // normalized to [0,1]

  const std::vector<double>& metric(const std::string& name) const {
    auto it = metrics.find(name);
    require(it != metrics.end(), cat("dataset: unknown metric '", name, "'"));
    return it->second;
  }
};

// Loads and validates a dataset directory (manifest.json layout). Throws with a
// path-qualified message on any missing file, malformed record or non-binary
// mask.
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace dgs
