#include "dgs/dataset.hpp"

#include <json.hpp>

#include "dgs/io.hpp"

namespace dgs {

using nlohmann::json;

namespace {

Aabb<float> bbox_from_json(const json& j, const std::string& where) {
  require(j.contains("lo") && j.contains("hi"), cat("manifest: ", where, " missing lo/hi"));
  Aabb<float> b;
  for (int k = 0; k < 3; ++k) {
    b.lo[k] = j.at("lo")[size_t(k)].get<float>();
    b.hi[k] = j.at("hi")[size_t(k)].get<float>();
  }
  return b;
}

Image<float> load_mask(const std::filesystem::path& path) {
  Image<float> m = read_png(path);
  require(m.channels == 1, cat(path.string(), ": mask must be single-channel"));
  for (float v : m.data)
    require(v == 0.0f || v == 1.0f, cat(path.string(), ": mask is not binary (value ",
                                        v, " found)"));
  return m;
}

}  // namespace

Dataset load_dataset(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  require(std::filesystem::exists(manifest_path),
          cat("load_dataset: missing ", manifest_path.string()));
  json m;
  try {
    m = json::parse(read_text_file(manifest_path));
  } catch (const json::exception& e) {
    throw std::invalid_argument(cat(manifest_path.string(), ": malformed JSON: ", e.what()));
  }

  Dataset ds;
  try {
    ds.width = m.at("width").get<int>();
    ds.height = m.at("height").get<int>();
    ds.dim_audio = m.at("dim_audio").get<int>();
    ds.dim_expr = m.at("dim_expr").get<int>();
    for (int k = 0; k < 3; ++k) ds.background[k] = m.at("background")[size_t(k)].get<float>();
    ds.scene_bbox = bbox_from_json(m.at("scene_bbox"), "scene_bbox");
    ds.face_bbox = bbox_from_json(m.at("face_bbox"), "face_bbox");
    ds.mouth_bbox = bbox_from_json(m.at("mouth_bbox"), "mouth_bbox");
    ds.train_split = m.at("train_split").get<std::vector<int>>();
    ds.test_split = m.at("test_split").get<std::vector<int>>();
  } catch (const json::exception& e) {
    throw std::invalid_argument(cat(manifest_path.string(), ": malformed record: ", e.what()));
  }

  const auto& jf = m.at("frames");
  const size_t n = jf.size();
  require(size_t(m.at("frame_count").get<int>()) == n,
          cat(manifest_path.string(), ": frame_count does not match frames array"));

  const auto& ji = m.at("intrinsics");
  const float fx = ji.at("fx").get<float>();
  const float fy = ji.at("fy").get<float>();
  const float cx = ji.at("cx").get<float>();
  const float cy = ji.at("cy").get<float>();
  const float near = ji.at("near").get<float>();

  const std::vector<float> audio_blob = read_f32_blob(dir / "cond" / "a.bin");
  const std::vector<float> expr_blob = read_f32_blob(dir / "cond" / "e.bin");
  require(audio_blob.size() == n * size_t(ds.dim_audio),
          cat(dir.string(), "/cond/a.bin: expected ", n * size_t(ds.dim_audio), " floats, got ",
              audio_blob.size()));
  require(expr_blob.size() == n * size_t(ds.dim_expr),
          cat(dir.string(), "/cond/e.bin: expected ", n * size_t(ds.dim_expr), " floats, got ",
              expr_blob.size()));

  json jm;
  try {
    jm = json::parse(read_text_file(dir / "cond" / "m.json"));
  } catch (const json::exception& e) {
    throw std::invalid_argument(cat(dir.string(), "/cond/m.json: malformed JSON: ", e.what()));
  }
  for (auto it = jm.begin(); it != jm.end(); ++it) {
    auto vals = it.value().get<std::vector<double>>();
    require(vals.size() == n, cat(dir.string(), "/cond/m.json: metric '", it.key(), "' has ",
                                  vals.size(), " values, expected ", n));
    for (double v : vals)
      require(v >= 0.0 && v <= 1.0, cat(dir.string(), "/cond/m.json: metric '", it.key(),
                                        "' value ", v, " outside [0,1]"));
    ds.metrics[it.key()] = std::move(vals);
  }

  ds.frames.resize(n);
  std::exception_ptr err;
#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < long(n); ++i) {
    try {
      const auto& rec = jf[size_t(i)];
      DatasetFrame& f = ds.frames[size_t(i)];
      f.file = rec.at("file").get<std::string>();
      f.mask_face_file = rec.at("mask_face").get<std::string>();
      f.mask_mouth_file = rec.at("mask_mouth").get<std::string>();
      for (const auto* name : {&f.file, &f.mask_face_file, &f.mask_mouth_file})
        require(std::filesystem::exists(dir / *name),
                cat("load_dataset: missing file ", (dir / *name).string()));
      f.frame = read_png(dir / f.file);
      require(f.frame.channels == 3 && f.frame.width == ds.width && f.frame.height == ds.height,
              cat((dir / f.file).string(), ": frame shape mismatch"));
      f.mask_face = load_mask(dir / f.mask_face_file);
      f.mask_mouth = load_mask(dir / f.mask_mouth_file);
      require(f.mask_face.width == ds.width && f.mask_face.height == ds.height &&
                  f.mask_mouth.width == ds.width && f.mask_mouth.height == ds.height,
              cat("load_dataset: mask shape mismatch for frame ", i));

      f.camera.fx = fx; f.camera.fy = fy;
      f.camera.cx = cx; f.camera.cy = cy;
      f.camera.width = ds.width; f.camera.height = ds.height;
      f.camera.near_plane = near;
      const auto& rot = rec.at("rotation");
      const auto& tr = rec.at("translation");
      for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) f.camera.rotation(r, c) = rot[size_t(3 * r + c)].get<float>();
      for (int k = 0; k < 3; ++k) f.camera.translation[k] = tr[size_t(k)].get<float>();
      f.camera.validate();

      f.audio = Eigen::Map<const VecX<float>>(audio_blob.data() + size_t(i) * ds.dim_audio,
                                              ds.dim_audio);
      f.expr = Eigen::Map<const VecX<float>>(expr_blob.data() + size_t(i) * ds.dim_expr,
                                             ds.dim_expr);
    } catch (...) {
#pragma omp critical
      if (!err) err = std::current_exception();
    }
  }
  if (err) std::rethrow_exception(err);

  for (int idx : ds.train_split)
    require(idx >= 0 && size_t(idx) < n, cat(manifest_path.string(), ": train index ", idx,
                                             " out of range"));
  for (int idx : ds.test_split)
    require(idx >= 0 && size_t(idx) < n, cat(manifest_path.string(), ": test index ", idx,
                                             " out of range"));
  return ds;
}

}  // namespace dgs
