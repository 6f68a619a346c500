#include "dgs/checkpoint.hpp"

#include <json.hpp>

#include "dgs/io.hpp"

namespace dgs {

using nlohmann::json;

namespace {

constexpr int kCheckpointVersion = 1;

}  // namespace

void save_gaussian_set(const std::filesystem::path& base, const GaussianSet<float>& set) {
  const size_t n = set.count();
  const int z = set.sh_dim();
  json manifest{
      {"version", kCheckpointVersion},
      {"sh_degree", set.sh_degree},
      {"branch_tag", to_string(set.branch_tag)},
      {"count", n},
      {"fields",
       json::array({"center:3", "scale_raw:3", "rotation_wxyz:4", "opacity_raw:1",
                    cat("features:", z)})},
  };
  write_text_file(base.string() + ".json", manifest.dump(2) + "\n");

  std::vector<float> blob;
  blob.reserve(n * size_t(11 + z));
  for (size_t i = 0; i < n; ++i) {
    blob.insert(blob.end(), set.centers.begin() + 3 * i, set.centers.begin() + 3 * i + 3);
    blob.insert(blob.end(), set.scales_raw.begin() + 3 * i, set.scales_raw.begin() + 3 * i + 3);
    blob.insert(blob.end(), set.rotations.begin() + 4 * i, set.rotations.begin() + 4 * i + 4);
    blob.push_back(set.opacities_raw[i]);
    blob.insert(blob.end(), set.features.begin() + size_t(z) * i,
                set.features.begin() + size_t(z) * (i + 1));
  }
  write_f32_blob(base.string() + ".bin", blob.data(), blob.size());
}

GaussianSet<float> load_gaussian_set(const std::filesystem::path& base) {
  const json manifest = json::parse(read_text_file(base.string() + ".json"));
  require(manifest.at("version").get<int>() == kCheckpointVersion,
          cat("load_gaussian_set: unsupported version in ", base.string(), ".json"));
  GaussianSet<float> set;
  set.sh_degree = manifest.at("sh_degree").get<int>();
  set.branch_tag = branch_from_string(manifest.at("branch_tag").get<std::string>());
  const size_t n = manifest.at("count").get<size_t>();
  const int z = set.sh_dim();

  const std::vector<float> blob = read_f32_blob(base.string() + ".bin");
  require(blob.size() == n * size_t(11 + z),
          cat("load_gaussian_set: blob ", base.string(), ".bin has ", blob.size(),
              " floats, expected ", n * size_t(11 + z)));
  set.centers.resize(3 * n);
  set.scales_raw.resize(3 * n);
  set.rotations.resize(4 * n);
  set.opacities_raw.resize(n);
  set.features.resize(size_t(z) * n);
  const float* p = blob.data();
  for (size_t i = 0; i < n; ++i) {
    std::copy_n(p, 3, set.centers.data() + 3 * i); p += 3;
    std::copy_n(p, 3, set.scales_raw.data() + 3 * i); p += 3;
    std::copy_n(p, 4, set.rotations.data() + 4 * i); p += 4;
    set.opacities_raw[i] = *p++;
    std::copy_n(p, z, set.features.data() + size_t(z) * i); p += z;
  }
  return set;
}

namespace {

struct TensorEntry {
  std::string name;
  const float* data;
  size_t size;
};

std::vector<TensorEntry> tensor_table(const MotionFieldBranch<float>& b) {
  std::vector<TensorEntry> t;
  for (int p = 0; p < 3; ++p)
    for (int l = 0; l < b.cfg.grid.levels; ++l) {
      const auto& tab = b.encoder.tables[size_t(p) * b.cfg.grid.levels + l];
      t.push_back({cat("enc_p", p, "_l", l), tab.data(), tab.size()});
    }
  if (b.has_attention())
    for (int p = 0; p < 3; ++p)
      t.push_back({cat("attn_p", p), b.attention.planes[size_t(p)].data(),
                   b.attention.planes[size_t(p)].size()});
  for (int l = 0; l < b.decoder.layer_count(); ++l) {
    t.push_back({cat("dec_w", l), b.decoder.weights[size_t(l)].data(),
                 size_t(b.decoder.weights[size_t(l)].size())});
    t.push_back({cat("dec_b", l), b.decoder.biases[size_t(l)].data(),
                 size_t(b.decoder.biases[size_t(l)].size())});
  }
  return t;
}

}  // namespace

void save_motion_field(const std::filesystem::path& base, const MotionFieldBranch<float>& branch,
                       const Aabb<float>& bbox) {
  json manifest{
      {"version", kCheckpointVersion},
      {"branch_tag", to_string(branch.tag)},
      {"bbox_lo", {bbox.lo[0], bbox.lo[1], bbox.lo[2]}},
      {"bbox_hi", {bbox.hi[0], bbox.hi[1], bbox.hi[2]}},
      {"config",
       {{"levels", branch.cfg.grid.levels},
        {"features", branch.cfg.grid.features},
        {"log2_table_size", branch.cfg.grid.log2_table_size},
        {"base_resolution", branch.cfg.grid.base_resolution},
        {"growth", branch.cfg.grid.growth},
        {"attention_resolution", branch.cfg.attention_resolution},
        {"hidden_width", branch.cfg.hidden_width},
        {"hidden_depth", branch.cfg.hidden_depth},
        {"dim_audio", branch.cfg.dim_audio},
        {"dim_expr", branch.cfg.dim_expr}}},
  };
  json tensors = json::array();
  std::vector<float> blob;
  for (const auto& t : tensor_table(branch)) {
    tensors.push_back({{"name", t.name}, {"offset", blob.size()}, {"size", t.size}});
    blob.insert(blob.end(), t.data, t.data + t.size);
  }
  manifest["tensors"] = tensors;
  write_text_file(base.string() + ".json", manifest.dump(2) + "\n");
  write_f32_blob(base.string() + ".bin", blob.data(), blob.size());
}

MotionFieldBranch<float> load_motion_field(const std::filesystem::path& base,
                                           Aabb<float>* bbox_out) {
  const json manifest = json::parse(read_text_file(base.string() + ".json"));
  require(manifest.at("version").get<int>() == kCheckpointVersion,
          cat("load_motion_field: unsupported version in ", base.string(), ".json"));
  const auto& jc = manifest.at("config");
  MotionFieldConfig<float> cfg;
  cfg.grid.levels = jc.at("levels").get<int>();
  cfg.grid.features = jc.at("features").get<int>();
  cfg.grid.log2_table_size = jc.at("log2_table_size").get<int>();
  cfg.grid.base_resolution = jc.at("base_resolution").get<int>();
  cfg.grid.growth = jc.at("growth").get<float>();
  cfg.attention_resolution = jc.at("attention_resolution").get<int>();
  cfg.hidden_width = jc.at("hidden_width").get<int>();
  cfg.hidden_depth = jc.at("hidden_depth").get<int>();
  cfg.dim_audio = jc.at("dim_audio").get<int>();
  cfg.dim_expr = jc.at("dim_expr").get<int>();

  Aabb<float> bbox;
  for (int k = 0; k < 3; ++k) {
    bbox.lo[k] = manifest.at("bbox_lo")[size_t(k)].get<float>();
    bbox.hi[k] = manifest.at("bbox_hi")[size_t(k)].get<float>();
  }
  if (bbox_out) *bbox_out = bbox;

  MotionFieldBranch<float> branch;
  branch.init(branch_from_string(manifest.at("branch_tag").get<std::string>()), cfg, bbox,
              /*seed=*/0);

  const std::vector<float> blob = read_f32_blob(base.string() + ".bin");
  auto targets = tensor_table(branch);
  size_t ti = 0;
  for (const auto& jt : manifest.at("tensors")) {
    require(ti < targets.size(), cat("load_motion_field: too many tensors in ", base.string()));
    const auto name = jt.at("name").get<std::string>();
    const size_t offset = jt.at("offset").get<size_t>();
    const size_t size = jt.at("size").get<size_t>();
    require(name == targets[ti].name && size == targets[ti].size,
            cat("load_motion_field: tensor '", name, "' (", size, ") does not match expected '",
                targets[ti].name, "' (", targets[ti].size, ")"));
    require(offset + size <= blob.size(),
            cat("load_motion_field: tensor '", name, "' overruns blob in ", base.string()));
    std::copy_n(blob.data() + offset, size, const_cast<float*>(targets[ti].data));
    ++ti;
  }
  require(ti == targets.size(), cat("load_motion_field: missing tensors in ", base.string()));
  return branch;
}

}  // namespace dgs
