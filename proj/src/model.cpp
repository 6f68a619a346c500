#include "dgs/model.hpp"

#include <json.hpp>

#include "dgs/io.hpp"

namespace dgs {

using nlohmann::json;

void save_model(const std::filesystem::path& dir, const TalkingHeadModel<float>& model) {
  std::filesystem::create_directories(dir);
  json j{{"version", 1},
         {"single_branch", model.single_branch},
         {"background", {model.background[0], model.background[1], model.background[2]}}};
  write_text_file(dir / "model.json", j.dump(2) + "\n");
  save_gaussian_set(dir / "face_canonical", model.face_canonical);
  save_motion_field(dir / "face_field", model.face_field, model.face_field.encoder.bbox);
  if (!model.single_branch) {
    save_gaussian_set(dir / "mouth_canonical", model.mouth_canonical);
    save_motion_field(dir / "mouth_field", model.mouth_field, model.mouth_field.encoder.bbox);
  }
}

TalkingHeadModel<float> load_model(const std::filesystem::path& dir) {
  const json j = json::parse(read_text_file(dir / "model.json"));
  require(j.at("version").get<int>() == 1,
          cat("load_model: unsupported version in ", (dir / "model.json").string()));
  TalkingHeadModel<float> m;
  m.single_branch = j.at("single_branch").get<bool>();
  for (int k = 0; k < 3; ++k) m.background[k] = j.at("background")[size_t(k)].get<float>();
  m.face_canonical = load_gaussian_set(dir / "face_canonical");
  m.face_field = load_motion_field(dir / "face_field");
  if (!m.single_branch) {
    m.mouth_canonical = load_gaussian_set(dir / "mouth_canonical");
    m.mouth_field = load_motion_field(dir / "mouth_field");
  }
  return m;
}

}  // namespace dgs
