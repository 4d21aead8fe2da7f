#include "simco/manifest.hpp"

#include <fstream>
#include <sstream>

namespace simco::shapegen {

Json to_json(const GeneratorConfig& c) {
  return Json{{"num_images", c.num_images},
              {"width", c.width},
              {"height", c.height},
              {"min_types", c.min_types},
              {"max_types", c.max_types},
              {"grid_probability", c.grid_probability},
              {"grid_min_rows", c.grid_min_rows},
              {"grid_max_rows", c.grid_max_rows},
              {"grid_min_cols", c.grid_min_cols},
              {"grid_max_cols", c.grid_max_cols},
              {"grid_max_jitter", c.grid_max_jitter},
              {"poisson_min_expected", c.poisson_min_expected},
              {"poisson_max_expected", c.poisson_max_expected},
              {"separation_factor", c.separation_factor},
              {"noise_amplitude", c.noise_amplitude},
              {"noise_cell", c.noise_cell},
              {"min_type_color_distance", c.min_type_color_distance},
              {"min_background_color_distance", c.min_background_color_distance},
              {"train_fraction", c.train_fraction},
              {"val_fraction", c.val_fraction},
              {"write_rasters", c.write_rasters}};
}

GeneratorConfig config_from_json(const Json& j) {
  if (!j.is_object()) throw ConfigError("generator config must be a JSON object");
  GeneratorConfig c;
  const Json defaults = to_json(c);
  for (const auto& [key, _] : j.items())
    if (!defaults.contains(key)) throw ConfigError("unknown generator config key: " + key);
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) {
      try {
        j.at(key).get_to(field);
      } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
      }
    }
  };
  get("num_images", c.num_images);
  get("width", c.width);
  get("height", c.height);
  get("min_types", c.min_types);
  get("max_types", c.max_types);
  get("grid_probability", c.grid_probability);
  get("grid_min_rows", c.grid_min_rows);
  get("grid_max_rows", c.grid_max_rows);
  get("grid_min_cols", c.grid_min_cols);
  get("grid_max_cols", c.grid_max_cols);
  get("grid_max_jitter", c.grid_max_jitter);
  get("poisson_min_expected", c.poisson_min_expected);
  get("poisson_max_expected", c.poisson_max_expected);
  get("separation_factor", c.separation_factor);
  get("noise_amplitude", c.noise_amplitude);
  get("noise_cell", c.noise_cell);
  get("min_type_color_distance", c.min_type_color_distance);
  get("min_background_color_distance", c.min_background_color_distance);
  get("train_fraction", c.train_fraction);
  get("val_fraction", c.val_fraction);
  get("write_rasters", c.write_rasters);
  c.validate();
  return c;
}

GeneratorConfig read_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config: " + path.string());
  try {
    return config_from_json(Json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

Json to_json(const ObjectType& t) {
  return Json{{"shape", to_string(t.shape)},
              {"color", {t.color.r, t.color.g, t.color.b}},
              {"scale", t.scale},
              {"rotation", t.rotation}};
}

ObjectType type_from_json(const Json& j) {
  ObjectType t;
  t.shape = shape_from_string(j.at("shape").get<std::string>());
  const auto& c = j.at("color");
  t.color = {c.at(0).get<std::uint8_t>(), c.at(1).get<std::uint8_t>(), c.at(2).get<std::uint8_t>()};
  t.scale = j.at("scale").get<double>();
  t.rotation = j.at("rotation").get<double>();
  return t;
}

Json to_json(const ImageRecord& r) {
  Json types = Json::array();
  for (const auto& t : r.types) types.push_back(to_json(t));
  Json instances = Json::array();
  for (const auto& i : r.instances) {
    instances.push_back(Json{{"type_index", i.type_index},
                             {"center", {i.center.x, i.center.y}},
                             {"bbox", {i.bbox.x0, i.bbox.y0, i.bbox.x1, i.bbox.y1}}});
  }
  return Json{{"id", r.id},         {"file", r.file},           {"width", r.width},
              {"height", r.height}, {"split", to_string(r.split)}, {"types", std::move(types)},
              {"instances", std::move(instances)}};
}

ImageRecord record_from_json(const Json& j) {
  ImageRecord r;
  r.id = j.at("id").get<std::string>();
  r.file = j.at("file").get<std::string>();
  r.width = j.at("width").get<int>();
  r.height = j.at("height").get<int>();
  r.split = split_from_string(j.at("split").get<std::string>());
  for (const auto& t : j.at("types")) r.types.push_back(type_from_json(t));
  for (const auto& i : j.at("instances")) {
    ShapeInstance inst;
    inst.type_index = i.at("type_index").get<int>();
    if (inst.type_index < 0 || inst.type_index >= static_cast<int>(r.types.size()))
      throw Error("manifest: instance type_index out of range in image " + r.id);
    inst.center = {i.at("center").at(0).get<double>(), i.at("center").at(1).get<double>()};
    const auto& b = i.at("bbox");
    inst.bbox = {b.at(0).get<int>(), b.at(1).get<int>(), b.at(2).get<int>(), b.at(3).get<int>()};
    r.instances.push_back(inst);
  }
  return r;
}

Json to_json(const DatasetManifest& m) {
  Json images = Json::array();
  for (const auto& r : m.images) images.push_back(to_json(r));
  return Json{{"seed", m.seed}, {"config", to_json(m.config)}, {"images", std::move(images)}};
}

DatasetManifest manifest_from_json(const Json& j) {
  DatasetManifest m;
  m.seed = j.at("seed").get<std::uint64_t>();
  m.config = config_from_json(j.at("config"));
  for (const auto& r : j.at("images")) m.images.push_back(record_from_json(r));
  return m;
}

std::string serialize(const DatasetManifest& manifest) { return to_json(manifest).dump(1) + "\n"; }

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << serialize(manifest);
  if (!out) throw IoError("write failed: " + path.string());
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open manifest: " + path.string());
  try {
    return manifest_from_json(Json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed manifest " + path.string() + ": " + e.what());
  }
}

}  // namespace simco::shapegen
