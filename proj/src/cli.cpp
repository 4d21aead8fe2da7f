#include "simco/cli.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "simco/manifest.hpp"
#include "simco/parallel.hpp"

namespace simco::cli {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

const std::array<Rgb, 12> kPalette = {{{230, 25, 75},
                                       {60, 180, 75},
                                       {255, 225, 25},
                                       {0, 130, 200},
                                       {245, 130, 48},
                                       {145, 30, 180},
                                       {70, 240, 240},
                                       {240, 50, 230},
                                       {210, 245, 60},
                                       {250, 190, 212},
                                       {0, 128, 128},
                                       {170, 110, 40}}};

Json to_json(const RunConfig& c) {
  auto opt = [](const auto& o) { return o ? Json(*o) : Json(); };
  return {{"command", c.command},
          {"config", c.config.string()},
          {"data", c.data.string()},
          {"model", c.model.string()},
          {"out", c.out.string()},
          {"image", c.image.string()},
          {"seeds", c.seeds.string()},
          {"image_id", c.image_id},
          {"split", c.split},
          {"seed", c.seed},
          {"epochs", opt(c.epochs)},
          {"num_images", opt(c.num_images)},
          {"preference", opt(c.preference)},
          {"preferences", c.preferences},
          {"grid", c.grid},
          {"limit", c.limit},
          {"detector", detect::to_string(c.detector)},
          {"mode", count::to_string(c.mode)},
          {"gt_seeds", c.gt_seeds},
          {"overlay", c.overlay}};
}

RunConfig run_config_from_json(const Json& j) {
  RunConfig c;
  try {
    c.command = j.at("command").get<std::string>();
    c.config = j.at("config").get<std::string>();
    c.data = j.at("data").get<std::string>();
    c.model = j.at("model").get<std::string>();
    c.out = j.at("out").get<std::string>();
    c.image = j.at("image").get<std::string>();
    c.seeds = j.at("seeds").get<std::string>();
    c.image_id = j.at("image_id").get<std::string>();
    c.split = j.at("split").get<std::string>();
    c.seed = j.at("seed").get<std::uint64_t>();
    if (!j.at("epochs").is_null()) c.epochs = j.at("epochs").get<int>();
    if (!j.at("num_images").is_null()) c.num_images = j.at("num_images").get<int>();
    if (!j.at("preference").is_null()) c.preference = j.at("preference").get<double>();
    c.preferences = j.at("preferences").get<std::vector<double>>();
    c.grid = j.at("grid").get<int>();
    c.limit = j.at("limit").get<int>();
    c.detector = detect::source_from_string(j.at("detector").get<std::string>());
    c.mode = count::mode_from_string(j.at("mode").get<std::string>());
    c.gt_seeds = j.at("gt_seeds").get<bool>();
    c.overlay = j.at("overlay").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed run config: ") + e.what());
  }
  return c;
}

RasterImage render_overlay(const RasterImage& image, std::span<const detect::Detection> detections,
                           const cluster::ClusterResult& result, std::span<const int> kept) {
  RasterImage out = image;
  for (int c = 0; c < result.cluster_count(); ++c) {
    const bool counted = std::find(kept.begin(), kept.end(), c) != kept.end();
    const Rgb color = kPalette[c % kPalette.size()];
    for (int m : result.members(c)) draw_box(out, detections[m].bbox, color, counted ? 2 : 1);
  }
  return out;
}

RasterImage render_overlay(const RasterImage& image, const count::CountReport& report) {
  if (!report.clustering) return image;
  std::vector<int> kept;
  for (const auto& cc : report.clusters) {
    const auto& ex = report.clustering->exemplars;
    kept.push_back(static_cast<int>(std::lower_bound(ex.begin(), ex.end(), cc.exemplar) - ex.begin()));
  }
  return render_overlay(image, report.detections, *report.clustering, kept);
}

std::vector<BBox> read_seeds(const fs::path& path, const std::string& image_id) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open seeds file: " + path.string());
  std::vector<BBox> out;
  try {
    const Json j = Json::parse(in);
    if (!j.is_array()) throw ConfigError("seeds file must hold a JSON list: " + path.string());
    for (const auto& s : j) {
      if (s.at("image_id").get<std::string>() != image_id) continue;
      const auto& b = s.at("bbox");
      out.push_back({b.at(0).get<int>(), b.at(1).get<int>(), b.at(2).get<int>(), b.at(3).get<int>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("malformed seeds file " + path.string() + ": " + e.what());
  }
  return out;
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

void ensure_dir(const fs::path& dir) {
  if (dir.empty()) throw ConfigError("--out is required");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
}

void require_file(const fs::path& path, const char* what) {
  if (path.empty()) throw ConfigError(std::string("--") + what + " is required");
  if (!fs::is_regular_file(path)) throw IoError(std::string(what) + " not found: " + path.string());
}

Json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config: " + path.string());
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

void write_run_config(const RunConfig& rc) { write_text(rc.out / "run_config.json", to_json(rc).dump(1) + "\n"); }

shapegen::DatasetManifest load_dataset(const fs::path& data) {
  if (data.empty()) throw ConfigError("--data is required");
  const fs::path manifest = data / "manifest.json";
  require_file(manifest, "manifest");
  return shapegen::read_manifest(manifest);
}

int index_from_id(const std::string& id) {
  const auto pos = id.find_last_of('_');
  try {
    return std::stoi(id.substr(pos == std::string::npos ? 0 : pos + 1));
  } catch (const std::exception&) {
    throw Error("cannot derive image index from id " + id);
  }
}

/// Reads the PPM next to the manifest, regenerating it when rasters were not written.
count::RasterProvider raster_provider(const fs::path& data, const shapegen::DatasetManifest& m) {
  return [data, config = m.config, seed = m.seed](const shapegen::ImageRecord& rec) {
    const fs::path file = data / rec.file;
    if (fs::exists(file)) return read_ppm(file);
    return shapegen::generate_image(config, seed, index_from_id(rec.id)).raster;
  };
}

const shapegen::ImageRecord& find_record(const shapegen::DatasetManifest& m, const std::string& id) {
  for (const auto& r : m.images)
    if (r.id == id) return r;
  throw Error("image id not in manifest: " + id);
}

std::vector<BBox> gt_seed_boxes(const shapegen::ImageRecord& rec) {
  std::vector<BBox> seeds;
  for (int t = 0; t < static_cast<int>(rec.types.size()); ++t)
    for (const auto& inst : rec.instances)
      if (inst.type_index == t) {
        seeds.push_back(inst.bbox);
        break;
      }
  return seeds;
}

/// Image, optional record and id for count/sweep.
struct Target {
  RasterImage raster;
  std::optional<shapegen::ImageRecord> record;
  std::string id;
};

Target load_target(const RunConfig& rc) {
  Target t;
  if (!rc.image.empty()) {
    require_file(rc.image, "image");
    t.raster = read_ppm(rc.image);
    t.id = rc.image_id.empty() ? rc.image.stem().string() : rc.image_id;
    if (!rc.data.empty()) {
      const auto m = load_dataset(rc.data);
      t.record = find_record(m, t.id);
    }
    return t;
  }
  if (rc.image_id.empty()) throw ConfigError("give --image or --data with --image-id");
  const auto m = load_dataset(rc.data);
  t.record = find_record(m, rc.image_id);
  t.raster = raster_provider(rc.data, m)(*t.record);
  t.id = rc.image_id;
  return t;
}

count::PipelineConfig pipeline_config(const RunConfig& rc) {
  count::PipelineConfig pc;
  if (!rc.config.empty()) pc = count::eval_config_from_json(read_json_file(rc.config)).pipeline;
  pc.detector = rc.detector;
  pc.mode = rc.mode;
  if (rc.preference) pc.preference = rc.preference;
  return pc;
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

}  // namespace

int cmd_generate(const RunConfig& rc) {
  shapegen::GeneratorConfig config;
  if (!rc.config.empty()) {
    require_file(rc.config, "config");
    config = shapegen::read_config(rc.config);
  }
  if (rc.num_images) config.num_images = *rc.num_images;
  config.validate();
  ensure_dir(rc.out);
  const auto m = shapegen::generate_dataset(config, rc.seed, rc.out);
  std::cout << "generated " << m.images.size() << " images into " << rc.out.string() << "\n";
  return 0;
}

int cmd_train(const RunConfig& rc) {
  const auto m = load_dataset(rc.data);
  embed::TrainConfig tc;
  if (!rc.config.empty()) tc = embed::train_config_from_json(read_json_file(rc.config));
  tc.seed = rc.seed;
  if (rc.epochs) tc.epochs = *rc.epochs;
  if (tc.epochs < 0) throw ConfigError("--epochs must be >= 0");

  const auto records = m.split(shapegen::Split::Train);
  if (records.empty()) throw Error("train: empty train split in " + rc.data.string());
  ensure_dir(rc.out);

  const auto rasters = raster_provider(rc.data, m);
  std::vector<embed::TrainingImage> images(records.size());
  parallel_for(records.size(), [&](std::size_t i) {
    images[i] = embed::make_training_image(*records[i], rasters(*records[i]), tc.patch);
  });

  embed::ModelFile model;
  model.net = embed::EmbeddingNet::initialized(detect::feature_dim(tc.patch), tc.hidden, embed::kDescriptorDim, tc.seed);
  model.alpha = tc.alpha;
  model.train_config = tc;
  const auto result = embed::train(model.net, images, tc);

  embed::save_model(rc.out / "model.json", model);
  write_text(rc.out / "loss.csv", embed::loss_curve_csv(result.epoch_loss));
  write_run_config(rc);
  std::cout << "trained " << tc.epochs << " epochs on " << images.size() << " images";
  if (!result.epoch_loss.empty()) std::cout << "; final mean loss " << fmt_double(result.epoch_loss.back());
  std::cout << "\n";
  return 0;
}

int cmd_count(const RunConfig& rc) {
  require_file(rc.model, "model");
  const auto model = embed::load_model(rc.model);
  const Target t = load_target(rc);
  const auto pc = pipeline_config(rc);
  if (pc.detector == detect::Source::Oracle && !t.record)
    throw ConfigError("--detector oracle needs --data so annotations are available");

  std::vector<BBox> seeds;
  if (pc.mode == count::ClusterMode::Seeded) {
    if (!rc.seeds.empty()) {
      seeds = read_seeds(rc.seeds, t.id);
    } else if (rc.gt_seeds && t.record) {
      seeds = gt_seed_boxes(*t.record);
    } else {
      throw ConfigError("seeded mode needs --seeds <file> (or --gt-seeds with --data)");
    }
  }
  ensure_dir(rc.out);
  const auto report = count::run_pipeline(t.raster, t.record ? &*t.record : nullptr, model.net, pc, seeds, false, t.id);
  if (!report.unbound_seeds.empty())
    throw Error("seed " + std::to_string(report.unbound_seeds.front()) + " has no detection with IoU >= " +
                fmt_double(pc.seed_min_iou));

  write_text(rc.out / (t.id + "_report.json"), count::to_json(report).dump(1) + "\n");
  if (rc.overlay) write_ppm(rc.out / (t.id + "_overlay.ppm"), render_overlay(t.raster, report));
  write_run_config(rc);
  std::cout << t.id << ": " << report.clusters.size() << " counted cluster(s), total " << report.total << "\n";
  return 0;
}

int cmd_sweep(const RunConfig& rc) {
  require_file(rc.model, "model");
  const auto model = embed::load_model(rc.model);
  const Target t = load_target(rc);
  auto pc = pipeline_config(rc);
  if (pc.detector == detect::Source::Oracle && !t.record)
    throw ConfigError("--detector oracle needs --data so annotations are available");
  const auto described = count::describe_detections(t.raster, t.record ? &*t.record : nullptr, model.net, pc);

  std::vector<double> prefs = rc.preferences;
  if (prefs.empty()) {
    if (rc.grid < 1) throw ConfigError("sweep needs --preferences or --grid N");
    prefs = cluster::preference_grid(cluster::build_similarity(described.descriptors, 0.0), rc.grid);
  }
  ensure_dir(rc.out);
  Json results = Json::array();
  if (!described.detections.empty()) {
    const auto sweep = cluster::preference_sweep(described.descriptors, prefs, pc.ap);
    for (std::size_t k = 0; k < sweep.size(); ++k) {
      const auto kept = cluster::filter_clusters(sweep[k], cluster::Unsupervised{pc.min_count});
      results.push_back(cluster::to_json(sweep[k]));
      if (rc.overlay) {
        char name[64];
        std::snprintf(name, sizeof name, "_sweep_%03zu.ppm", k);
        write_ppm(rc.out / (t.id + name), render_overlay(t.raster, described.detections, sweep[k], kept));
      }
    }
  } else {
    for (std::size_t k = 0; k < prefs.size(); ++k) {
      results.push_back(Json{{"preference", prefs[k]}, {"converged", true}, {"iterations", 0},
                             {"exemplars", Json::array()}, {"assignment", Json::array()}});
      if (rc.overlay) {
        char name[64];
        std::snprintf(name, sizeof name, "_sweep_%03zu.ppm", k);
        write_ppm(rc.out / (t.id + name), t.raster);
      }
    }
  }
  write_text(rc.out / (t.id + "_sweep.json"), results.dump(1) + "\n");
  write_run_config(rc);
  std::cout << t.id << ": swept " << prefs.size() << " preference value(s)\n";
  return 0;
}

int cmd_eval(const RunConfig& rc) {
  require_file(rc.model, "model");
  const auto model = embed::load_model(rc.model);
  const auto m = load_dataset(rc.data);
  count::EvalConfig ec;
  if (!rc.config.empty()) ec = count::eval_config_from_json(read_json_file(rc.config));
  ec.pipeline.detector = rc.detector;
  ec.pipeline.mode = rc.mode;
  if (rc.preference) ec.pipeline.preference = rc.preference;
  if (rc.limit > 0) ec.limit = rc.limit;

  const auto records = m.split(shapegen::split_from_string(rc.split));
  if (records.empty()) throw Error("eval: split '" + rc.split + "' is empty in " + rc.data.string());
  ensure_dir(rc.out);
  const auto summary = count::eval_dataset(records, raster_provider(rc.data, m), model.net, ec);
  write_text(rc.out / "eval.csv", count::eval_csv(summary));
  write_text(rc.out / "summary.json", count::summary_json(summary, ec).dump(1) + "\n");
  std::string errors;
  for (const auto& e : summary.errors) errors += e + "\n";
  write_text(rc.out / "errors.txt", errors);
  write_run_config(rc);
  std::cout << "units " << summary.n_units << "  MAE " << fmt_double(summary.mae) << "  NMAE "
            << fmt_double(summary.nmae) << "  (" << summary.errors.size() << " image diagnostics)\n";
  return 0;
}

int run(int argc, const char* const* argv) {
  CLI::App app{"simco: similarity-based multi-class object counting on synthetic shapes"};
  app.require_subcommand(1);
  RunConfig rc;
  std::string detector = "oracle", mode = "seeded";
  std::optional<int> epochs, num_images;
  std::optional<double> preference;
  bool no_overlay = false;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", rc.config, "JSON config file");
    sub->add_option("--seed", rc.seed, "random seed (u64)");
    sub->add_option("--out", rc.out, "output directory")->required();
  };
  auto pipeline = [&](CLI::App* sub) {
    sub->add_option("--data", rc.data, "dataset directory holding manifest.json");
    sub->add_option("--model", rc.model, "model file")->required();
    sub->add_option("--detector", detector, "oracle|blob")->check(CLI::IsMember({"oracle", "blob"}));
    sub->add_option("--mode", mode, "seeded|unsupervised")->check(CLI::IsMember({"seeded", "unsupervised"}));
    sub->add_option("--preference", preference, "fixed preference for unsupervised clustering");
  };

  auto* gen = app.add_subcommand("generate", "generate a synthetic shape dataset");
  common(gen);
  gen->add_option("--num-images", num_images, "override config num_images");

  auto* train = app.add_subcommand("train", "train the embedding on the train split");
  common(train);
  train->add_option("--data", rc.data, "dataset directory")->required();
  train->add_option("--epochs", epochs, "override epochs");

  auto* cnt = app.add_subcommand("count", "count objects in one image");
  common(cnt);
  pipeline(cnt);
  cnt->add_option("--image", rc.image, "PPM image");
  cnt->add_option("--image-id", rc.image_id, "image id in the dataset manifest");
  cnt->add_option("--seeds", rc.seeds, "seeds file: JSON list of {image_id, bbox}");
  cnt->add_flag("--gt-seeds", rc.gt_seeds, "use one annotated instance per type as seeds");
  cnt->add_flag("--no-overlay", no_overlay, "skip the overlay image");

  auto* sweep = app.add_subcommand("sweep", "cluster one image over a grid of preferences");
  common(sweep);
  pipeline(sweep);
  sweep->add_option("--image", rc.image, "PPM image");
  sweep->add_option("--image-id", rc.image_id, "image id in the dataset manifest");
  sweep->add_option("--preferences", rc.preferences, "comma-separated preference values")->delimiter(',');
  sweep->add_option("--grid", rc.grid, "number of evenly spaced preferences over the similarity range");
  sweep->add_flag("--no-overlay", no_overlay, "skip the overlay images");

  auto* ev = app.add_subcommand("eval", "evaluate counting on a dataset split");
  common(ev);
  pipeline(ev);
  ev->get_option("--data")->required();
  ev->add_option("--split", rc.split, "train|val|test")->check(CLI::IsMember({"train", "val", "test"}));
  ev->add_option("--limit", rc.limit, "evaluate at most N images");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    rc.command = app.get_subcommands().front()->get_name();
    rc.detector = detect::source_from_string(detector);
    rc.mode = count::mode_from_string(mode);
    rc.epochs = epochs;
    rc.num_images = num_images;
    rc.preference = preference;
    rc.overlay = !no_overlay;
    if (rc.command == "generate") return cmd_generate(rc);
    if (rc.command == "train") return cmd_train(rc);
    if (rc.command == "count") return cmd_count(rc);
    if (rc.command == "sweep") return cmd_sweep(rc);
    return cmd_eval(rc);
  } catch (const std::exception& e) {
    std::cerr << "simco: error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace simco::cli
