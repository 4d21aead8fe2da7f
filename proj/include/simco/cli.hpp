#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "simco/common.hpp"
#include "simco/count.hpp"

namespace simco::cli {

/// Everything a command needs, as parsed from the command line.
struct RunConfig {
  std::string command;
  std::filesystem::path config;  // command-specific JSON config, optional
  std::filesystem::path data;    // dataset directory (manifest.json + rasters)
  std::filesystem::path model;
  std::filesystem::path out;
  std::filesystem::path image;   // standalone PPM
  std::filesystem::path seeds;
  std::string image_id;
  std::string split = "test";
  std::uint64_t seed = 0;
  std::optional<int> epochs;
  std::optional<int> num_images;
  std::optional<double> preference;
  std::vector<double> preferences;
  int grid = 0;
  int limit = 0;
  detect::Source detector = detect::Source::Oracle;
  count::ClusterMode mode = count::ClusterMode::Seeded;
  bool gt_seeds = false;
  bool overlay = true;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

nlohmann::ordered_json to_json(const RunConfig& config);
RunConfig run_config_from_json(const nlohmann::ordered_json& j);

/// 12 high-contrast colors, cycled by cluster index.
extern const std::array<Rgb, 12> kPalette;

/// Boxes of every cluster in palette order; counted clusters get a thicker stroke.
RasterImage render_overlay(const RasterImage& image, const count::CountReport& report);
RasterImage render_overlay(const RasterImage& image, std::span<const detect::Detection> detections,
                           const cluster::ClusterResult& result, std::span<const int> kept);

/// Seeds file: JSON list of {image_id, bbox:[x0,y0,x1,y1]}; returns boxes for `image_id`.
std::vector<BBox> read_seeds(const std::filesystem::path& path, const std::string& image_id);

int cmd_generate(const RunConfig& rc);
int cmd_train(const RunConfig& rc);
int cmd_count(const RunConfig& rc);
int cmd_sweep(const RunConfig& rc);
int cmd_eval(const RunConfig& rc);

/// Parses argv and dispatches. Returns the process exit status.
int run(int argc, const char* const* argv);

}  // namespace simco::cli
