#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "simco/common.hpp"
#include "simco/image.hpp"
#include "simco/rng.hpp"

namespace simco::shapegen {

enum class ShapeClass { Lined, Triangle, Rectangle, Diamond, Pentagon, Hexagon, Ellipse };

inline constexpr std::array<ShapeClass, 7> kAllShapes = {
    ShapeClass::Lined,    ShapeClass::Triangle, ShapeClass::Rectangle, ShapeClass::Diamond,
    ShapeClass::Pentagon, ShapeClass::Hexagon,  ShapeClass::Ellipse};

std::string_view to_string(ShapeClass shape);
ShapeClass shape_from_string(std::string_view name);

inline constexpr double kMinScale = 0.05;
inline constexpr double kMaxScale = 0.20;
inline constexpr double kScaleStep = 0.0125;
inline constexpr int kScaleSteps = 13;

/// Scale grid value `step` in [0, kScaleSteps).
double scale_from_step(int step);

/// Shape class plus appearance. Two instances share a type iff every field
/// is equal; color and scale are quantized so this is meaningful.
struct ObjectType {
  ShapeClass shape = ShapeClass::Rectangle;
  Rgb color;
  double scale = kMinScale;  // fraction of min(width, height)
  double rotation = 0.0;     // radians in [0, 2*pi)

  friend bool operator==(const ObjectType&, const ObjectType&) = default;
};

/// Strict weak order usable as a map key.
bool type_less(const ObjectType& a, const ObjectType& b);

struct Point {
  double x = 0.0;
  double y = 0.0;
};

struct ShapeInstance {
  int type_index = 0;  // into ImageRecord::types
  Point center;
  BBox bbox;

  friend bool operator==(const ShapeInstance& a, const ShapeInstance& b) {
    return a.type_index == b.type_index && a.center.x == b.center.x && a.center.y == b.center.y &&
           a.bbox == b.bbox;
  }
};

struct AlignedGrid {
  int rows = 1;
  int cols = 1;
  double jitter = 0.0;  // fraction of cell size, in [0, 0.5)
};

struct PoissonProcess {
  double expected_count = 1.0;
  double min_center_separation = 0.0;  // pixels
};

using LayoutSpec = std::variant<AlignedGrid, PoissonProcess>;

/// Rectangular sub-area of the canvas in which centers are placed.
struct Region {
  double x0 = 0.0;
  double y0 = 0.0;
  double x1 = 0.0;
  double y1 = 0.0;
};

struct BackgroundSpec {
  Rgb base{128, 128, 128};
  double noise_amplitude = 12.0;  // in 8-bit units, at most 15
  int noise_cell = 32;            // value-noise lattice spacing, pixels
  std::uint64_t noise_seed = 0;
};

enum class Split { Train, Val, Test };
std::string_view to_string(Split split);
Split split_from_string(std::string_view name);

struct ImageRecord {
  std::string id;
  std::string file;
  int width = 0;
  int height = 0;
  Split split = Split::Train;
  BackgroundSpec background;  // not serialized; rasters are regenerated from (config, seed, index)
  std::vector<ObjectType> types;
  std::vector<ShapeInstance> instances;

  /// Number of annotated instances of types[type_index].
  int instance_count(int type_index) const;
};

struct GeneratorConfig {
  int num_images = 2000;
  int width = 512;
  int height = 512;
  int min_types = 1;
  int max_types = 3;
  double grid_probability = 0.5;
  int grid_min_rows = 1;
  int grid_max_rows = 3;
  int grid_min_cols = 2;
  int grid_max_cols = 4;
  double grid_max_jitter = 0.15;
  double poisson_min_expected = 3.0;
  double poisson_max_expected = 8.0;
  double separation_factor = 1.2;  // times the largest shape diameter in the image
  double noise_amplitude = 12.0;
  int noise_cell = 32;
  double min_type_color_distance = 40.0;
  double min_background_color_distance = 60.0;
  double train_fraction = 0.8;
  double val_fraction = 0.1;
  bool write_rasters = true;

  /// Throws ConfigError on invalid values.
  void validate() const;
  friend bool operator==(const GeneratorConfig&, const GeneratorConfig&) = default;
};

struct DatasetManifest {
  std::uint64_t seed = 0;
  GeneratorConfig config;
  std::vector<ImageRecord> images;

  std::vector<const ImageRecord*> split(Split which) const;
};

/// Convex outline of a shape relative to its center (ellipses are flattened
/// to a fine polygon only for extent computation; rasterization is exact).
struct ShapeGeometry {
  ShapeClass shape;
  std::vector<Point> polygon;  // counter-clockwise; empty for ellipses
  double semi_major = 0.0;     // ellipses only
  double semi_minor = 0.0;
  double rotation = 0.0;

  bool contains(double dx, double dy) const;
  /// Half extents of the axis-aligned bounding box.
  Point half_extent() const;
  /// Diameter of the circumscribing circle about the center.
  double diameter() const;
};

/// Shape size in pixels: scale * min(width, height).
double shape_size(const ObjectType& type, int width, int height);
ShapeGeometry make_geometry(const ObjectType& type, int width, int height);
/// Per-type ellipse axis ratio in [0.6, 1.0], a deterministic function of the type.
double ellipse_axis_ratio(const ObjectType& type);
/// Bar length / width for Lined shapes.
inline constexpr double kLinedAspect = 8.0;

/// Integer box covering the analytic extent of the shape at `center`.
BBox analytic_bbox(const ShapeGeometry& geom, Point center);

/// Samples between config.min_types and config.max_types distinct types.
/// Throws Error after 100 failed resamples.
std::vector<ObjectType> sample_types(Rng& rng, const GeneratorConfig& config, Rgb background);

/// Places instances of one type. Instances never leave the canvas; centers keep
/// at least the layout's separation (Poisson) from each other and from `occupied`.
std::vector<ShapeInstance> layout_instances(Rng& rng, const ObjectType& type, int type_index,
                                            const LayoutSpec& layout, int width, int height,
                                            std::optional<Region> region = std::nullopt,
                                            std::span<const ShapeInstance> occupied = {});

inline constexpr int kLayoutAttemptBudget = 1000;

/// Background only.
RasterImage render_background(const BackgroundSpec& background, int width, int height);

/// Draws the record and rewrites each instance bbox to its tight rasterized extent.
RasterImage rasterize(ImageRecord& record);

struct GeneratedImage {
  ImageRecord record;
  RasterImage raster;
};

/// Image `index` of the dataset (seed, config); independent of any other index.
GeneratedImage generate_image(const GeneratorConfig& config, std::uint64_t seed, int index);

Split split_for_index(const GeneratorConfig& config, int index);

/// Writes `manifest.json` and (if config.write_rasters) one PPM per image into `out_dir`.
DatasetManifest generate_dataset(const GeneratorConfig& config, std::uint64_t seed,
                                 const std::filesystem::path& out_dir);

/// Builds the manifest in memory without touching disk.
DatasetManifest build_manifest(const GeneratorConfig& config, std::uint64_t seed);

}  // namespace simco::shapegen
