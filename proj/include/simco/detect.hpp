#pragma once

#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "simco/common.hpp"
#include "simco/image.hpp"
#include "simco/shapegen.hpp"

namespace simco::detect {

enum class Source { Oracle, Blob };
std::string_view to_string(Source source);
Source source_from_string(std::string_view name);

struct Detection {
  BBox bbox;
  double score = 1.0;
  Source source = Source::Oracle;
};

/// One detection per annotated instance, in annotation order.
std::vector<Detection> detect_oracle(const shapegen::ImageRecord& record);

struct BlobParams {
  double threshold_quantile = 0.99;
  int min_area_px = 30;
};

/// Color-distance threshold separating foreground from the estimated background.
/// Background distances are those within 4 * median + 4 of the background color;
/// the threshold is max(2 * quantile(background distances), 8).
double foreground_threshold(const RasterImage& image, Rgb background, double quantile);

/// Per-channel median color.
Rgb estimate_background(const RasterImage& image);

/// 8-connected foreground components with area >= min_area_px, in raster-scan
/// order of their first pixel. Touching shapes of similar color merge into one.
std::vector<Detection> detect_blobs(const RasterImage& image, const BlobParams& params = {});

inline constexpr int kDefaultPatch = 16;

/// Region feature: P*P*3 resized patch values in [0,1] (row-major, RGB interleaved)
/// followed by the normalized log box-area fraction.
struct FeatureVector {
  std::vector<double> values;
  int patch = kDefaultPatch;
};

constexpr int feature_dim(int patch) { return patch * patch * 3 + 1; }

/// log(box area / image area) mapped linearly from [log(0.05^2/8), log(0.2^2*2)] to [0,1], clamped.
double normalized_log_scale(const BBox& box, int image_width, int image_height);

FeatureVector extract_features(const RasterImage& image, const Detection& det, int patch = kDefaultPatch);

nlohmann::ordered_json to_json(const Detection& det, std::string_view image_id);
/// Serializes detections as JSON lines: {image_id, bbox, score, source}.
std::string to_json_lines(const std::vector<Detection>& dets, std::string_view image_id);

}  // namespace simco::detect
