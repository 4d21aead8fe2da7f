#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "simco/cluster.hpp"
#include "simco/detect.hpp"
#include "simco/embed.hpp"
#include "simco/shapegen.hpp"

namespace simco::count {

enum class ClusterMode { Seeded, Unsupervised };
std::string_view to_string(ClusterMode mode);
ClusterMode mode_from_string(std::string_view name);

struct PipelineConfig {
  detect::Source detector = detect::Source::Oracle;
  ClusterMode mode = ClusterMode::Seeded;
  detect::BlobParams blob;
  cluster::APConfig ap;
  int grid_steps = cluster::kPreferenceGridSteps;
  int min_count = 2;
  /// Unsupervised preference; the median off-diagonal similarity when unset.
  std::optional<double> preference;
  double seed_min_iou = 0.3;
};

struct ClusterCount {
  int exemplar = 0;
  std::vector<int> members;  // detection indices
  int count = 0;
};

struct CountReport {
  std::string image_id;
  ClusterMode mode = ClusterMode::Seeded;
  double preference = 0.0;
  std::vector<detect::Detection> detections;
  std::optional<cluster::ClusterResult> clustering;
  std::vector<int> seed_detections;  // bound seeds, in input order, duplicates removed
  std::vector<int> unbound_seeds;    // input seed positions with no detection at IoU >= seed_min_iou
  std::vector<ClusterCount> clusters;
  int total = 0;
  /// Set when the seeds could not be separated and the top-of-grid clustering was used.
  bool seeds_not_separable = false;
};

/// Index of the detection with highest IoU against `box` (lowest index on ties),
/// or -1 if that IoU is below min_iou.
int bind_seed(std::span<const detect::Detection> detections, const BBox& box, double min_iou);

struct Described {
  std::vector<detect::Detection> detections;
  std::vector<embed::Descriptor> descriptors;
};

/// Detections of the configured detector and their descriptors.
Described describe_detections(const RasterImage& image, const shapegen::ImageRecord* record,
                              const embed::EmbeddingNet& net, const PipelineConfig& config);

/// detect -> extract_features -> forward -> cluster -> filter -> count.
/// `record` is required for the oracle detector. Seed boxes are used in Seeded mode.
/// Throws cluster::SeedsNotSeparable unless `fallback_on_inseparable` is set.
CountReport run_pipeline(const RasterImage& image, const shapegen::ImageRecord* record,
                         const embed::EmbeddingNet& net, const PipelineConfig& config,
                         std::span<const BBox> seed_boxes = {}, bool fallback_on_inseparable = false,
                         std::string image_id = {});

nlohmann::ordered_json to_json(const CountReport& report);

/// (1/n) sum |pred - gt|.
double mae(std::span<const double> preds, std::span<const double> gts);
/// sum |pred - gt| / sum gt.
double nmae(std::span<const double> preds, std::span<const double> gts);
/// mean over units of |pred - gt| / gt (alternative normalization; units with gt = 0 are rejected).
double nmae_mean_relative(std::span<const double> preds, std::span<const double> gts);

struct TypeCount {
  int type_index = 0;
  int pred = 0;
  int gt = 0;
};

struct GtMatch {
  std::vector<TypeCount> per_type;   // every type of the record, in type order
  int unattributed = 0;              // kept-cluster members whose cluster matched no GT instance
};

/// Greedy highest-IoU one-to-one matching of detections to instances at
/// IoU >= min_iou. Returns the instance index per detection, -1 if unmatched.
std::vector<int> match_detections(std::span<const detect::Detection> detections,
                                  const shapegen::ImageRecord& record, double min_iou = 0.5);

/// Each kept cluster takes the majority type of its matched members (lowest
/// type index on ties) and contributes its count to that type.
GtMatch match_clusters_to_gt(const CountReport& report, const shapegen::ImageRecord& record);

enum class NmaeKind { SumNormalized, MeanRelative };

struct EvalConfig {
  PipelineConfig pipeline;
  NmaeKind nmae_kind = NmaeKind::SumNormalized;
  int limit = 0;  // 0 = all images of the split
};

struct EvalRow {
  std::string image_id;
  int type_id = 0;
  int pred = 0;
  int gt = 0;
  int abs_err = 0;
};

struct MetricSummary {
  double mae = 0.0;
  double nmae = 0.0;
  std::size_t n_units = 0;
  std::vector<EvalRow> rows;
  std::vector<std::string> errors;  // per-image diagnostics; the run continues
};

using RasterProvider = std::function<RasterImage(const shapegen::ImageRecord&)>;

/// Runs the pipeline on every record; evaluation units are (image, targeted type)
/// where Seeded targets every type through one seed per type (its first instance)
/// and Unsupervised targets every type present.
MetricSummary eval_dataset(std::span<const shapegen::ImageRecord* const> records, const RasterProvider& rasters,
                           const embed::EmbeddingNet& net, const EvalConfig& config);

std::string eval_csv(const MetricSummary& summary);
nlohmann::ordered_json to_json(const EvalConfig& config);
/// Missing keys keep their defaults; unknown keys are rejected.
EvalConfig eval_config_from_json(const nlohmann::ordered_json& j);
nlohmann::ordered_json summary_json(const MetricSummary& summary, const EvalConfig& config);
/// FNV-1a 64-bit hex digest of the config's JSON dump.
std::string config_hash(const EvalConfig& config);

/// Published Cells and RepTile results of the full detector-based system.
/// Context only; never asserted against.
namespace reference {
inline constexpr double kCellsMae = 12.0;
inline constexpr double kCellsNmae = 0.07;
inline constexpr double kRepTileMae = 8.66;
inline constexpr double kRepTileNmae = 0.086;
}  // namespace reference

}  // namespace simco::count
