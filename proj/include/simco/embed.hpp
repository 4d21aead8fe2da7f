#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "simco/detect.hpp"
#include "simco/shapegen.hpp"

namespace simco::embed {

inline constexpr int kDescriptorDim = 64;
inline constexpr int kDefaultHidden = 128;
/// Pre-normalization vectors shorter than this are nudged along the first axis.
inline constexpr double kDegenerateNorm = 1e-12;

/// Unit-norm embedding of one detection.
struct Descriptor {
  std::vector<double> values;

  double norm() const;
  friend bool operator==(const Descriptor&, const Descriptor&) = default;
};

double distance(const Descriptor& a, const Descriptor& b);

/// input -> hidden (ReLU) -> output -> L2 normalization.
///
/// All parameters live in one contiguous buffer laid out as
/// [W1 (hidden x input, row-major), b1, W2 (output x hidden, row-major), b2]
/// so optimizers and gradient checks can treat them as a flat vector.
class EmbeddingNet {
 public:
  EmbeddingNet() = default;
  EmbeddingNet(int input_dim, int hidden_dim, int output_dim = kDescriptorDim);

  /// Glorot-uniform weights in +-sqrt(6 / (fan_in + fan_out)), zero biases.
  static EmbeddingNet initialized(int input_dim, int hidden_dim, int output_dim, std::uint64_t seed);

  int input_dim() const { return input_; }
  int hidden_dim() const { return hidden_; }
  int output_dim() const { return output_; }

  std::span<double> params() { return params_; }
  std::span<const double> params() const { return params_; }

  std::span<double> w1() { return {params_.data(), w1_size()}; }
  std::span<double> b1() { return {params_.data() + w1_size(), std::size_t(hidden_)}; }
  std::span<double> w2() { return {params_.data() + w1_size() + hidden_, w2_size()}; }
  std::span<double> b2() { return {params_.data() + w1_size() + hidden_ + w2_size(), std::size_t(output_)}; }
  std::span<const double> w1() const { return {params_.data(), w1_size()}; }
  std::span<const double> b1() const { return {params_.data() + w1_size(), std::size_t(hidden_)}; }
  std::span<const double> w2() const { return {params_.data() + w1_size() + hidden_, w2_size()}; }
  std::span<const double> b2() const {
    return {params_.data() + w1_size() + hidden_ + w2_size(), std::size_t(output_)};
  }

  Descriptor forward(std::span<const double> input) const;
  Descriptor forward(const detect::FeatureVector& feature) const { return forward(feature.values); }

  friend bool operator==(const EmbeddingNet&, const EmbeddingNet&) = default;

 private:
  std::size_t w1_size() const { return std::size_t(hidden_) * input_; }
  std::size_t w2_size() const { return std::size_t(output_) * hidden_; }

  int input_ = 0;
  int hidden_ = 0;
  int output_ = 0;
  std::vector<double> params_;
};

struct TripletLoss {
  double value = 0.0;          // raw sum of hinge terms
  std::size_t triplets = 0;    // enumerated (a, p, n) combinations
  std::size_t active = 0;      // hinge strictly positive
  bool degenerate = false;     // no valid triplet in the batch
};

/// Batch-All triplet loss: sum over every anchor, positive (same label, distinct
/// detection) and negative (different label) of max(|a-p| - |a-n| + alpha, 0),
/// with non-squared Euclidean distances.
TripletLoss triplet_loss(std::span<const Descriptor> descriptors, std::span<const int> labels, double alpha);

/// Same as triplet_loss, additionally writing d(loss)/d(descriptor) into `grads`
/// (resized to match). The hinge subgradient at its kink is 0.
TripletLoss triplet_loss_with_grad(std::span<const Descriptor> descriptors, std::span<const int> labels,
                                   double alpha, std::vector<std::vector<double>>& grads);

struct PairSets {
  std::vector<std::pair<int, int>> positives;
  std::vector<std::pair<int, int>> negatives;
};

/// Ordered pairs: positives share a label (a != p); negatives differ.
PairSets mine_pairs(std::span<const int> labels);

/// Dense integer labels; equal ObjectTypes get equal labels (first-seen order).
std::vector<int> type_labels(std::span<const shapegen::ObjectType> types);

struct TripletBatch {
  std::vector<const detect::FeatureVector*> features;
  std::vector<int> labels;
  double alpha = 0.2;
};

struct LossGradient {
  TripletLoss loss;
  std::vector<double> grad;  // same layout as EmbeddingNet::params()
};

/// Exact gradient of triplet_loss(forward(features), labels) w.r.t. all parameters.
LossGradient loss_gradient(const EmbeddingNet& net, const TripletBatch& batch);

/// Oracle detections with their features and type labels, grouped per image.
struct TrainingImage {
  std::string id;
  std::vector<detect::FeatureVector> features;
  std::vector<shapegen::ObjectType> types;
};

struct TrainConfig {
  double lr = 0.01;
  double momentum = 0.9;
  int epochs = 30;
  int batch_images = 4;
  double alpha = 0.2;
  std::uint64_t seed = 1;
  int hidden = kDefaultHidden;
  int patch = detect::kDefaultPatch;
};

nlohmann::ordered_json to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::ordered_json& j);

struct TrainResult {
  std::vector<double> epoch_loss;  // mean raw batch loss per epoch
};

/// SGD with momentum over batches of `batch_images` shuffled images. The step
/// uses the raw-sum gradient divided by the active-triplet count (1 if none).
TrainResult train(EmbeddingNet& net, std::span<const TrainingImage> images, const TrainConfig& config);

/// Features of the oracle detections of one image.
TrainingImage make_training_image(const shapegen::ImageRecord& record, const RasterImage& raster, int patch);

/// Versioned JSON model file: {version, dims, weights, biases, alpha, train_config}.
struct ModelFile {
  EmbeddingNet net;
  double alpha = 0.2;
  TrainConfig train_config;
};

inline constexpr int kModelVersion = 1;

nlohmann::ordered_json to_json(const ModelFile& model);
ModelFile model_from_json(const nlohmann::ordered_json& j);
std::string serialize(const ModelFile& model);
void save_model(const std::filesystem::path& path, const ModelFile& model);
ModelFile load_model(const std::filesystem::path& path);

/// CSV "epoch,mean_loss" with 1-based epochs.
std::string loss_curve_csv(std::span<const double> epoch_loss);

}  // namespace simco::embed
