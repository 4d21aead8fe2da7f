#pragma once

#include <span>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "simco/common.hpp"
#include "simco/embed.hpp"

namespace simco::cluster {

/// Dense n x n similarity: s(i,k) = -|d_i - d_k|^2 off the diagonal, the
/// preference on the diagonal.
class SimilarityMatrix {
 public:
  SimilarityMatrix() = default;
  SimilarityMatrix(int n, double preference);

  int size() const { return n_; }
  double operator()(int i, int k) const { return s_[std::size_t(i) * n_ + k]; }
  double& operator()(int i, int k) { return s_[std::size_t(i) * n_ + k]; }
  double preference() const { return preference_; }
  void set_preference(double p);

  double min_offdiagonal() const;
  double max_offdiagonal() const;
  double median_offdiagonal() const;

 private:
  int n_ = 0;
  double preference_ = 0.0;
  std::vector<double> s_;
};

SimilarityMatrix build_similarity(std::span<const embed::Descriptor> descriptors, double preference);

struct APConfig {
  double damping = 0.5;
  int max_iter = 200;
  int convergence_iter = 15;

  void validate() const;
};

struct ClusterResult {
  double preference = 0.0;
  std::vector<int> exemplars;   // ascending point indices
  std::vector<int> assignment;  // exemplar index of each point
  bool converged = false;
  int iterations = 0;

  int cluster_count() const { return static_cast<int>(exemplars.size()); }
  /// Position of point i's exemplar in `exemplars`.
  int cluster_of(int i) const;
  std::vector<int> members(int cluster) const;
};

/// Throws Error if the partition invariants do not hold.
void check_partition(const ClusterResult& result, int n);

/// Responsibility/availability message passing with damping. Exact ties are
/// resolved toward lower indices; points go to the most similar exemplar.
ClusterResult affinity_propagation(const SimilarityMatrix& s, const APConfig& config = {});

/// sum over non-exemplars of s(i, exemplar(i)) plus preference * #exemplars.
double exemplar_objective(const SimilarityMatrix& s, std::span<const int> exemplars);

std::vector<ClusterResult> preference_sweep(std::span<const embed::Descriptor> descriptors,
                                            std::span<const double> preferences, const APConfig& config = {});

inline constexpr int kPreferenceGridSteps = 64;

/// `steps` evenly spaced values from the smallest to the largest off-diagonal similarity.
std::vector<double> preference_grid(const SimilarityMatrix& s, int steps = kPreferenceGridSteps);

class SeedsNotSeparable : public Error {
 public:
  SeedsNotSeparable(std::string msg, ClusterResult last) : Error(std::move(msg)), last_result(std::move(last)) {}
  ClusterResult last_result;  // clustering at the top of the grid
};

struct SearchResult {
  double preference = 0.0;
  ClusterResult result;
};

/// Scans the preference grid upward and returns the first clustering in which
/// every seed lies in a different cluster. Throws SeedsNotSeparable otherwise.
SearchResult preference_search(std::span<const embed::Descriptor> descriptors, std::span<const int> seeds,
                               const APConfig& config = {}, int steps = kPreferenceGridSteps);

bool seeds_separated(const ClusterResult& result, std::span<const int> seeds);

struct Seeded {
  std::vector<int> seeds;
};
struct Unsupervised {
  int min_count = 2;
};
using FilterMode = std::variant<Seeded, Unsupervised>;

/// Indices (into result.exemplars) of the clusters that are counted.
std::vector<int> filter_clusters(const ClusterResult& result, const FilterMode& mode);

nlohmann::ordered_json to_json(const ClusterResult& result);

}  // namespace simco::cluster
