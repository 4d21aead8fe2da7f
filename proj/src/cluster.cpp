#include "simco/cluster.hpp"

#include <cmath>
#include <limits>

namespace simco::cluster {

SimilarityMatrix::SimilarityMatrix(int n, double preference)
    : n_(n), preference_(preference), s_(std::size_t(n) * n, 0.0) {
  for (int i = 0; i < n; ++i) (*this)(i, i) = preference;
}

void SimilarityMatrix::set_preference(double p) {
  preference_ = p;
  for (int i = 0; i < n_; ++i) (*this)(i, i) = p;
}

double SimilarityMatrix::min_offdiagonal() const {
  double m = std::numeric_limits<double>::infinity();
  for (int i = 0; i < n_; ++i)
    for (int k = 0; k < n_; ++k)
      if (i != k) m = std::min(m, (*this)(i, k));
  return n_ > 1 ? m : 0.0;
}

double SimilarityMatrix::max_offdiagonal() const {
  double m = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < n_; ++i)
    for (int k = 0; k < n_; ++k)
      if (i != k) m = std::max(m, (*this)(i, k));
  return n_ > 1 ? m : 0.0;
}

double SimilarityMatrix::median_offdiagonal() const {
  if (n_ < 2) return 0.0;
  std::vector<double> v;
  v.reserve(std::size_t(n_) * (n_ - 1));
  for (int i = 0; i < n_; ++i)
    for (int k = 0; k < n_; ++k)
      if (i != k) v.push_back((*this)(i, k));
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size();
  return m % 2 ? v[m / 2] : 0.5 * (v[m / 2 - 1] + v[m / 2]);
}

SimilarityMatrix build_similarity(std::span<const embed::Descriptor> d, double preference) {
  const int n = static_cast<int>(d.size());
  SimilarityMatrix s(n, preference);
  for (int i = 0; i < n; ++i) {
    for (int k = i + 1; k < n; ++k) {
      double sq = 0.0;
      for (std::size_t c = 0; c < d[i].values.size(); ++c) {
        const double diff = d[i].values[c] - d[k].values[c];
        sq += diff * diff;
      }
      s(i, k) = s(k, i) = -sq;
    }
  }
  return s;
}

void APConfig::validate() const {
  if (!(damping >= 0.5 && damping < 1.0)) throw ConfigError("AP damping must be in [0.5, 1)");
  if (max_iter < 1 || convergence_iter < 1) throw ConfigError("AP iteration limits must be >= 1");
}

int ClusterResult::cluster_of(int i) const {
  const auto it = std::lower_bound(exemplars.begin(), exemplars.end(), assignment.at(i));
  return static_cast<int>(it - exemplars.begin());
}

std::vector<int> ClusterResult::members(int cluster) const {
  std::vector<int> out;
  const int e = exemplars.at(cluster);
  for (int i = 0; i < static_cast<int>(assignment.size()); ++i)
    if (assignment[i] == e) out.push_back(i);
  return out;
}

void check_partition(const ClusterResult& r, int n) {
  if (static_cast<int>(r.assignment.size()) != n) throw Error("partition: assignment size mismatch");
  if (n > 0 && r.exemplars.empty()) throw Error("partition: no exemplars");
  if (!std::is_sorted(r.exemplars.begin(), r.exemplars.end()) ||
      std::adjacent_find(r.exemplars.begin(), r.exemplars.end()) != r.exemplars.end())
    throw Error("partition: exemplars must be strictly ascending");
  for (int e : r.exemplars)
    if (e < 0 || e >= n || r.assignment[e] != e) throw Error("partition: exemplar not assigned to itself");
  for (int a : r.assignment)
    if (!std::binary_search(r.exemplars.begin(), r.exemplars.end(), a))
      throw Error("partition: assignment target is not an exemplar");
}

ClusterResult affinity_propagation(const SimilarityMatrix& sim, const APConfig& config) {
  config.validate();
  const int n = sim.size();
  ClusterResult res;
  res.preference = sim.preference();
  if (n == 0) {
    res.converged = true;
    return res;
  }
  if (n == 1) {
    res.exemplars = {0};
    res.assignment = {0};
    res.converged = true;
    return res;
  }

  // tie-breaking bias favouring low column indices, far below any real difference
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < n; ++k) {
      lo = std::min(lo, sim(i, k));
      hi = std::max(hi, sim(i, k));
    }
  const double eps = 1e-10 * (1.0 + (hi - lo));
  std::vector<double> s(std::size_t(n) * n);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < n; ++k) s[std::size_t(i) * n + k] = sim(i, k) + eps * double(n - 1 - k) / n;

  const double lambda = config.damping;
  std::vector<double> r(std::size_t(n) * n, 0.0), a(std::size_t(n) * n, 0.0);
  std::vector<double> colsum(n);
  std::vector<char> is_ex(n, 0), prev_ex(n, 0);
  int stable = 0;
  int it = 0;
  bool converged = false;

  for (it = 1; it <= config.max_iter; ++it) {
    // responsibilities: r(i,k) = s(i,k) - max_{k' != k} (a(i,k') + s(i,k'))
    for (int i = 0; i < n; ++i) {
      const double* si = &s[std::size_t(i) * n];
      const double* ai = &a[std::size_t(i) * n];
      double* ri = &r[std::size_t(i) * n];
      double max1 = -std::numeric_limits<double>::infinity(), max2 = max1;
      int arg1 = -1;
      for (int k = 0; k < n; ++k) {
        const double v = ai[k] + si[k];
        if (v > max1) {
          max2 = max1;
          max1 = v;
          arg1 = k;
        } else if (v > max2) {
          max2 = v;
        }
      }
      for (int k = 0; k < n; ++k) {
        const double fresh = si[k] - (k == arg1 ? max2 : max1);
        ri[k] = lambda * ri[k] + (1.0 - lambda) * fresh;
      }
    }
    // availabilities
    std::fill(colsum.begin(), colsum.end(), 0.0);
    for (int i = 0; i < n; ++i)
      for (int k = 0; k < n; ++k) {
        const double v = r[std::size_t(i) * n + k];
        colsum[k] += (i == k) ? v : std::max(0.0, v);
      }
    for (int i = 0; i < n; ++i) {
      for (int k = 0; k < n; ++k) {
        const double rik = r[std::size_t(i) * n + k];
        double fresh;
        if (i == k) {
          fresh = colsum[k] - rik;  // sum over i' != k of max(0, r(i',k))
        } else {
          fresh = std::min(0.0, colsum[k] - std::max(0.0, rik));
        }
        double& aik = a[std::size_t(i) * n + k];
        aik = lambda * aik + (1.0 - lambda) * fresh;
      }
    }

    bool same = true;
    for (int k = 0; k < n; ++k) {
      is_ex[k] = (r[std::size_t(k) * n + k] + a[std::size_t(k) * n + k]) > 0.0;
      same = same && is_ex[k] == prev_ex[k];
    }
    stable = (it > 1 && same) ? stable + 1 : 0;
    prev_ex = is_ex;
    if (stable >= config.convergence_iter) {
      converged = true;
      break;
    }
  }
  res.converged = converged;
  res.iterations = std::min(it, config.max_iter);

  for (int k = 0; k < n; ++k)
    if (is_ex[k]) res.exemplars.push_back(k);
  if (res.exemplars.empty()) {
    int best = 0;
    double best_v = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < n; ++k) {
      const double v = r[std::size_t(k) * n + k] + a[std::size_t(k) * n + k];
      if (v > best_v) {
        best_v = v;
        best = k;
      }
    }
    res.exemplars.push_back(best);
  }

  res.assignment.assign(n, -1);
  for (int i = 0; i < n; ++i) {
    if (std::binary_search(res.exemplars.begin(), res.exemplars.end(), i)) {
      res.assignment[i] = i;
      continue;
    }
    int best = res.exemplars.front();
    for (int e : res.exemplars)
      if (sim(i, e) > sim(i, best)) best = e;
    res.assignment[i] = best;
  }
  return res;
}

double exemplar_objective(const SimilarityMatrix& s, std::span<const int> exemplars) {
  double total = s.preference() * static_cast<double>(exemplars.size());
  for (int i = 0; i < s.size(); ++i) {
    if (std::find(exemplars.begin(), exemplars.end(), i) != exemplars.end()) continue;
    double best = -std::numeric_limits<double>::infinity();
    for (int e : exemplars) best = std::max(best, s(i, e));
    total += best;
  }
  return total;
}

std::vector<ClusterResult> preference_sweep(std::span<const embed::Descriptor> descriptors,
                                            std::span<const double> preferences, const APConfig& config) {
  if (preferences.empty()) throw Error("preference_sweep: empty preference list");
  SimilarityMatrix s = build_similarity(descriptors, preferences.front());
  std::vector<ClusterResult> out;
  out.reserve(preferences.size());
  for (double p : preferences) {
    s.set_preference(p);
    out.push_back(affinity_propagation(s, config));
  }
  return out;
}

std::vector<double> preference_grid(const SimilarityMatrix& s, int steps) {
  if (steps < 1) throw Error("preference_grid: steps must be >= 1");
  const double lo = s.min_offdiagonal(), hi = s.max_offdiagonal();
  std::vector<double> grid(steps);
  for (int i = 0; i < steps; ++i) grid[i] = steps == 1 ? lo : lo + (hi - lo) * i / (steps - 1);
  grid.back() = hi;
  return grid;
}

bool seeds_separated(const ClusterResult& result, std::span<const int> seeds) {
  std::vector<int> owners;
  for (int sd : seeds) owners.push_back(result.assignment.at(sd));
  std::sort(owners.begin(), owners.end());
  return std::adjacent_find(owners.begin(), owners.end()) == owners.end();
}

SearchResult preference_search(std::span<const embed::Descriptor> descriptors, std::span<const int> seeds,
                               const APConfig& config, int steps) {
  const int n = static_cast<int>(descriptors.size());
  if (seeds.empty() || static_cast<int>(seeds.size()) > n)
    throw Error("preference_search: need 1 <= #seeds <= #detections");
  std::vector<int> sorted(seeds.begin(), seeds.end());
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
    throw Error("preference_search: seed indices must be distinct");
  if (sorted.front() < 0 || sorted.back() >= n) throw Error("preference_search: seed index out of range");

  SimilarityMatrix s = build_similarity(descriptors, 0.0);
  ClusterResult last;
  for (double p : preference_grid(s, steps)) {
    s.set_preference(p);
    last = affinity_propagation(s, config);
    if (seeds_separated(last, seeds)) return {p, std::move(last)};
  }
  throw SeedsNotSeparable("seeds not separable", std::move(last));
}

std::vector<int> filter_clusters(const ClusterResult& result, const FilterMode& mode) {
  std::vector<int> kept;
  if (const auto* seeded = std::get_if<Seeded>(&mode)) {
    for (int sd : seeded->seeds) kept.push_back(result.cluster_of(sd));
    std::sort(kept.begin(), kept.end());
    kept.erase(std::unique(kept.begin(), kept.end()), kept.end());
    return kept;
  }
  const int min_count = std::get<Unsupervised>(mode).min_count;
  std::vector<int> sizes(result.exemplars.size(), 0);
  for (int i = 0; i < static_cast<int>(result.assignment.size()); ++i) ++sizes[result.cluster_of(i)];
  for (int c = 0; c < static_cast<int>(sizes.size()); ++c)
    if (sizes[c] >= min_count) kept.push_back(c);
  return kept;
}

nlohmann::ordered_json to_json(const ClusterResult& r) {
  return {{"preference", r.preference},
          {"converged", r.converged},
          {"iterations", r.iterations},
          {"exemplars", r.exemplars},
          {"assignment", r.assignment}};
}

}  // namespace simco::cluster
