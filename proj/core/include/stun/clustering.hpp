#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "stun/moe_model.hpp"
#include "stun/tensor.hpp"

namespace stun {

// Pairwise expert distance for one layer: smaller means more alike.
//   d[i][j] = lambda1 * ||W_i - W_j|| - lambda2 * a[i][j],  d[i][i] = 0
struct DistanceMatrix {
  std::size_t layer = 0;
  Tensor2 d;
  double lambda1 = 1.0;
  double lambda2 = 0.0;

  std::size_t size() const noexcept { return d.rows(); }
  double operator()(std::size_t i, std::size_t j) const { return d(i, j); }
};

// Partition of one layer's experts. Labels are canonical: clusters are
// numbered in order of their smallest member, members sorted ascending.
class LayerClusters {
 public:
  LayerClusters() = default;
  // Throws ArgumentError unless labels is a valid partition.
  explicit LayerClusters(const std::vector<std::size_t>& labels);
  static LayerClusters from_members(std::size_t n,
                                    const std::vector<std::vector<std::size_t>>& members);
  static LayerClusters singletons(std::size_t n);

  std::size_t expert_count() const noexcept { return labels_.size(); }
  std::size_t cluster_count() const noexcept { return members_.size(); }
  std::size_t label(std::size_t expert) const { return labels_.at(expert); }
  const std::vector<std::size_t>& labels() const noexcept { return labels_; }
  const std::vector<std::size_t>& members(std::size_t cluster) const { return members_.at(cluster); }
  const std::vector<std::vector<std::size_t>>& clusters() const noexcept { return members_; }

  friend bool operator==(const LayerClusters&, const LayerClusters&) = default;

 private:
  std::vector<std::size_t> labels_;
  std::vector<std::vector<std::size_t>> members_;
};

struct ClusterMap {
  std::vector<LayerClusters> layers;

  friend bool operator==(const ClusterMap&, const ClusterMap&) = default;
};

// Router-row distance optionally offset by coactivation. coact is required
// iff lambda2 > 0 (ArgumentError otherwise).
DistanceMatrix behavioral_distance(const MoeLayer& layer, std::size_t layer_index,
                                   const Tensor2* coactivation, double lambda1, double lambda2);

// Complete-linkage agglomeration: repeatedly merge the two clusters with the
// smallest maximum cross distance while that distance is < t. Ties go to the
// lexicographically smallest (min member, min member) pair.
LayerClusters agglomerative_cluster(const DistanceMatrix& d, double t);

struct ThresholdResult {
  double threshold = 0.0;
  std::size_t achieved = 0;
};

// Smallest candidate threshold whose agglomerative clustering has at most
// target clusters. Candidates are the minimum distance (no merges) and the
// next representable value above each unique pairwise distance.
ThresholdResult threshold_search(const DistanceMatrix& d, std::size_t target_clusters);

// Clique partition of the graph {(i,j): d[i][j] <= t} by DSatur colouring of
// its complement. Selection: highest saturation, then highest complement
// degree, then lowest index; each vertex takes the smallest free colour.
LayerClusters dsatur_cluster(const DistanceMatrix& d, double t);

// Same contract as threshold_search but for dsatur_cluster; scans candidates
// in ascending order since colouring counts need not be monotone.
ThresholdResult dsatur_threshold_search(const DistanceMatrix& d, std::size_t target_clusters);

}  // namespace stun
