#include "stun/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>

#include "stun/error.hpp"

namespace stun {

LayerClusters::LayerClusters(const std::vector<std::size_t>& labels) {
  std::map<std::size_t, std::size_t> canonical;
  labels_.resize(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto [it, inserted] = canonical.try_emplace(labels[i], members_.size());
    if (inserted) members_.emplace_back();
    labels_[i] = it->second;
    members_[it->second].push_back(i);
  }
}

LayerClusters LayerClusters::from_members(std::size_t n,
                                          const std::vector<std::vector<std::size_t>>& members) {
  constexpr std::size_t kUnset = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> labels(n, kUnset);
  for (std::size_t c = 0; c < members.size(); ++c) {
    if (members[c].empty()) throw ArgumentError("empty cluster");
    for (std::size_t i : members[c]) {
      if (i >= n) throw ArgumentError("cluster member " + std::to_string(i) + " out of range");
      if (labels[i] != kUnset) throw ArgumentError("expert " + std::to_string(i) + " in two clusters");
      labels[i] = c;
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] == kUnset) throw ArgumentError("expert " + std::to_string(i) + " unclustered");
  }
  return LayerClusters(labels);
}

LayerClusters LayerClusters::singletons(std::size_t n) {
  std::vector<std::size_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = i;
  return LayerClusters(labels);
}

DistanceMatrix behavioral_distance(const MoeLayer& layer, std::size_t layer_index,
                                   const Tensor2* coactivation, double lambda1, double lambda2) {
  if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0)) throw ArgumentError("lambda weights must be >= 0");
  const std::size_t n = layer.expert_count();
  if (lambda2 > 0.0) {
    if (coactivation == nullptr) throw ArgumentError("lambda2 > 0 needs coactivation statistics");
    if (coactivation->rows() != n || coactivation->cols() != n) {
      throw ShapeError("coactivation matrix does not match expert count");
    }
  }
  DistanceMatrix dm;
  dm.layer = layer_index;
  dm.lambda1 = lambda1;
  dm.lambda2 = lambda2;
  dm.d = Tensor2(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double v = lambda1 * l2_distance(layer.router.row(i), layer.router.row(j));
      if (lambda2 > 0.0) v -= lambda2 * (*coactivation)(i, j);
      dm.d(i, j) = v;
      dm.d(j, i) = v;
    }
  }
  return dm;
}

LayerClusters agglomerative_cluster(const DistanceMatrix& dm, double t) {
  const std::size_t n = dm.size();
  // Slot s holds the cluster whose smallest member is s; linkage is the
  // complete-linkage (max) distance between active slots.
  std::vector<std::size_t> label(n);
  std::vector<bool> active(n, true);
  Tensor2 link = dm.d;
  for (std::size_t i = 0; i < n; ++i) label[i] = i;

  while (true) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t ba = n, bb = n;
    for (std::size_t a = 0; a < n; ++a) {
      if (!active[a]) continue;
      for (std::size_t b = a + 1; b < n; ++b) {
        if (!active[b]) continue;
        if (link(a, b) < best) {
          best = link(a, b);
          ba = a;
          bb = b;
        }
      }
    }
    if (ba == n || !(best < t)) break;
    for (std::size_t c = 0; c < n; ++c) {
      if (!active[c] || c == ba || c == bb) continue;
      const double merged = std::max(link(ba, c), link(bb, c));
      link(ba, c) = merged;
      link(c, ba) = merged;
    }
    active[bb] = false;
    for (std::size_t i = 0; i < n; ++i) {
      if (label[i] == bb) label[i] = ba;
    }
  }
  return LayerClusters(label);
}

namespace {

std::vector<double> unique_distances(const DistanceMatrix& dm) {
  std::vector<double> v;
  const std::size_t n = dm.size();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) v.push_back(dm(i, j));
  }
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

constexpr double kInf = std::numeric_limits<double>::infinity();

}  // namespace

ThresholdResult threshold_search(const DistanceMatrix& dm, std::size_t target_clusters) {
  const std::size_t n = dm.size();
  if (target_clusters < 1 || target_clusters > n) {
    throw ArgumentError("target cluster count outside [1, n]");
  }
  const auto values = unique_distances(dm);
  if (values.empty()) return {0.0, n};

  // candidate(0) merges nothing; candidate(i) admits every pair <= values[i-1].
  auto candidate = [&](std::size_t i) {
    return i == 0 ? values.front() : std::nextafter(values[i - 1], kInf);
  };
  auto count = [&](std::size_t i) { return agglomerative_cluster(dm, candidate(i)).cluster_count(); };

  std::size_t lo = 0, hi = values.size();  // count(hi) == 1 <= target
  if (count(lo) <= target_clusters) return {candidate(lo), count(lo)};
  while (hi - lo > 1) {
    const std::size_t mid = lo + (hi - lo) / 2;
    if (count(mid) <= target_clusters) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  return {candidate(hi), count(hi)};
}

LayerClusters dsatur_cluster(const DistanceMatrix& dm, double t) {
  const std::size_t n = dm.size();
  // Conflict graph: experts that are not similar enough must differ in colour.
  std::vector<std::vector<std::size_t>> conflicts(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i != j && !(dm(i, j) <= t)) conflicts[i].push_back(j);
    }
  }
  constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> colour(n, kNone);
  std::vector<std::vector<bool>> neighbour_colours(n);

  auto saturation = [&](std::size_t v) {
    return static_cast<std::size_t>(
        std::count(neighbour_colours[v].begin(), neighbour_colours[v].end(), true));
  };

  for (std::size_t step = 0; step < n; ++step) {
    std::size_t pick = kNone;
    for (std::size_t v = 0; v < n; ++v) {
      if (colour[v] != kNone) continue;
      if (pick == kNone) {
        pick = v;
        continue;
      }
      const std::size_t sv = saturation(v), sp = saturation(pick);
      if (sv > sp || (sv == sp && conflicts[v].size() > conflicts[pick].size())) pick = v;
    }
    std::size_t c = 0;
    while (c < neighbour_colours[pick].size() && neighbour_colours[pick][c]) ++c;
    colour[pick] = c;
    for (std::size_t u : conflicts[pick]) {
      if (neighbour_colours[u].size() <= c) neighbour_colours[u].resize(c + 1, false);
      neighbour_colours[u][c] = true;
    }
  }
  return LayerClusters(colour);
}

ThresholdResult dsatur_threshold_search(const DistanceMatrix& dm, std::size_t target_clusters) {
  const std::size_t n = dm.size();
  if (target_clusters < 1 || target_clusters > n) {
    throw ArgumentError("target cluster count outside [1, n]");
  }
  const auto values = unique_distances(dm);
  if (values.empty()) return {0.0, n};
  const double below = std::nextafter(values.front(), -kInf);
  if (n <= target_clusters) return {below, n};
  for (double t : values) {
    const std::size_t c = dsatur_cluster(dm, t).cluster_count();
    if (c <= target_clusters) return {t, c};
  }
  return {values.back(), 1};
}

}  // namespace stun
