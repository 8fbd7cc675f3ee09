#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "stun/clustering.hpp"
#include "stun/moe_model.hpp"

namespace stun {

// Layer-level forward evaluations spent by an engine. Only evaluations an
// engine needs to make a decision are counted; scoring the final answer for
// reporting is not.
struct CostLedger {
  std::vector<std::uint64_t> forwards;     // per layer
  std::vector<std::uint64_t> enumerated;   // subsets visited, per layer

  explicit CostLedger(std::size_t layers = 0) : forwards(layers, 0), enumerated(layers, 0) {}
  std::uint64_t total_forwards() const noexcept;
};

// Caches one layer's calibration inputs and unpruned outputs, then evaluates
// ||M(x; theta) - M(x; theta')||_F for candidate pruned layers.
class LayerProbe {
 public:
  LayerProbe(const MoeModel& model, std::size_t layer, const CalibrationSet& data,
             CostLedger* ledger = nullptr);

  std::size_t layer_index() const noexcept { return layer_; }
  std::size_t expert_count() const noexcept { return layer_ref_->expert_count(); }
  std::size_t token_count() const noexcept { return inputs_.size(); }

  // Loss with the experts in `pruned` removed. Counted in the ledger.
  double evaluate(std::span<const std::size_t> pruned);
  // Loss with the whole layer replaced. Counted in the ledger.
  double evaluate(const MoeLayer& replacement);

  // Same as evaluate() but never touches the ledger.
  double score(std::span<const std::size_t> pruned) const;
  double score(const MoeLayer& replacement) const;

  void note_enumerated();

 private:
  void count();

  const MoeLayer* layer_ref_;
  std::size_t layer_;
  bool renormalize_;
  std::vector<Vector> inputs_;
  std::vector<Vector> reference_;
  CostLedger* ledger_;
};

// Output-reconstruction loss for removing S from one layer over all calibration tokens.
// Throws ArgumentError if S covers every expert or has out-of-range indices.
double reconstruction_loss(const MoeModel& model, std::size_t layer,
                           std::span<const std::size_t> pruned, const CalibrationSet& data);

struct GreedyConfig {
  double penalty = 2.0;       // p: subtracted when pruning would empty a cluster
  double retention = 4.0;     // L: retention score of a cluster representative
  double kappa = 3.0;         // reconstruct with the mean below this many clusters
  std::size_t enumeration_cap = 10000;

  void validate() const;
};

struct PruneResult {
  std::vector<std::size_t> pruned;  // in selection order
  double loss = 0.0;
};

// Exhaustive k-subset search. Ties keep the lexicographically smallest set.
// Throws EnumerationCapError when C(n, k) > cap.
PruneResult combinatorial_prune(const MoeModel& model, std::size_t layer, std::size_t k,
                                const CalibrationSet& data, std::size_t cap = 10000,
                                CostLedger* ledger = nullptr);
PruneResult combinatorial_prune(LayerProbe& probe, std::size_t k, std::size_t cap = 10000);

// Greedy O(n) engine: n single-expert losses give base scores
// P_i = (1/E_i) / Z; each step prunes the argmax of P_i, or P_i - p when
// pruning i would remove the last surviving member of its cluster. Experts
// with E_i == 0 score 2 (above any normalized score). Ties go to the lowest
// index.
PruneResult greedy_prune_on(const MoeModel& model, std::size_t layer, const LayerClusters& clusters,
                            std::size_t k, const CalibrationSet& data, const GreedyConfig& cfg,
                            CostLedger* ledger = nullptr);
PruneResult greedy_prune_on(LayerProbe& probe, const LayerClusters& clusters, std::size_t k,
                            const GreedyConfig& cfg);

enum class ReconstructionAction { keep_nearest, replace_with_mean };

std::string_view to_string(ReconstructionAction a);
ReconstructionAction reconstruction_action_from_string(std::string_view s);

struct KeptExpert {
  std::size_t index = 0;
  ReconstructionAction action = ReconstructionAction::keep_nearest;
  std::vector<std::size_t> members;  // sources averaged by replace_with_mean

  friend bool operator==(const KeptExpert&, const KeptExpert&) = default;
};

struct LayerPlan {
  std::vector<std::size_t> pruned;
  std::vector<KeptExpert> kept;  // ascending by index

  friend bool operator==(const LayerPlan&, const LayerPlan&) = default;
};

struct PruningPlan {
  std::string engine;
  std::vector<LayerPlan> layers;
  // Footprint (w_in, w_out, router row) of pruned experts / baseline params.
  double expert_sparsity = 0.0;

  friend bool operator==(const PruningPlan&, const PruningPlan&) = default;
};

// Greedy O(1) engine. For each cluster the member closest to the mean of the
// concatenated (w_in, w_out) vectors is retained; if the layer has fewer than
// kappa clusters it is overwritten by the mean expert and mean router row.
// Touches no calibration data.
PruningPlan greedy_prune_o1(const MoeModel& model, const ClusterMap& clusters,
                            const GreedyConfig& cfg);

// Plan that removes the given per-layer sets without reconstruction.
PruningPlan plan_from_pruned_sets(const MoeModel& model, std::string engine,
                                  const std::vector<std::vector<std::size_t>>& pruned);

// Materialises a plan: survivors keep original order, router rows shrink with
// them, top_k is clamped, phi_e is recorded. Throws ArgumentError if a layer
// would lose every expert or the model already carries masks.
MoeModel apply_expert_prune(const MoeModel& model, const PruningPlan& plan);

// A single layer with the plan applied (used to score O(1) plans).
MoeLayer apply_layer_plan(const MoeLayer& layer, const LayerPlan& plan);

}  // namespace stun
