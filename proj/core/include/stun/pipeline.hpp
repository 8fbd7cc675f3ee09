#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "stun/clustering.hpp"
#include "stun/expert_pruning.hpp"
#include "stun/moe_model.hpp"
#include "stun/unstructured.hpp"

namespace stun {

enum class ClusterAlgorithm { agglomerative, dsatur };
enum class ExpertEngine { o1, on, combinatorial };

std::string_view to_string(ClusterAlgorithm a);
std::string_view to_string(ExpertEngine e);
ClusterAlgorithm cluster_algorithm_from_string(std::string_view s);
ExpertEngine expert_engine_from_string(std::string_view s);

inline constexpr int kConfigVersion = 1;

struct StunConfig {
  int version = kConfigVersion;
  double total_sparsity = 0.5;
  double expert_sparsity = 0.125;
  double lambda1 = 1.0;
  double lambda2 = 0.0;
  ClusterAlgorithm clustering = ClusterAlgorithm::agglomerative;
  ExpertEngine engine = ExpertEngine::o1;
  GreedyConfig greedy;
  UnstructuredMethod method = UnstructuredMethod::wanda;
  MaskGroup group = MaskGroup::per_row;
  OwlConfig owl;
  PrunableSet prunable = PrunableSet::experts;
  std::string calibration_path;
  std::uint64_t seed = 0;
  std::optional<bool> renormalize;  // overrides the model flag when set
  std::optional<bool> residual;

  // Throws ArgumentError on any invariant violation.
  void validate() const;
};

// s_u = (phi_total - phi_e) / f_rem, where f_rem is the prunable fraction of
// the baseline that survives the expert phase. Throws InfeasibleBudgetError
// when s_u >= 1 and ArgumentError when phi_e > phi_total.
double unstructured_budget(double total_sparsity, double expert_sparsity,
                           double remaining_prunable_fraction);

// Experts kept per layer for an expert-phase sparsity: round((1 - phi_e) n),
// at least 1.
std::size_t target_cluster_count(double expert_sparsity, std::size_t experts);

struct LayerBreakdown {
  std::size_t layer = 0;
  std::size_t experts_before = 0;
  std::size_t experts_after = 0;
  std::size_t clusters = 0;
  std::size_t pruned_expert_params = 0;
  std::size_t masked_params = 0;
  double unstructured_sparsity = 0.0;
};

struct SparsityReport {
  std::size_t original_params = 0;
  std::size_t params_after_expert_phase = 0;
  std::size_t pruned_expert_params = 0;
  std::size_t prunable_after_expert_phase = 0;
  std::size_t masked_params = 0;
  double expert_sparsity_requested = 0.0;
  double expert_sparsity_achieved = 0.0;
  double unstructured_sparsity = 0.0;  // s_u
  double total_sparsity_requested = 0.0;
  double total_sparsity_achieved = 0.0;
  std::size_t rounding_groups = 0;  // mask groups, bounds the rounding error
  bool phase2_skipped = false;
  bool owl_fallback = false;
  std::vector<LayerBreakdown> layers;
  MomentSummary kurtosis_original;
  MomentSummary kurtosis_after_experts;
  MomentSummary kurtosis_final;
  std::vector<std::uint64_t> expert_phase_forwards;  // per layer
  double expert_phase_ms = 0.0;
  double unstructured_phase_ms = 0.0;
};

struct StunResult {
  MoeModel model;
  MoeModel expert_pruned;
  ClusterMap clusters;
  PruningPlan plan;
  SparsityReport report;
};

// Phase 1 (cluster + expert pruning) then phase 2 (masking at s_u on the
// expert-pruned model with freshly collected statistics).
StunResult run_stun(const MoeModel& model, const CalibrationSet& data, const StunConfig& cfg);

// Phase 1 alone; exposed for the CLI and the oracle harness.
ClusterMap cluster_experts(const MoeModel& model, const CalibrationSet* data,
                           const StunConfig& cfg, std::vector<std::size_t> targets);

// ||Y_orig - Y_pruned||_F / ||Y_orig||_F over model outputs for `tokens`.
double output_deviation(const MoeModel& original, const MoeModel& pruned,
                        std::span<const Vector> tokens);

struct SweepRow {
  double ratio = 0.0;
  double expert_sparsity_requested = 0.0;
  double expert_sparsity_achieved = 0.0;
  double unstructured_sparsity = 0.0;
  double total_sparsity_achieved = 0.0;
  double deviation = 0.0;
  double kurtosis = 0.0;
};

// For each ratio r in [0, 1], runs run_stun with phi_e = r * phi_total.
std::vector<SweepRow> interpolation_sweep(const MoeModel& model, const CalibrationSet& data,
                                          const CalibrationSet& heldout, const StunConfig& cfg,
                                          std::span<const double> ratios);

}  // namespace stun
