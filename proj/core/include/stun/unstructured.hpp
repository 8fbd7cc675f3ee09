#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "stun/moe_model.hpp"
#include "stun/tensor.hpp"

namespace stun {

enum class PrunableSet { experts, experts_and_routers };

// Per-input-column L2 norms of the activations each matrix sees.
struct ExpertNorms {
  Vector w_in;   // length model_dim
  Vector w_out;  // length hidden_dim
  std::size_t routed_tokens = 0;
};

struct ActivationNorms {
  std::vector<std::vector<ExpertNorms>> experts;  // [layer][expert]
  std::vector<Vector> routers;                    // [layer], every token
  std::size_t token_count = 0;

  // (layer, expert) pairs that received no tokens.
  std::vector<std::pair<std::size_t, std::size_t>> unrouted() const;
};

// Experts only see tokens routed to them. Throws ArgumentError on empty data.
ActivationNorms collect_activation_norms(const MoeModel& model, const CalibrationSet& data);

enum class MaskGroup { per_row, per_matrix };

std::string_view to_string(MaskGroup g);
MaskGroup mask_group_from_string(std::string_view s);

// Number of entries to prune from a group of `count` at sparsity s.
std::size_t prune_count(double sparsity, std::size_t count);

// Wanda score |W_ij| * norms_j; prunes the floor(s * group) lowest scores per
// group. Equal scores prune the lower column index first (then lower row).
BitMask wanda_mask(const Tensor2& w, std::span<const double> norms, double sparsity,
                   MaskGroup group = MaskGroup::per_row);
// Wanda with unit norms.
BitMask magnitude_mask(const Tensor2& w, double sparsity, MaskGroup group = MaskGroup::per_row);

struct OwlConfig {
  double outlier_multiplier = 5.0;  // M
  double lambda = 0.08;             // max deviation from the target
  double target = 0.5;              // s

  void validate() const;
};

struct OwlAllocation {
  std::vector<double> sparsity;
  std::vector<double> outlier_ratio;
  bool fallback = false;  // uniform target used because redistribution failed
};

// Layerwise sparsity from outlier ratios D_l = |{score > M * mean}| / |scores|.
// Raw s_l = s - (D_l - mean D), clipped to [s - lambda, s + lambda]; the
// clipped mass is redistributed over unclipped layers in proportion to their
// current sparsity until the mean is s within 1e-9.
OwlAllocation owl_allocate(const std::vector<Vector>& per_layer_scores, const OwlConfig& cfg);

struct SparsityMask {
  std::map<std::string, BitMask> masks;

  std::size_t pruned_count() const noexcept;
  std::size_t total_count() const noexcept;
  double global_sparsity() const noexcept;
  double sparsity(const std::string& name) const;
};

enum class UnstructuredMethod { magnitude, wanda, owl };

std::string_view to_string(UnstructuredMethod m);
UnstructuredMethod unstructured_method_from_string(std::string_view s);

struct MaskRequest {
  UnstructuredMethod method = UnstructuredMethod::wanda;
  double sparsity = 0.0;
  MaskGroup group = MaskGroup::per_row;
  OwlConfig owl;
  PrunableSet prunable = PrunableSet::experts;
};

struct MaskResult {
  SparsityMask mask;
  std::vector<double> layer_sparsity;  // what each layer was asked for
  bool owl_fallback = false;
};

// Builds masks for every prunable matrix. `norms` may be null for magnitude.
MaskResult compute_masks(const MoeModel& model, const ActivationNorms* norms,
                         const MaskRequest& request);

// Zeroes masked weights in a copy of the model, stores the masks and records
// the global sparsity against the baseline parameter count.
MoeModel apply_masks(const MoeModel& model, const SparsityMask& mask);

// Pearson (not excess) kurtosis with population variance. Throws
// ArgumentError for fewer than 2 samples and DegenerateError when sigma == 0.
double kurtosis(std::span<const double> weights);

struct MomentSummary {
  double mean = 0.0;
  double stddev = 0.0;
  double kurtosis = 0.0;
  std::size_t count = 0;
};

struct KurtosisReport {
  std::map<std::string, MomentSummary> per_matrix;
  MomentSummary aggregate;
};

// Moments over nonzero expert weights.
KurtosisReport kurtosis_report(const MoeModel& model);
MomentSummary moments(std::span<const double> weights);

}  // namespace stun
