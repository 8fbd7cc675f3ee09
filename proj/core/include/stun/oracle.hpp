#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "stun/clustering.hpp"
#include "stun/expert_pruning.hpp"
#include "stun/moe_model.hpp"
#include "stun/pipeline.hpp"

namespace stun {

// Exact C(n, k). Throws BigCountError (carrying the exact decimal) when the
// value does not fit in 64 bits and ArgumentError when k > n.
std::uint64_t subset_count(std::size_t n, std::size_t k);
// Exact C(n, k) as a decimal string, any size.
std::string subset_count_string(std::size_t n, std::size_t k);

struct RecoveryScore {
  bool exact_match = false;
  double agreement = 0.0;            // mean adjusted Rand index over layers
  std::vector<double> per_layer;     // adjusted Rand index
  std::vector<bool> layer_exact;
};

double adjusted_rand_index(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b);

// Throws ArgumentError if the model has no planted record.
RecoveryScore cluster_recovery(const ClusterMap& found, const MoeModel& model);

// Everything one seed of an experiment needs.
struct Trial {
  MoeModel model;
  CalibrationSet calibration;
  CalibrationSet heldout;
};
using TrialFactory = std::function<Trial(std::uint64_t seed)>;

struct PairedRow {
  std::uint64_t seed = 0;
  double stun_deviation = 0.0;
  double baseline_deviation = 0.0;
  double stun_total_sparsity = 0.0;
  double baseline_total_sparsity = 0.0;
  std::uint64_t stun_forwards = 0;
};

struct PairedSummary {
  std::vector<PairedRow> rows;
  double win_rate = 0.0;  // strict wins; ties count half
  double mean_stun_deviation = 0.0;
  double mean_baseline_deviation = 0.0;
};

// STUN (cfg as given) against unstructured-only (same cfg, phi_e = 0) at
// matched total sparsity. Requires at least 2 seeds.
PairedSummary paired_comparison(const TrialFactory& make_trial, const StunConfig& cfg,
                                const std::vector<std::uint64_t>& seeds);

enum class OracleEngine { on, o1 };

struct OracleRow {
  std::size_t layer = 0;
  std::size_t prune_count = 0;
  double optimum = 0.0;
  std::map<std::string, double> loss;       // engine -> loss
  std::map<std::string, double> ratio;      // loss / optimum (inf if optimum == 0 < loss)
  std::map<std::string, double> abs_diff;   // loss - optimum
  std::map<std::string, std::uint64_t> forwards;
};

struct OracleTable {
  std::vector<OracleRow> rows;
  std::map<std::string, CostLedger> ledgers;
};

// Per layer: loss of each engine divided by the combinatorial optimum for
// removing k experts. Clusters come from agglomerative clustering on router
// distances targeted at n - k clusters.
OracleTable greedy_vs_oracle(const MoeModel& model, const CalibrationSet& data, std::size_t k,
                             const GreedyConfig& cfg = {}, double lambda1 = 1.0,
                             double lambda2 = 0.0);

// Stable 64-bit FNV-1a, used to tag experiment rows with their config.
std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace stun
