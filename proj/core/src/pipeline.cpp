#include "stun/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <string>

#include "stun/error.hpp"

namespace stun {

std::string_view to_string(ClusterAlgorithm a) {
  return a == ClusterAlgorithm::dsatur ? "dsatur" : "agglomerative";
}

std::string_view to_string(ExpertEngine e) {
  switch (e) {
    case ExpertEngine::o1: return "o1";
    case ExpertEngine::on: return "on";
    case ExpertEngine::combinatorial: return "combinatorial";
  }
  return "o1";
}

ClusterAlgorithm cluster_algorithm_from_string(std::string_view s) {
  if (s == "agglomerative") return ClusterAlgorithm::agglomerative;
  if (s == "dsatur") return ClusterAlgorithm::dsatur;
  throw ArgumentError("unknown clustering algorithm '" + std::string(s) + "'");
}

ExpertEngine expert_engine_from_string(std::string_view s) {
  if (s == "o1") return ExpertEngine::o1;
  if (s == "on") return ExpertEngine::on;
  if (s == "combinatorial") return ExpertEngine::combinatorial;
  throw ArgumentError("unknown expert engine '" + std::string(s) + "'");
}

void StunConfig::validate() const {
  if (version != kConfigVersion) throw ArgumentError("unsupported config version " + std::to_string(version));
  if (!(expert_sparsity >= 0.0 && expert_sparsity <= total_sparsity && total_sparsity < 1.0)) {
    throw ArgumentError("need 0 <= expert_sparsity <= total_sparsity < 1");
  }
  if (!(lambda1 >= 0.0 && lambda2 >= 0.0)) throw ArgumentError("lambda weights must be >= 0");
  greedy.validate();
  if (!(owl.outlier_multiplier > 1.0)) throw ArgumentError("OWL: M must be > 1");
  if (!(owl.lambda >= 0.0)) throw ArgumentError("OWL: lambda must be >= 0");
}

namespace {

double budget_from_remaining(double total, double expert, double remaining) {
  if (!(expert >= 0.0 && total < 1.0)) throw ArgumentError("sparsities must satisfy 0 <= phi_e, phi_total < 1");
  if (expert > total) throw ArgumentError("expert-phase sparsity exceeds the total target");
  const double need = total - expert;
  if (need == 0.0) return 0.0;
  if (!(remaining > 0.0)) {
    throw InfeasibleBudgetError("no prunable parameters remain after the expert phase");
  }
  const double s = need / remaining;
  if (s >= 1.0) {
    throw InfeasibleBudgetError("unstructured phase would need sparsity " + std::to_string(s) +
                                " (>= 1): only " + std::to_string(remaining) +
                                " of the original parameters remain prunable but " +
                                std::to_string(need) + " must still be removed");
  }
  return s;
}

std::size_t prunable_parameters(const MoeModel& model, PrunableSet set) {
  std::size_t n = model.expert_parameter_count();
  if (set == PrunableSet::experts_and_routers) {
    for (const auto& l : model.layers) n += l.router.size();
  }
  return n;
}

std::size_t rounding_groups(const MoeModel& model, PrunableSet set, MaskGroup group) {
  std::size_t groups = 0;
  for (const auto& l : model.layers) {
    for (const auto& e : l.experts) groups += group == MaskGroup::per_row ? e.w_in.rows() + e.w_out.rows() : 2;
    if (set == PrunableSet::experts_and_routers) groups += group == MaskGroup::per_row ? l.router.rows() : 1;
  }
  return groups;
}

double elapsed_ms(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - since).count();
}

}  // namespace

double unstructured_budget(double total_sparsity, double expert_sparsity,
                           double remaining_prunable_fraction) {
  return budget_from_remaining(total_sparsity, expert_sparsity,
                               remaining_prunable_fraction - expert_sparsity);
}

std::size_t target_cluster_count(double expert_sparsity, std::size_t experts) {
  const double kept = std::round((1.0 - expert_sparsity) * static_cast<double>(experts));
  return std::clamp<std::size_t>(static_cast<std::size_t>(std::max(kept, 1.0)), 1, experts);
}

ClusterMap cluster_experts(const MoeModel& model, const CalibrationSet* data,
                           const StunConfig& cfg, std::vector<std::size_t> targets) {
  if (targets.size() != model.layers.size()) throw ArgumentError("one cluster target per layer");
  CoactivationStats coact;
  if (cfg.lambda2 > 0.0) {
    if (data == nullptr || data->token_count() == 0) {
      throw ArgumentError("lambda2 > 0 needs calibration data for coactivation statistics");
    }
    coact = collect_coactivations(model, *data);
  }
  ClusterMap map;
  for (std::size_t m = 0; m < model.layers.size(); ++m) {
    const Tensor2* a = cfg.lambda2 > 0.0 ? &coact.per_layer[m] : nullptr;
    const auto dm = behavioral_distance(model.layers[m], m, a, cfg.lambda1, cfg.lambda2);
    if (cfg.clustering == ClusterAlgorithm::agglomerative) {
      const auto t = threshold_search(dm, targets[m]);
      map.layers.push_back(agglomerative_cluster(dm, t.threshold));
    } else {
      const auto t = dsatur_threshold_search(dm, targets[m]);
      map.layers.push_back(dsatur_cluster(dm, t.threshold));
    }
  }
  return map;
}

StunResult run_stun(const MoeModel& input, const CalibrationSet& data, const StunConfig& cfg) {
  cfg.validate();
  MoeModel model = input;
  if (cfg.renormalize) model.meta.flags.renormalize = *cfg.renormalize;
  if (cfg.residual) model.meta.flags.residual = *cfg.residual;
  model.validate();
  const bool needs_data = cfg.lambda2 > 0.0 || cfg.engine != ExpertEngine::o1 ||
                          cfg.method != UnstructuredMethod::magnitude;
  if (needs_data && data.token_count() == 0) throw ArgumentError("calibration data required");

  StunResult result;
  SparsityReport& rep = result.report;
  const std::size_t baseline = model.baseline_parameters();
  rep.original_params = baseline;
  rep.expert_sparsity_requested = cfg.expert_sparsity;
  rep.total_sparsity_requested = cfg.total_sparsity;
  rep.kurtosis_original = kurtosis_report(model).aggregate;
  rep.expert_phase_forwards.assign(model.layers.size(), 0);

  // Phase 1: expert-level structured pruning.
  auto start = std::chrono::steady_clock::now();
  std::vector<std::size_t> targets;
  for (const auto& l : model.layers) targets.push_back(target_cluster_count(cfg.expert_sparsity, l.expert_count()));
  bool prune_experts = false;
  for (std::size_t m = 0; m < targets.size(); ++m) prune_experts |= targets[m] < model.layers[m].expert_count();

  if (prune_experts) {
    result.clusters = cluster_experts(model, &data, cfg, targets);
    if (cfg.engine == ExpertEngine::o1) {
      result.plan = greedy_prune_o1(model, result.clusters, cfg.greedy);
    } else {
      CostLedger ledger(model.layers.size());
      std::vector<std::vector<std::size_t>> sets;
      for (std::size_t m = 0; m < model.layers.size(); ++m) {
        const std::size_t k = model.layers[m].expert_count() - targets[m];
        LayerProbe probe(model, m, data, &ledger);
        if (cfg.engine == ExpertEngine::on) {
          sets.push_back(greedy_prune_on(probe, result.clusters.layers[m], k, cfg.greedy).pruned);
        } else {
          sets.push_back(combinatorial_prune(probe, k, cfg.greedy.enumeration_cap).pruned);
        }
      }
      result.plan = plan_from_pruned_sets(model, std::string(to_string(cfg.engine)), sets);
      rep.expert_phase_forwards = ledger.forwards;
    }
    result.expert_pruned = apply_expert_prune(model, result.plan);
  } else {
    for (const auto& l : model.layers) result.clusters.layers.push_back(LayerClusters::singletons(l.expert_count()));
    result.plan = plan_from_pruned_sets(model, std::string(to_string(cfg.engine)),
                                        std::vector<std::vector<std::size_t>>(model.layers.size()));
    result.expert_pruned = model;
  }
  rep.expert_phase_ms = elapsed_ms(start);

  const MoeModel& pruned = result.expert_pruned;
  rep.params_after_expert_phase = pruned.parameter_count();
  rep.pruned_expert_params = baseline - rep.params_after_expert_phase;
  rep.expert_sparsity_achieved = static_cast<double>(rep.pruned_expert_params) / static_cast<double>(baseline);
  rep.kurtosis_after_experts = kurtosis_report(pruned).aggregate;
  rep.prunable_after_expert_phase = prunable_parameters(pruned, cfg.prunable);

  // Phase 2: unstructured masking on the expert-pruned model.
  start = std::chrono::steady_clock::now();
  rep.phase2_skipped = cfg.expert_sparsity >= cfg.total_sparsity ||
                       rep.expert_sparsity_achieved >= cfg.total_sparsity;
  MaskResult masks;
  if (!rep.phase2_skipped) {
    rep.unstructured_sparsity = budget_from_remaining(
        cfg.total_sparsity, rep.expert_sparsity_achieved,
        static_cast<double>(rep.prunable_after_expert_phase) / static_cast<double>(baseline));
  }
  if (rep.unstructured_sparsity > 0.0) {
    ActivationNorms norms;
    const bool use_norms = cfg.method != UnstructuredMethod::magnitude;
    if (use_norms) norms = collect_activation_norms(pruned, data);
    MaskRequest req;
    req.method = cfg.method;
    req.sparsity = rep.unstructured_sparsity;
    req.group = cfg.group;
    req.owl = cfg.owl;
    // OWL needs lambda < s; shrink the band for small budgets.
    if (req.owl.lambda >= req.sparsity) req.owl.lambda = 0.5 * req.sparsity;
    req.prunable = cfg.prunable;
    masks = compute_masks(pruned, use_norms ? &norms : nullptr, req);
    rep.owl_fallback = masks.owl_fallback;
    result.model = apply_masks(pruned, masks.mask);
  } else {
    result.model = pruned;
    rep.phase2_skipped = true;
  }
  rep.unstructured_phase_ms = elapsed_ms(start);

  rep.masked_params = masks.mask.pruned_count();
  rep.rounding_groups = rounding_groups(pruned, cfg.prunable, cfg.group);
  rep.total_sparsity_achieved =
      static_cast<double>(rep.pruned_expert_params + rep.masked_params) / static_cast<double>(baseline);
  rep.kurtosis_final = kurtosis_report(result.model).aggregate;

  for (std::size_t m = 0; m < model.layers.size(); ++m) {
    LayerBreakdown b;
    b.layer = m;
    b.experts_before = model.layers[m].expert_count();
    b.experts_after = pruned.layers[m].expert_count();
    b.clusters = result.clusters.layers[m].cluster_count();
    for (std::size_t i : result.plan.layers[m].pruned) b.pruned_expert_params += expert_footprint(model.layers[m], i);
    b.unstructured_sparsity = masks.layer_sparsity.empty() ? 0.0 : masks.layer_sparsity[m];
    const std::string prefix = "layer" + std::to_string(m) + ".";
    for (const auto& [name, bits] : masks.mask.masks) {
      if (name.compare(0, prefix.size(), prefix) == 0) b.masked_params += bits.pruned_count();
    }
    rep.layers.push_back(b);
  }
  return result;
}

double output_deviation(const MoeModel& original, const MoeModel& pruned,
                        std::span<const Vector> tokens) {
  double diff = 0.0, ref = 0.0;
  for (const auto& x : tokens) {
    const Vector a = forward_model(original, x);
    const Vector b = forward_model(pruned, x);
    for (std::size_t d = 0; d < a.size(); ++d) {
      diff += (a[d] - b[d]) * (a[d] - b[d]);
      ref += a[d] * a[d];
    }
  }
  if (ref == 0.0) return diff == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return std::sqrt(diff / ref);
}

std::vector<SweepRow> interpolation_sweep(const MoeModel& model, const CalibrationSet& data,
                                          const CalibrationSet& heldout, const StunConfig& cfg,
                                          std::span<const double> ratios) {
  const auto tokens = heldout.tokens();
  std::vector<SweepRow> rows;
  for (double r : ratios) {
    if (!(r >= 0.0 && r <= 1.0)) throw ArgumentError("sweep ratios must lie in [0, 1]");
    StunConfig c = cfg;
    c.expert_sparsity = r * cfg.total_sparsity;
    const StunResult res = run_stun(model, data, c);
    SweepRow row;
    row.ratio = r;
    row.expert_sparsity_requested = c.expert_sparsity;
    row.expert_sparsity_achieved = res.report.expert_sparsity_achieved;
    row.unstructured_sparsity = res.report.unstructured_sparsity;
    row.total_sparsity_achieved = res.report.total_sparsity_achieved;
    MoeModel reference = model;
    if (cfg.renormalize) reference.meta.flags.renormalize = *cfg.renormalize;
    if (cfg.residual) reference.meta.flags.residual = *cfg.residual;
    row.deviation = output_deviation(reference, res.model, tokens);
    row.kurtosis = res.report.kurtosis_final.kurtosis;
    rows.push_back(row);
  }
  return rows;
}

}  // namespace stun
