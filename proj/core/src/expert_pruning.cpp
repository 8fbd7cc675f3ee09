#include "stun/expert_pruning.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "stun/error.hpp"
#include "stun/oracle.hpp"

namespace stun {
namespace {

std::vector<std::uint8_t> removal_mask(std::size_t n, std::span<const std::size_t> pruned) {
  std::vector<std::uint8_t> removed(n, 0);
  for (std::size_t i : pruned) {
    if (i >= n) throw ArgumentError("expert index " + std::to_string(i) + " out of range");
    removed[i] = 1;
  }
  if (std::find(removed.begin(), removed.end(), std::uint8_t{0}) == removed.end()) {
    throw ArgumentError("cannot prune every expert of a layer");
  }
  return removed;
}

// C(n, k) saturated at cap + 1.
std::uint64_t capped_binomial(std::size_t n, std::size_t k, std::uint64_t cap) {
  k = std::min(k, n - k);
  unsigned __int128 c = 1;
  for (std::size_t i = 1; i <= k; ++i) {
    c = c * (n - k + i) / i;
    if (c > cap) return cap + 1;
  }
  return static_cast<std::uint64_t>(c);
}

// Concatenated (w_in, w_out) mean of a set of experts.
ExpertParams mean_expert(const MoeLayer& layer, const std::vector<std::size_t>& members) {
  ExpertParams mean = layer.experts[members.front()];
  for (double& v : mean.w_in.values()) v = 0.0;
  for (double& v : mean.w_out.values()) v = 0.0;
  for (std::size_t i : members) {
    const auto& e = layer.experts[i];
    auto in = mean.w_in.values();
    auto out = mean.w_out.values();
    for (std::size_t p = 0; p < in.size(); ++p) in[p] += e.w_in.values()[p];
    for (std::size_t p = 0; p < out.size(); ++p) out[p] += e.w_out.values()[p];
  }
  const double inv = static_cast<double>(members.size());
  for (double& v : mean.w_in.values()) v /= inv;
  for (double& v : mean.w_out.values()) v /= inv;
  return mean;
}

double parameter_distance(const ExpertParams& a, const ExpertParams& b) {
  double acc = 0.0;
  auto add = [&acc](std::span<const double> x, std::span<const double> y) {
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double d = x[i] - y[i];
      acc += d * d;
    }
  };
  add(a.w_in.values(), b.w_in.values());
  add(a.w_out.values(), b.w_out.values());
  return std::sqrt(acc);
}

}  // namespace

std::uint64_t CostLedger::total_forwards() const noexcept {
  return std::accumulate(forwards.begin(), forwards.end(), std::uint64_t{0});
}

LayerProbe::LayerProbe(const MoeModel& model, std::size_t layer, const CalibrationSet& data,
                       CostLedger* ledger)
    : layer_ref_(nullptr), layer_(layer), renormalize_(model.meta.flags.renormalize), ledger_(ledger) {
  if (layer >= model.layers.size()) throw ArgumentError("layer index out of range");
  if (data.token_count() == 0) throw ArgumentError("empty calibration set");
  layer_ref_ = &model.layers[layer];
  const auto tokens = data.tokens();
  auto all = layer_inputs(model, tokens);
  inputs_ = std::move(all[layer]);
  reference_.reserve(inputs_.size());
  for (const auto& x : inputs_) reference_.push_back(forward_layer(*layer_ref_, x, renormalize_));
  if (ledger_ != nullptr && ledger_->forwards.size() <= layer) {
    ledger_->forwards.resize(layer + 1, 0);
    ledger_->enumerated.resize(layer + 1, 0);
  }
}

void LayerProbe::note_enumerated() {
  if (ledger_ != nullptr) ++ledger_->enumerated[layer_];
}

void LayerProbe::count() {
  if (ledger_ != nullptr) ++ledger_->forwards[layer_];
}

double LayerProbe::evaluate(std::span<const std::size_t> pruned) {
  const double loss = score(pruned);
  count();
  return loss;
}

double LayerProbe::evaluate(const MoeLayer& replacement) {
  const double loss = score(replacement);
  count();
  return loss;
}

double LayerProbe::score(std::span<const std::size_t> pruned) const {
  if (pruned.empty()) return 0.0;
  const auto removed = removal_mask(expert_count(), pruned);
  double acc = 0.0;
  for (std::size_t t = 0; t < inputs_.size(); ++t) {
    const Vector out = forward_layer(*layer_ref_, inputs_[t], renormalize_, removed);
    for (std::size_t d = 0; d < out.size(); ++d) {
      const double diff = reference_[t][d] - out[d];
      acc += diff * diff;
    }
  }
  return std::sqrt(acc);
}

double LayerProbe::score(const MoeLayer& replacement) const {
  double acc = 0.0;
  for (std::size_t t = 0; t < inputs_.size(); ++t) {
    const Vector out = forward_layer(replacement, inputs_[t], renormalize_);
    for (std::size_t d = 0; d < out.size(); ++d) {
      const double diff = reference_[t][d] - out[d];
      acc += diff * diff;
    }
  }
  return std::sqrt(acc);
}

double reconstruction_loss(const MoeModel& model, std::size_t layer,
                           std::span<const std::size_t> pruned, const CalibrationSet& data) {
  LayerProbe probe(model, layer, data);
  return probe.score(pruned);
}

void GreedyConfig::validate() const {
  if (!(penalty > 0.0)) throw ArgumentError("penalty p must be > 0");
  if (!(retention > penalty)) throw ArgumentError("retention score L must exceed p");
  if (!(kappa >= 0.0)) throw ArgumentError("kappa must be >= 0");
}

PruneResult combinatorial_prune(LayerProbe& probe, std::size_t k, std::size_t cap) {
  const std::size_t n = probe.expert_count();
  if (k >= n) throw ArgumentError("cannot prune " + std::to_string(k) + " of " + std::to_string(n) + " experts");
  if (capped_binomial(n, k, cap) > cap) {
    const std::string count = subset_count_string(n, k);
    throw EnumerationCapError("C(" + std::to_string(n) + ", " + std::to_string(k) + ") = " + count +
                                  " subsets exceeds the enumeration cap of " + std::to_string(cap) +
                                  "; use the greedy O(n) or O(1) engine",
                              count);
  }
  std::vector<std::size_t> subset(k);
  std::iota(subset.begin(), subset.end(), std::size_t{0});
  PruneResult best{subset, std::numeric_limits<double>::infinity()};
  while (true) {
    const double loss = probe.evaluate(subset);
    probe.note_enumerated();
    if (loss < best.loss) best = {subset, loss};
    // Advance to the next combination in lexicographic order.
    std::size_t i = k;
    while (i > 0 && subset[i - 1] == n - k + i - 1) --i;
    if (i == 0) break;
    ++subset[i - 1];
    for (std::size_t j = i; j < k; ++j) subset[j] = subset[j - 1] + 1;
  }
  return best;
}

PruneResult combinatorial_prune(const MoeModel& model, std::size_t layer, std::size_t k,
                                const CalibrationSet& data, std::size_t cap, CostLedger* ledger) {
  LayerProbe probe(model, layer, data, ledger);
  return combinatorial_prune(probe, k, cap);
}

PruneResult greedy_prune_on(LayerProbe& probe, const LayerClusters& clusters, std::size_t k,
                            const GreedyConfig& cfg) {
  cfg.validate();
  const std::size_t n = probe.expert_count();
  if (k >= n) throw ArgumentError("greedy O(n): k must be < n");
  if (clusters.expert_count() != n) throw ArgumentError("cluster map does not match layer");

  std::vector<double> single(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t s[] = {i};
    single[i] = probe.evaluate(s);
  }
  double z = 0.0;
  for (double e : single) {
    if (e > 0.0) z += 1.0 / e;
  }
  // Zero-loss experts score 2, above every normalized score, so they go
  // first unless removing them would empty their cluster.
  std::vector<double> base(n, 2.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (single[i] > 0.0) base[i] = (1.0 / single[i]) / z;
  }

  std::vector<bool> pruned(n, false);
  PruneResult result;
  for (std::size_t step = 0; step < k; ++step) {
    std::size_t pick = n;
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      if (pruned[i]) continue;
      bool wipes = true;
      for (std::size_t j : clusters.members(clusters.label(i))) {
        if (j != i && !pruned[j]) wipes = false;
      }
      const double s = wipes ? base[i] - cfg.penalty : base[i];
      if (s > best) {
        best = s;
        pick = i;
      }
    }
    pruned[pick] = true;
    result.pruned.push_back(pick);
  }
  result.loss = probe.score(result.pruned);
  return result;
}

PruneResult greedy_prune_on(const MoeModel& model, std::size_t layer, const LayerClusters& clusters,
                            std::size_t k, const CalibrationSet& data, const GreedyConfig& cfg,
                            CostLedger* ledger) {
  LayerProbe probe(model, layer, data, ledger);
  return greedy_prune_on(probe, clusters, k, cfg);
}

std::string_view to_string(ReconstructionAction a) {
  return a == ReconstructionAction::replace_with_mean ? "replace-with-mean" : "keep-nearest";
}

ReconstructionAction reconstruction_action_from_string(std::string_view s) {
  if (s == "keep-nearest") return ReconstructionAction::keep_nearest;
  if (s == "replace-with-mean") return ReconstructionAction::replace_with_mean;
  throw ArgumentError("unknown reconstruction action '" + std::string(s) + "'");
}

namespace {

double plan_sparsity(const MoeModel& model, const std::vector<LayerPlan>& layers) {
  std::size_t pruned = 0;
  for (std::size_t m = 0; m < layers.size(); ++m) {
    for (std::size_t i : layers[m].pruned) pruned += expert_footprint(model.layers[m], i);
  }
  return static_cast<double>(pruned) / static_cast<double>(model.baseline_parameters());
}

}  // namespace

PruningPlan greedy_prune_o1(const MoeModel& model, const ClusterMap& clusters,
                            const GreedyConfig& cfg) {
  cfg.validate();
  if (clusters.layers.size() != model.layers.size()) {
    throw ArgumentError("cluster map covers " + std::to_string(clusters.layers.size()) +
                        " layers, model has " + std::to_string(model.layers.size()));
  }
  PruningPlan plan;
  plan.engine = "o1";
  for (std::size_t m = 0; m < model.layers.size(); ++m) {
    const auto& layer = model.layers[m];
    const auto& lc = clusters.layers[m];
    if (lc.expert_count() != layer.expert_count()) throw ArgumentError("cluster map does not match layer");
    const bool reconstruct = static_cast<double>(lc.cluster_count()) < cfg.kappa;

    LayerPlan lp;
    for (const auto& members : lc.clusters()) {
      KeptExpert kept;
      kept.members = members;
      if (members.size() == 1) {
        kept.index = members.front();
      } else {
        const ExpertParams mean = mean_expert(layer, members);
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t i : members) {
          const double dist = parameter_distance(layer.experts[i], mean);
          if (dist < best) {
            best = dist;
            kept.index = i;
          }
        }
        if (reconstruct) kept.action = ReconstructionAction::replace_with_mean;
        for (std::size_t i : members) {
          if (i != kept.index) lp.pruned.push_back(i);
        }
      }
      lp.kept.push_back(std::move(kept));
    }
    std::sort(lp.pruned.begin(), lp.pruned.end());
    std::sort(lp.kept.begin(), lp.kept.end(),
              [](const KeptExpert& a, const KeptExpert& b) { return a.index < b.index; });
    plan.layers.push_back(std::move(lp));
  }
  plan.expert_sparsity = plan_sparsity(model, plan.layers);
  return plan;
}

PruningPlan plan_from_pruned_sets(const MoeModel& model, std::string engine,
                                  const std::vector<std::vector<std::size_t>>& pruned) {
  if (pruned.size() != model.layers.size()) throw ArgumentError("pruned sets do not match layers");
  PruningPlan plan;
  plan.engine = std::move(engine);
  for (std::size_t m = 0; m < pruned.size(); ++m) {
    const std::size_t n = model.layers[m].expert_count();
    const auto removed = removal_mask(n, pruned[m]);
    LayerPlan lp;
    lp.pruned = pruned[m];
    for (std::size_t i = 0; i < n; ++i) {
      if (!removed[i]) lp.kept.push_back({i, ReconstructionAction::keep_nearest, {i}});
    }
    plan.layers.push_back(std::move(lp));
  }
  plan.expert_sparsity = plan_sparsity(model, plan.layers);
  return plan;
}

MoeLayer apply_layer_plan(const MoeLayer& layer, const LayerPlan& plan) {
  const std::size_t n = layer.expert_count();
  std::vector<int> seen(n, 0);
  for (std::size_t i : plan.pruned) {
    if (i >= n) throw ArgumentError("pruned index out of range");
    ++seen[i];
  }
  for (const auto& k : plan.kept) {
    if (k.index >= n) throw ArgumentError("kept index out of range");
    ++seen[k.index];
  }
  if (plan.kept.empty()) throw ArgumentError("plan would leave a layer with no experts");
  for (std::size_t i = 0; i < n; ++i) {
    if (seen[i] != 1) throw ArgumentError("plan must list expert " + std::to_string(i) + " exactly once");
  }

  std::vector<const KeptExpert*> kept;
  for (const auto& k : plan.kept) kept.push_back(&k);
  std::sort(kept.begin(), kept.end(),
            [](const KeptExpert* a, const KeptExpert* b) { return a->index < b->index; });

  MoeLayer out;
  out.top_k = std::min(layer.top_k, kept.size());
  out.router = Tensor2(kept.size(), layer.router.cols());
  for (std::size_t r = 0; r < kept.size(); ++r) {
    const KeptExpert& k = *kept[r];
    if (k.action == ReconstructionAction::replace_with_mean) {
      if (k.members.empty()) throw ArgumentError("mean reconstruction needs members");
      for (std::size_t i : k.members) {
        if (i >= n) throw ArgumentError("member index out of range");
      }
      out.experts.push_back(mean_expert(layer, k.members));
      auto row = out.router.row(r);
      for (std::size_t i : k.members) {
        auto src = layer.router.row(i);
        for (std::size_t d = 0; d < row.size(); ++d) row[d] += src[d];
      }
      for (double& v : row) v /= static_cast<double>(k.members.size());
    } else {
      out.experts.push_back(layer.experts[k.index]);
      auto src = layer.router.row(k.index);
      std::copy(src.begin(), src.end(), out.router.row(r).begin());
    }
  }
  return out;
}

MoeModel apply_expert_prune(const MoeModel& model, const PruningPlan& plan) {
  if (plan.layers.size() != model.layers.size()) throw ArgumentError("plan does not match model layers");
  if (!model.masks.empty()) throw ArgumentError("expert pruning must run before masking");

  bool identity = true;
  for (const auto& lp : plan.layers) {
    if (!lp.pruned.empty()) identity = false;
    for (const auto& k : lp.kept) {
      if (k.action == ReconstructionAction::replace_with_mean) identity = false;
    }
  }
  if (identity) {
    for (std::size_t m = 0; m < model.layers.size(); ++m) (void)apply_layer_plan(model.layers[m], plan.layers[m]);
    return model;
  }

  MoeModel out;
  out.model_dim = model.model_dim;
  out.meta = model.meta;
  out.meta.original_parameters = model.baseline_parameters();
  std::size_t pruned_params = 0;
  for (std::size_t m = 0; m < model.layers.size(); ++m) {
    const auto& lp = plan.layers[m];
    out.layers.push_back(apply_layer_plan(model.layers[m], lp));
    for (std::size_t i : lp.pruned) pruned_params += expert_footprint(model.layers[m], i);
  }
  const double prior = model.meta.expert_sparsity.value_or(0.0);
  out.meta.expert_sparsity =
      prior + static_cast<double>(pruned_params) / static_cast<double>(model.baseline_parameters());
  if (model.meta.planted) {
    std::vector<std::vector<std::size_t>> planted;
    for (std::size_t m = 0; m < model.layers.size(); ++m) {
      std::vector<std::size_t> kept;
      for (const auto& k : plan.layers[m].kept) kept.push_back(k.index);
      std::sort(kept.begin(), kept.end());
      std::vector<std::size_t> labels;
      for (std::size_t i : kept) labels.push_back((*model.meta.planted)[m][i]);
      planted.push_back(std::move(labels));
    }
    out.meta.planted = std::move(planted);
  }
  return out;
}

}  // namespace stun
