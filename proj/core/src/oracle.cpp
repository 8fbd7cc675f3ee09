#include "stun/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include <boost/multiprecision/cpp_int.hpp>

#include "stun/error.hpp"

namespace stun {

namespace {

boost::multiprecision::cpp_int binomial(std::size_t n, std::size_t k) {
  if (k > n) throw ArgumentError("subset size exceeds the set size");
  k = std::min(k, n - k);
  boost::multiprecision::cpp_int c = 1;
  // Each prefix product is itself a binomial, so the division is exact.
  for (std::size_t i = 1; i <= k; ++i) {
    c *= n - k + i;
    c /= i;
  }
  return c;
}

double choose2(double x) { return x * (x - 1.0) / 2.0; }

}  // namespace

std::uint64_t subset_count(std::size_t n, std::size_t k) {
  const auto c = binomial(n, k);
  if (c > std::numeric_limits<std::uint64_t>::max()) throw BigCountError(c.str());
  return c.convert_to<std::uint64_t>();
}

std::string subset_count_string(std::size_t n, std::size_t k) { return binomial(n, k).str(); }

double adjusted_rand_index(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
  if (a.size() != b.size()) throw ShapeError("label vectors differ in length");
  const std::size_t n = a.size();
  if (n < 2) return 1.0;
  const std::size_t ka = *std::max_element(a.begin(), a.end()) + 1;
  const std::size_t kb = *std::max_element(b.begin(), b.end()) + 1;
  std::vector<double> table(ka * kb, 0.0), ra(ka, 0.0), rb(kb, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    table[a[i] * kb + b[i]] += 1.0;
    ra[a[i]] += 1.0;
    rb[b[i]] += 1.0;
  }
  double index = 0.0, sa = 0.0, sb = 0.0;
  for (double v : table) index += choose2(v);
  for (double v : ra) sa += choose2(v);
  for (double v : rb) sb += choose2(v);
  const double expected = sa * sb / choose2(static_cast<double>(n));
  const double max_index = 0.5 * (sa + sb);
  // Both partitions trivial (all singletons or one block): identical iff equal.
  if (max_index == expected) return index == max_index ? 1.0 : 0.0;
  return (index - expected) / (max_index - expected);
}

RecoveryScore cluster_recovery(const ClusterMap& found, const MoeModel& model) {
  if (!model.meta.planted) throw ArgumentError("model has no planted cluster record");
  const auto& planted = *model.meta.planted;
  if (planted.size() != found.layers.size()) throw ShapeError("layer count mismatch");
  RecoveryScore score;
  score.exact_match = true;
  for (std::size_t m = 0; m < planted.size(); ++m) {
    const auto truth = LayerClusters(planted[m]);
    const bool exact = truth == found.layers[m];
    const double ari = adjusted_rand_index(found.layers[m].labels(), truth.labels());
    score.per_layer.push_back(ari);
    score.layer_exact.push_back(exact);
    score.exact_match = score.exact_match && exact;
    score.agreement += ari;
  }
  if (!planted.empty()) score.agreement /= static_cast<double>(planted.size());
  return score;
}

PairedSummary paired_comparison(const TrialFactory& make_trial, const StunConfig& cfg,
                                const std::vector<std::uint64_t>& seeds) {
  if (seeds.size() < 2) throw ArgumentError("paired comparison needs at least 2 seeds");
  StunConfig baseline = cfg;
  baseline.expert_sparsity = 0.0;
  PairedSummary out;
  double wins = 0.0;
  for (std::uint64_t seed : seeds) {
    const Trial t = make_trial(seed);
    const auto tokens = t.heldout.tokens();
    const StunResult s = run_stun(t.model, t.calibration, cfg);
    const StunResult b = run_stun(t.model, t.calibration, baseline);
    MoeModel reference = t.model;
    if (cfg.renormalize) reference.meta.flags.renormalize = *cfg.renormalize;
    if (cfg.residual) reference.meta.flags.residual = *cfg.residual;
    PairedRow row;
    row.seed = seed;
    row.stun_deviation = output_deviation(reference, s.model, tokens);
    row.baseline_deviation = output_deviation(reference, b.model, tokens);
    row.stun_total_sparsity = s.report.total_sparsity_achieved;
    row.baseline_total_sparsity = b.report.total_sparsity_achieved;
    for (auto f : s.report.expert_phase_forwards) row.stun_forwards += f;
    if (row.stun_deviation < row.baseline_deviation) wins += 1.0;
    else if (row.stun_deviation == row.baseline_deviation) wins += 0.5;
    out.mean_stun_deviation += row.stun_deviation;
    out.mean_baseline_deviation += row.baseline_deviation;
    out.rows.push_back(row);
  }
  const double n = static_cast<double>(seeds.size());
  out.win_rate = wins / n;
  out.mean_stun_deviation /= n;
  out.mean_baseline_deviation /= n;
  return out;
}

OracleTable greedy_vs_oracle(const MoeModel& model, const CalibrationSet& data, std::size_t k,
                             const GreedyConfig& cfg, double lambda1, double lambda2) {
  cfg.validate();
  std::vector<std::size_t> targets;
  for (const auto& l : model.layers) {
    if (k >= l.expert_count()) throw ArgumentError("cannot prune every expert of a layer");
    targets.push_back(l.expert_count() - k);
  }
  StunConfig sc;
  sc.lambda1 = lambda1;
  sc.lambda2 = lambda2;
  const ClusterMap clusters = cluster_experts(model, &data, sc, targets);

  OracleTable table;
  const std::size_t layers = model.layers.size();
  auto& comb_ledger = table.ledgers.emplace("combinatorial", CostLedger(layers)).first->second;
  auto& on_ledger = table.ledgers.emplace("on", CostLedger(layers)).first->second;
  table.ledgers.emplace("o1", CostLedger(layers));
  const PruningPlan o1 = greedy_prune_o1(model, clusters, cfg);

  for (std::size_t m = 0; m < layers; ++m) {
    OracleRow row;
    row.layer = m;
    row.prune_count = k;
    LayerProbe comb_probe(model, m, data, &comb_ledger);
    row.optimum = combinatorial_prune(comb_probe, k, cfg.enumeration_cap).loss;
    LayerProbe on_probe(model, m, data, &on_ledger);
    row.loss["on"] = greedy_prune_on(on_probe, clusters.layers[m], k, cfg).loss;
    row.loss["o1"] = comb_probe.score(apply_layer_plan(model.layers[m], o1.layers[m]));
    row.loss["combinatorial"] = row.optimum;
    for (const auto& [engine, loss] : row.loss) {
      row.abs_diff[engine] = loss - row.optimum;
      if (row.optimum > 0.0) row.ratio[engine] = loss / row.optimum;
      else row.ratio[engine] = loss > 0.0 ? std::numeric_limits<double>::infinity() : 1.0;
    }
    row.forwards["combinatorial"] = comb_ledger.forwards[m];
    row.forwards["on"] = on_ledger.forwards[m];
    row.forwards["o1"] = 0;
    table.rows.push_back(row);
  }
  return table;
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace stun
