#include "stun/unstructured.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "stun/error.hpp"

namespace stun {

std::vector<std::pair<std::size_t, std::size_t>> ActivationNorms::unrouted() const {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t m = 0; m < experts.size(); ++m) {
    for (std::size_t i = 0; i < experts[m].size(); ++i) {
      if (experts[m][i].routed_tokens == 0) out.emplace_back(m, i);
    }
  }
  return out;
}

ActivationNorms collect_activation_norms(const MoeModel& model, const CalibrationSet& data) {
  if (data.token_count() == 0) throw ArgumentError("empty calibration set");
  const auto tokens = data.tokens();
  const auto inputs = layer_inputs(model, tokens);

  ActivationNorms norms;
  norms.token_count = tokens.size();
  for (std::size_t m = 0; m < model.layers.size(); ++m) {
    const auto& layer = model.layers[m];
    std::vector<ExpertNorms> per_expert(layer.expert_count());
    for (std::size_t i = 0; i < per_expert.size(); ++i) {
      per_expert[i].w_in.assign(model.model_dim, 0.0);
      per_expert[i].w_out.assign(layer.experts[i].hidden_dim(), 0.0);
    }
    Vector router(model.model_dim, 0.0);
    for (const auto& x : inputs[m]) {
      for (std::size_t d = 0; d < x.size(); ++d) router[d] += x[d] * x[d];
      const Routing r = route(layer, x);
      for (std::size_t i : r.selected) {
        auto& acc = per_expert[i];
        ++acc.routed_tokens;
        for (std::size_t d = 0; d < x.size(); ++d) acc.w_in[d] += x[d] * x[d];
        const Vector h = layer.experts[i].hidden(x);
        for (std::size_t d = 0; d < h.size(); ++d) acc.w_out[d] += h[d] * h[d];
      }
    }
    for (double& v : router) v = std::sqrt(v);
    for (auto& e : per_expert) {
      for (double& v : e.w_in) v = std::sqrt(v);
      for (double& v : e.w_out) v = std::sqrt(v);
    }
    norms.experts.push_back(std::move(per_expert));
    norms.routers.push_back(std::move(router));
  }
  return norms;
}

std::string_view to_string(MaskGroup g) { return g == MaskGroup::per_row ? "per_row" : "per_matrix"; }

MaskGroup mask_group_from_string(std::string_view s) {
  if (s == "per_row") return MaskGroup::per_row;
  if (s == "per_matrix") return MaskGroup::per_matrix;
  throw ArgumentError("unknown mask group '" + std::string(s) + "'");
}

std::size_t prune_count(double sparsity, std::size_t count) {
  if (!(sparsity >= 0.0 && sparsity < 1.0)) throw ArgumentError("sparsity must lie in [0, 1)");
  // The epsilon absorbs representation error in budgets such as 0.525 / 0.875.
  const auto n = static_cast<std::size_t>(std::floor(sparsity * static_cast<double>(count) + 1e-9));
  return std::min(n, count);
}

BitMask wanda_mask(const Tensor2& w, std::span<const double> norms, double sparsity,
                   MaskGroup group) {
  if (norms.size() != w.cols()) throw ShapeError("norm vector length != matrix columns");
  BitMask mask(w.rows(), w.cols());
  const std::size_t cols = w.cols();
  auto score = [&](std::size_t flat) { return std::abs(w.values()[flat]) * norms[flat % cols]; };

  if (group == MaskGroup::per_row) {
    const std::size_t drop = prune_count(sparsity, cols);
    if (drop == 0) return mask;
    std::vector<std::size_t> order(cols);
    for (std::size_t r = 0; r < w.rows(); ++r) {
      std::iota(order.begin(), order.end(), r * cols);
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t a, std::size_t b) { return score(a) < score(b); });
      for (std::size_t p = 0; p < drop; ++p) mask.bits[order[p]] = 1;
    }
    return mask;
  }

  const std::size_t drop = prune_count(sparsity, w.size());
  if (drop == 0) return mask;
  std::vector<std::size_t> order(w.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const double sa = score(a), sb = score(b);
    if (sa != sb) return sa < sb;
    if (a % cols != b % cols) return a % cols < b % cols;
    return a < b;
  });
  for (std::size_t p = 0; p < drop; ++p) mask.bits[order[p]] = 1;
  return mask;
}

BitMask magnitude_mask(const Tensor2& w, double sparsity, MaskGroup group) {
  const Vector ones(w.cols(), 1.0);
  return wanda_mask(w, ones, sparsity, group);
}

void OwlConfig::validate() const {
  if (!(outlier_multiplier > 1.0)) throw ArgumentError("OWL: M must be > 1");
  if (!(target >= 0.0 && target < 1.0)) throw ArgumentError("OWL: target sparsity must lie in [0, 1)");
  if (!(lambda >= 0.0 && lambda < target)) throw ArgumentError("OWL: lambda must lie in [0, s)");
}

OwlAllocation owl_allocate(const std::vector<Vector>& per_layer_scores, const OwlConfig& cfg) {
  cfg.validate();
  if (per_layer_scores.empty()) throw ArgumentError("OWL: need at least one layer");
  const std::size_t layers = per_layer_scores.size();
  const double s = cfg.target;

  OwlAllocation out;
  for (const auto& scores : per_layer_scores) {
    if (scores.empty()) throw ArgumentError("OWL: layer without scores");
    double mean = 0.0;
    for (double v : scores) mean += v;
    mean /= static_cast<double>(scores.size());
    const double cut = cfg.outlier_multiplier * mean;
    const auto outliers = std::count_if(scores.begin(), scores.end(), [&](double v) { return v > cut; });
    out.outlier_ratio.push_back(static_cast<double>(outliers) / static_cast<double>(scores.size()));
  }
  double mean_ratio = 0.0;
  for (double d : out.outlier_ratio) mean_ratio += d;
  mean_ratio /= static_cast<double>(layers);

  const double lo = std::max(0.0, s - cfg.lambda);
  const double hi = std::min(s + cfg.lambda, std::nextafter(1.0, 0.0));
  std::vector<double> alloc(layers);
  std::vector<bool> clipped(layers, false);
  for (std::size_t l = 0; l < layers; ++l) alloc[l] = s - (out.outlier_ratio[l] - mean_ratio);

  const double target_sum = s * static_cast<double>(layers);
  constexpr double kTolerance = 1e-9;
  for (int iter = 0; iter < 1000; ++iter) {
    for (std::size_t l = 0; l < layers; ++l) {
      if (alloc[l] >= hi) {
        alloc[l] = hi;
        clipped[l] = true;
      } else if (alloc[l] <= lo) {
        alloc[l] = lo;
        clipped[l] = true;
      }
    }
    const double sum = std::accumulate(alloc.begin(), alloc.end(), 0.0);
    const double deficit = target_sum - sum;
    if (std::abs(deficit) / static_cast<double>(layers) <= kTolerance * 0.5) break;
    double free_mass = 0.0;
    for (std::size_t l = 0; l < layers; ++l) {
      if (!clipped[l]) free_mass += alloc[l];
    }
    if (free_mass <= 0.0) break;
    for (std::size_t l = 0; l < layers; ++l) {
      if (!clipped[l]) alloc[l] += deficit * alloc[l] / free_mass;
    }
  }
  const double mean = std::accumulate(alloc.begin(), alloc.end(), 0.0) / static_cast<double>(layers);
  if (std::abs(mean - s) > kTolerance) {
    out.fallback = true;
    alloc.assign(layers, s);
  }
  out.sparsity = std::move(alloc);
  return out;
}

std::size_t SparsityMask::pruned_count() const noexcept {
  std::size_t n = 0;
  for (const auto& [_, m] : masks) n += m.pruned_count();
  return n;
}

std::size_t SparsityMask::total_count() const noexcept {
  std::size_t n = 0;
  for (const auto& [_, m] : masks) n += m.bits.size();
  return n;
}

double SparsityMask::global_sparsity() const noexcept {
  const std::size_t total = total_count();
  return total == 0 ? 0.0 : static_cast<double>(pruned_count()) / static_cast<double>(total);
}

double SparsityMask::sparsity(const std::string& name) const {
  const auto& m = masks.at(name);
  return m.bits.empty() ? 0.0 : static_cast<double>(m.pruned_count()) / static_cast<double>(m.bits.size());
}

std::string_view to_string(UnstructuredMethod m) {
  switch (m) {
    case UnstructuredMethod::magnitude: return "magnitude";
    case UnstructuredMethod::wanda: return "wanda";
    case UnstructuredMethod::owl: return "owl";
  }
  return "wanda";
}

UnstructuredMethod unstructured_method_from_string(std::string_view s) {
  if (s == "magnitude") return UnstructuredMethod::magnitude;
  if (s == "wanda") return UnstructuredMethod::wanda;
  if (s == "owl") return UnstructuredMethod::owl;
  throw ArgumentError("unknown unstructured method '" + std::string(s) + "'");
}

namespace {

struct Prunable {
  std::string name;
  const Tensor2* weights;
  Vector norms;
};

std::vector<std::vector<Prunable>> prunable_matrices(const MoeModel& model, const ActivationNorms* norms,
                                                     PrunableSet set, bool need_norms) {
  if (need_norms && norms == nullptr) throw ArgumentError("activation norms required");
  if (norms != nullptr && norms->experts.size() != model.layers.size()) {
    throw ShapeError("activation norms do not match model layers");
  }
  std::vector<std::vector<Prunable>> out(model.layers.size());
  for (std::size_t m = 0; m < model.layers.size(); ++m) {
    const auto& layer = model.layers[m];
    if (norms != nullptr && norms->experts[m].size() != layer.expert_count()) {
      throw ShapeError("activation norms do not match layer experts");
    }
    for (std::size_t i = 0; i < layer.expert_count(); ++i) {
      const auto& e = layer.experts[i];
      const auto* en = norms != nullptr ? &norms->experts[m][i] : nullptr;
      out[m].push_back({tensor_name(m, i, ExpertMatrix::w_in), &e.w_in,
                        need_norms ? en->w_in : Vector(e.w_in.cols(), 1.0)});
      out[m].push_back({tensor_name(m, i, ExpertMatrix::w_out), &e.w_out,
                        need_norms ? en->w_out : Vector(e.w_out.cols(), 1.0)});
    }
    if (set == PrunableSet::experts_and_routers) {
      out[m].push_back({router_name(m), &layer.router,
                        need_norms ? norms->routers[m] : Vector(layer.router.cols(), 1.0)});
    }
  }
  return out;
}

}  // namespace

MaskResult compute_masks(const MoeModel& model, const ActivationNorms* norms,
                         const MaskRequest& request) {
  prune_count(request.sparsity, 0);  // validates the range
  const bool use_norms = request.method != UnstructuredMethod::magnitude;
  const auto groups = prunable_matrices(model, norms, request.prunable, use_norms);

  MaskResult result;
  result.layer_sparsity.assign(model.layers.size(), request.sparsity);
  if (request.method == UnstructuredMethod::owl && request.sparsity > 0.0) {
    std::vector<Vector> scores(groups.size());
    for (std::size_t m = 0; m < groups.size(); ++m) {
      for (const auto& p : groups[m]) {
        const std::size_t cols = p.weights->cols();
        const auto w = p.weights->values();
        for (std::size_t f = 0; f < w.size(); ++f) scores[m].push_back(std::abs(w[f]) * p.norms[f % cols]);
      }
    }
    OwlConfig cfg = request.owl;
    cfg.target = request.sparsity;
    const auto alloc = owl_allocate(scores, cfg);
    result.layer_sparsity = alloc.sparsity;
    result.owl_fallback = alloc.fallback;
  }
  for (std::size_t m = 0; m < groups.size(); ++m) {
    for (const auto& p : groups[m]) {
      result.mask.masks.emplace(p.name, wanda_mask(*p.weights, p.norms, result.layer_sparsity[m], request.group));
    }
  }
  return result;
}

MoeModel apply_masks(const MoeModel& model, const SparsityMask& mask) {
  MoeModel out = model;
  if (mask.masks.empty()) return out;

  std::map<std::string, Tensor2*> by_name;
  for (std::size_t m = 0; m < out.layers.size(); ++m) {
    auto& layer = out.layers[m];
    by_name.emplace(router_name(m), &layer.router);
    for (std::size_t i = 0; i < layer.expert_count(); ++i) {
      by_name.emplace(tensor_name(m, i, ExpertMatrix::w_in), &layer.experts[i].w_in);
      by_name.emplace(tensor_name(m, i, ExpertMatrix::w_out), &layer.experts[i].w_out);
    }
  }
  for (const auto& [name, bits] : mask.masks) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw ArgumentError("mask for unknown tensor '" + name + "'");
    Tensor2& t = *it->second;
    if (bits.rows != t.rows() || bits.cols != t.cols() || bits.bits.size() != t.size()) {
      throw ArgumentError("mask shape mismatch for '" + name + "'");
    }
    auto v = t.values();
    for (std::size_t f = 0; f < v.size(); ++f) {
      if (bits.bits[f]) v[f] = 0.0;
    }
    auto [slot, inserted] = out.masks.emplace(name, bits);
    if (!inserted) {
      for (std::size_t f = 0; f < bits.bits.size(); ++f) slot->second.bits[f] |= bits.bits[f];
    }
  }
  const std::size_t baseline = model.baseline_parameters();
  std::size_t masked = 0;
  for (const auto& [_, m] : out.masks) masked += m.pruned_count();
  out.meta.original_parameters = baseline;
  out.meta.global_sparsity =
      static_cast<double>(baseline - out.parameter_count() + masked) / static_cast<double>(baseline);
  return out;
}

MomentSummary moments(std::span<const double> weights) {
  MomentSummary s;
  s.count = weights.size();
  if (weights.empty()) return s;
  const double n = static_cast<double>(weights.size());
  double sum = 0.0;
  for (double w : weights) sum += w;
  s.mean = sum / n;
  double m2 = 0.0, m4 = 0.0;
  for (double w : weights) {
    const double d = w - s.mean;
    const double d2 = d * d;
    m2 += d2;
    m4 += d2 * d2;
  }
  m2 /= n;
  m4 /= n;
  s.stddev = std::sqrt(m2);
  s.kurtosis = m2 > 0.0 ? m4 / (m2 * m2) : 0.0;
  return s;
}

double kurtosis(std::span<const double> weights) {
  if (weights.size() < 2) throw ArgumentError("kurtosis needs at least 2 samples");
  const MomentSummary s = moments(weights);
  if (!(s.stddev > 0.0)) throw DegenerateError("kurtosis undefined: zero variance");
  return s.kurtosis;
}

KurtosisReport kurtosis_report(const MoeModel& model) {
  KurtosisReport report;
  std::vector<double> all;
  auto survivors = [](const Tensor2& t) {
    std::vector<double> v;
    for (double w : t.values()) {
      if (w != 0.0) v.push_back(w);
    }
    return v;
  };
  for (std::size_t m = 0; m < model.layers.size(); ++m) {
    const auto& layer = model.layers[m];
    for (std::size_t i = 0; i < layer.expert_count(); ++i) {
      for (auto which : {ExpertMatrix::w_in, ExpertMatrix::w_out}) {
        const Tensor2& t = which == ExpertMatrix::w_in ? layer.experts[i].w_in : layer.experts[i].w_out;
        auto v = survivors(t);
        report.per_matrix.emplace(tensor_name(m, i, which), moments(v));
        all.insert(all.end(), v.begin(), v.end());
      }
    }
  }
  report.aggregate = moments(all);
  return report;
}

}  // namespace stun
