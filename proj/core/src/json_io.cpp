#include "stun/json_io.hpp"

#include <cstdio>
#include <set>
#include <sstream>

#include "stun/error.hpp"

namespace stun {

using nlohmann::json;

namespace {

template <class F>
auto guarded(const char* what, F&& f) {
  try {
    return f();
  } catch (const json::exception& e) {
    throw ArgumentError(std::string(what) + ": " + e.what());
  }
}

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ArgumentError(where + " must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!allowed.count(key)) throw ArgumentError("unknown key '" + key + "' in " + where);
  }
}

std::string_view to_string(PrunableSet p) {
  return p == PrunableSet::experts ? "experts" : "experts+routers";
}

PrunableSet prunable_from_string(const std::string& s) {
  if (s == "experts") return PrunableSet::experts;
  if (s == "experts+routers") return PrunableSet::experts_and_routers;
  throw ArgumentError("unknown prunable set '" + s + "'");
}

}  // namespace

json to_json(const ClusterMap& map) {
  json layers = json::array();
  for (const auto& l : map.layers) {
    layers.push_back({{"experts", l.expert_count()}, {"clusters", l.clusters()}});
  }
  return {{"layers", layers}};
}

ClusterMap cluster_map_from_json(const json& j) {
  return guarded("cluster map", [&] {
    ClusterMap map;
    for (const auto& l : j.at("layers")) {
      map.layers.push_back(LayerClusters::from_members(
          l.at("experts").get<std::size_t>(), l.at("clusters").get<std::vector<std::vector<std::size_t>>>()));
    }
    return map;
  });
}

json to_json(const PruningPlan& plan) {
  json layers = json::array();
  for (const auto& l : plan.layers) {
    json kept = json::array();
    for (const auto& k : l.kept) {
      kept.push_back({{"index", k.index}, {"action", to_string(k.action)}, {"members", k.members}});
    }
    layers.push_back({{"pruned", l.pruned}, {"kept", kept}});
  }
  return {{"engine", plan.engine}, {"expert_sparsity", plan.expert_sparsity}, {"layers", layers}};
}

PruningPlan pruning_plan_from_json(const json& j) {
  return guarded("pruning plan", [&] {
    PruningPlan plan;
    plan.engine = j.at("engine").get<std::string>();
    plan.expert_sparsity = j.at("expert_sparsity").get<double>();
    for (const auto& l : j.at("layers")) {
      LayerPlan lp;
      lp.pruned = l.at("pruned").get<std::vector<std::size_t>>();
      for (const auto& k : l.at("kept")) {
        KeptExpert ke;
        ke.index = k.at("index").get<std::size_t>();
        ke.action = reconstruction_action_from_string(k.at("action").get<std::string>());
        ke.members = k.at("members").get<std::vector<std::size_t>>();
        lp.kept.push_back(ke);
      }
      plan.layers.push_back(lp);
    }
    return plan;
  });
}

json to_json(const StunConfig& c) {
  json j = {
      {"version", c.version},
      {"total_sparsity", c.total_sparsity},
      {"expert_sparsity", c.expert_sparsity},
      {"lambda1", c.lambda1},
      {"lambda2", c.lambda2},
      {"clustering", to_string(c.clustering)},
      {"engine", to_string(c.engine)},
      {"greedy",
       {{"penalty", c.greedy.penalty},
        {"retention", c.greedy.retention},
        {"kappa", c.greedy.kappa},
        {"enumeration_cap", c.greedy.enumeration_cap}}},
      {"method", to_string(c.method)},
      {"group", to_string(c.group)},
      {"owl", {{"M", c.owl.outlier_multiplier}, {"lambda", c.owl.lambda}}},
      {"prunable", to_string(c.prunable)},
      {"calibration", c.calibration_path},
      {"seed", c.seed},
  };
  if (c.renormalize) j["renormalize"] = *c.renormalize;
  if (c.residual) j["residual"] = *c.residual;
  return j;
}

StunConfig stun_config_from_json(const json& j) {
  reject_unknown(j,
                 {"version", "total_sparsity", "expert_sparsity", "lambda1", "lambda2", "clustering",
                  "engine", "greedy", "method", "group", "owl", "prunable", "calibration", "seed",
                  "renormalize", "residual"},
                 "config");
  return guarded("config", [&] {
    StunConfig c;
    c.version = j.at("version").get<int>();
    if (c.version != kConfigVersion) {
      throw ArgumentError("unsupported config version " + std::to_string(c.version));
    }
    if (j.contains("total_sparsity")) c.total_sparsity = j["total_sparsity"].get<double>();
    if (j.contains("expert_sparsity")) c.expert_sparsity = j["expert_sparsity"].get<double>();
    if (j.contains("lambda1")) c.lambda1 = j["lambda1"].get<double>();
    if (j.contains("lambda2")) c.lambda2 = j["lambda2"].get<double>();
    if (j.contains("clustering")) c.clustering = cluster_algorithm_from_string(j["clustering"].get<std::string>());
    if (j.contains("engine")) c.engine = expert_engine_from_string(j["engine"].get<std::string>());
    if (j.contains("greedy")) {
      const auto& g = j["greedy"];
      reject_unknown(g, {"penalty", "retention", "kappa", "enumeration_cap"}, "greedy");
      if (g.contains("penalty")) c.greedy.penalty = g["penalty"].get<double>();
      if (g.contains("retention")) c.greedy.retention = g["retention"].get<double>();
      if (g.contains("kappa")) c.greedy.kappa = g["kappa"].get<double>();
      if (g.contains("enumeration_cap")) c.greedy.enumeration_cap = g["enumeration_cap"].get<std::size_t>();
    }
    if (j.contains("method")) c.method = unstructured_method_from_string(j["method"].get<std::string>());
    if (j.contains("group")) c.group = mask_group_from_string(j["group"].get<std::string>());
    if (j.contains("owl")) {
      const auto& o = j["owl"];
      reject_unknown(o, {"M", "lambda"}, "owl");
      if (o.contains("M")) c.owl.outlier_multiplier = o["M"].get<double>();
      if (o.contains("lambda")) c.owl.lambda = o["lambda"].get<double>();
    }
    if (j.contains("prunable")) c.prunable = prunable_from_string(j["prunable"].get<std::string>());
    if (j.contains("calibration")) c.calibration_path = j["calibration"].get<std::string>();
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("renormalize")) c.renormalize = j["renormalize"].get<bool>();
    if (j.contains("residual")) c.residual = j["residual"].get<bool>();
    c.validate();
    return c;
  });
}

json to_json(const MomentSummary& m) {
  return {{"mean", m.mean}, {"stddev", m.stddev}, {"kurtosis", m.kurtosis}, {"count", m.count}};
}

json to_json(const SparsityReport& r, bool include_timing) {
  json layers = json::array();
  for (const auto& l : r.layers) {
    layers.push_back({{"layer", l.layer},
                      {"experts_before", l.experts_before},
                      {"experts_after", l.experts_after},
                      {"clusters", l.clusters},
                      {"pruned_expert_params", l.pruned_expert_params},
                      {"masked_params", l.masked_params},
                      {"unstructured_sparsity", l.unstructured_sparsity}});
  }
  json j = {
      {"original_params", r.original_params},
      {"params_after_expert_phase", r.params_after_expert_phase},
      {"pruned_expert_params", r.pruned_expert_params},
      {"prunable_after_expert_phase", r.prunable_after_expert_phase},
      {"masked_params", r.masked_params},
      {"expert_sparsity_requested", r.expert_sparsity_requested},
      {"expert_sparsity_achieved", r.expert_sparsity_achieved},
      {"unstructured_sparsity", r.unstructured_sparsity},
      {"total_sparsity_requested", r.total_sparsity_requested},
      {"total_sparsity_achieved", r.total_sparsity_achieved},
      {"rounding_groups", r.rounding_groups},
      {"phase2_skipped", r.phase2_skipped},
      {"owl_fallback", r.owl_fallback},
      {"layers", layers},
      {"kurtosis",
       {{"original", to_json(r.kurtosis_original)},
        {"after_experts", to_json(r.kurtosis_after_experts)},
        {"final", to_json(r.kurtosis_final)}}},
      {"expert_phase_forwards", r.expert_phase_forwards},
  };
  if (include_timing) {
    j["timing_ms"] = {{"expert_phase", r.expert_phase_ms}, {"unstructured_phase", r.unstructured_phase_ms}};
  }
  return j;
}

std::string report_text(const SparsityReport& r) {
  std::ostringstream out;
  char line[160];
  auto row = [&](const char* key, const std::string& value) {
    std::snprintf(line, sizeof line, "%-28s %s\n", key, value.c_str());
    out << line;
  };
  auto num = [](double v) {
    char b[32];
    std::snprintf(b, sizeof b, "%.6f", v);
    return std::string(b);
  };
  row("original params", std::to_string(r.original_params));
  row("params after expert phase", std::to_string(r.params_after_expert_phase));
  row("masked params", std::to_string(r.masked_params));
  row("expert sparsity (req/ach)", num(r.expert_sparsity_requested) + " / " + num(r.expert_sparsity_achieved));
  row("unstructured sparsity s_u", r.phase2_skipped ? std::string("skipped") : num(r.unstructured_sparsity));
  row("total sparsity (req/ach)", num(r.total_sparsity_requested) + " / " + num(r.total_sparsity_achieved));
  row("rounding groups", std::to_string(r.rounding_groups));
  if (r.owl_fallback) row("owl", "fell back to uniform allocation");
  row("kurtosis orig/experts/final",
      num(r.kurtosis_original.kurtosis) + " / " + num(r.kurtosis_after_experts.kurtosis) + " / " +
          num(r.kurtosis_final.kurtosis));
  out << "\n";
  std::snprintf(line, sizeof line, "%-6s %8s %8s %9s %14s %10s %10s\n", "layer", "experts", "kept",
                "clusters", "expert_params", "masked", "s_layer");
  out << line;
  for (const auto& l : r.layers) {
    std::snprintf(line, sizeof line, "%-6zu %8zu %8zu %9zu %14zu %10zu %10.6f\n", l.layer,
                  l.experts_before, l.experts_after, l.clusters, l.pruned_expert_params,
                  l.masked_params, l.unstructured_sparsity);
    out << line;
  }
  return out.str();
}

}  // namespace stun
