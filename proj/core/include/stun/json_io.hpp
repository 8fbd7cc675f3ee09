#pragma once

#include <string>

#include <nlohmann/json.hpp>

#include "stun/clustering.hpp"
#include "stun/expert_pruning.hpp"
#include "stun/pipeline.hpp"
#include "stun/unstructured.hpp"

namespace stun {

// Hand-off formats between CLI subcommands. Expert indices are 0-based and
// cluster members are sorted ascending.
nlohmann::json to_json(const ClusterMap& map);
ClusterMap cluster_map_from_json(const nlohmann::json& j);

nlohmann::json to_json(const PruningPlan& plan);
PruningPlan pruning_plan_from_json(const nlohmann::json& j);

// Versioned; unknown keys are rejected with ArgumentError.
nlohmann::json to_json(const StunConfig& cfg);
StunConfig stun_config_from_json(const nlohmann::json& j);

// Timing is machine-dependent and only included on request.
nlohmann::json to_json(const SparsityReport& report, bool include_timing = false);
std::string report_text(const SparsityReport& report);

nlohmann::json to_json(const MomentSummary& m);

}  // namespace stun
