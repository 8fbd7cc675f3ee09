// stun: command-line front end for structured-then-unstructured pruning of
// mixture-of-experts models.
//
// Exit codes: 0 success, 1 other failure, 2 infeasible budget, 3 I/O or
// corrupt file, 4 bad configuration or arguments.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "stun/error.hpp"
#include "stun/json_io.hpp"
#include "stun/model_io.hpp"
#include "stun/oracle.hpp"
#include "stun/pipeline.hpp"
#include "stun/synthetic.hpp"

using namespace stun;
using nlohmann::json;

namespace {

enum Exit { kOk = 0, kFailure = 1, kInfeasible = 2, kIo = 3, kBadConfig = 4 };

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ArgumentError(path + ": " + e.what());
  }
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path);
  if (!out || !(out << text)) throw IoError("cannot write " + path);
}

void write_json(const std::string& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

// Config file first, then explicit flags on top.
struct ConfigFlags {
  std::string file;
  double total = -1, expert = -1, lambda1 = -1, lambda2 = -1;
  std::string clustering, engine, method, group, prunable;
  std::uint64_t seed = 0;
  bool seed_set = false;

  void attach(CLI::App* app) {
    app->add_option("--config", file, "JSON config file");
    app->add_option("--total-sparsity", total, "target global sparsity");
    app->add_option("--expert-sparsity", expert, "expert-phase sparsity");
    app->add_option("--lambda1", lambda1, "router-distance weight");
    app->add_option("--lambda2", lambda2, "coactivation weight");
    app->add_option("--clustering", clustering, "agglomerative | dsatur");
    app->add_option("--engine", engine, "o1 | on | combinatorial");
    app->add_option("--method", method, "magnitude | wanda | owl");
    app->add_option("--group", group, "per_row | per_matrix");
    app->add_option("--prunable", prunable, "experts | experts+routers");
    app->add_option("--seed", seed, "experiment seed")->each([this](const std::string&) { seed_set = true; });
  }

  StunConfig resolve() const {
    json j = file.empty() ? json{{"version", kConfigVersion}} : read_json(file);
    if (!j.is_object()) throw ArgumentError("config must be a JSON object");
    if (total >= 0) j["total_sparsity"] = total;
    if (expert >= 0) j["expert_sparsity"] = expert;
    if (lambda1 >= 0) j["lambda1"] = lambda1;
    if (lambda2 >= 0) j["lambda2"] = lambda2;
    if (!clustering.empty()) j["clustering"] = clustering;
    if (!engine.empty()) j["engine"] = engine;
    if (!method.empty()) j["method"] = method;
    if (!group.empty()) j["group"] = group;
    if (!prunable.empty()) j["prunable"] = prunable;
    if (seed_set) j["seed"] = seed;
    if (!j.contains("version")) j["version"] = kConfigVersion;
    return stun_config_from_json(j);
  }
};

CalibrationSet load_optional_calibration(const std::string& path) {
  return path.empty() ? CalibrationSet{} : load_calibration(path);
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Structured-then-unstructured pruning for mixture-of-experts models"};
  app.require_subcommand(1);
  std::function<void()> action;

  // generate
  SyntheticSpec gen;
  std::uint64_t gen_seed = 0;
  std::string gen_out, gen_activation = "relu";
  bool gen_renorm = false, gen_no_residual = false;
  auto* g = app.add_subcommand("generate", "write a synthetic planted-cluster model");
  g->add_option("--layers", gen.layers)->capture_default_str();
  g->add_option("--experts", gen.experts)->capture_default_str();
  g->add_option("--dim", gen.model_dim)->capture_default_str();
  g->add_option("--hidden", gen.hidden_dim)->capture_default_str();
  g->add_option("--top-k", gen.top_k)->capture_default_str();
  g->add_option("--clusters", gen.clusters_per_layer, "planted clusters per layer")->capture_default_str();
  g->add_option("--noise", gen.noise_sigma, "noise relative to the prototype")->capture_default_str();
  g->add_option("--router-scale", gen.router_scale)->capture_default_str();
  g->add_option("--activation", gen_activation)->capture_default_str();
  g->add_flag("--renormalize", gen_renorm, "renormalize top-k coefficients");
  g->add_flag("--no-residual", gen_no_residual, "disable residual connections");
  g->add_option("--seed", gen_seed)->capture_default_str();
  g->add_option("-o,--out", gen_out)->required();
  g->callback([&] {
    action = [&] {
      gen.activation = activation_from_string(gen_activation);
      gen.flags = {gen_renorm, !gen_no_residual};
      SeededRng rng(gen_seed);
      const MoeModel m = generate_synthetic(gen, rng);
      save_model(m, gen_out);
      std::cout << "wrote " << gen_out << ": " << m.parameter_count() << " parameters\n";
    };
  });

  // calib
  std::size_t cal_dim = 0, cal_samples = 16, cal_seq = 8;
  std::uint64_t cal_seed = 1;
  std::string cal_model, cal_out;
  auto* c = app.add_subcommand("calib", "write N(0,1) calibration tokens");
  c->add_option("--dim", cal_dim, "token width (or take it from --model)");
  c->add_option("--model", cal_model);
  c->add_option("--samples", cal_samples)->capture_default_str();
  c->add_option("--seq-len", cal_seq)->capture_default_str();
  c->add_option("--seed", cal_seed)->capture_default_str();
  c->add_option("-o,--out", cal_out)->required();
  c->callback([&] {
    action = [&] {
      if (!cal_model.empty()) cal_dim = read_model_header(cal_model).model_dim;
      if (cal_dim == 0) throw ArgumentError("give --dim or --model");
      SeededRng rng(cal_seed);
      save_calibration(generate_calibration(cal_dim, cal_samples, cal_seq, rng), cal_out);
      std::cout << "wrote " << cal_out << ": " << cal_samples * cal_seq << " tokens\n";
    };
  });

  // inspect
  std::string ins_model;
  auto* in = app.add_subcommand("inspect", "summarize a model file");
  in->add_option("model", ins_model)->required();
  in->callback([&] {
    action = [&] {
      const MoeModel m = load_model(ins_model);
      json j = {{"name", m.meta.name},
                {"seed", m.meta.seed},
                {"model_dim", m.model_dim},
                {"parameters", m.parameter_count()},
                {"baseline_parameters", m.baseline_parameters()},
                {"renormalize", m.meta.flags.renormalize},
                {"residual", m.meta.flags.residual},
                {"masked_tensors", m.masks.size()}};
      for (const auto& l : m.layers) {
        j["layers"].push_back({{"experts", l.expert_count()},
                               {"top_k", l.top_k},
                               {"hidden_dim", l.experts.empty() ? 0 : l.experts[0].hidden_dim()}});
      }
      if (m.meta.expert_sparsity) j["expert_sparsity"] = *m.meta.expert_sparsity;
      if (m.meta.global_sparsity) j["global_sparsity"] = *m.meta.global_sparsity;
      if (m.meta.planted) j["planted"] = *m.meta.planted;
      std::cout << j.dump(2) << "\n";
    };
  });

  // cluster
  ConfigFlags cl_cfg;
  std::string cl_model, cl_calib, cl_out;
  auto* cl = app.add_subcommand("cluster", "group experts by behavioural distance");
  cl->add_option("--model", cl_model)->required();
  cl->add_option("--calib", cl_calib, "needed when lambda2 > 0");
  cl->add_option("-o,--out", cl_out, "cluster map JSON (default stdout)");
  cl_cfg.attach(cl);
  cl->callback([&] {
    action = [&] {
      const StunConfig cfg = cl_cfg.resolve();
      const MoeModel m = load_model(cl_model);
      const CalibrationSet data = load_optional_calibration(cl_calib);
      std::vector<std::size_t> targets;
      for (const auto& l : m.layers) targets.push_back(target_cluster_count(cfg.expert_sparsity, l.expert_count()));
      const ClusterMap map = cluster_experts(m, cl_calib.empty() ? nullptr : &data, cfg, targets);
      json j = to_json(map);
      if (m.meta.planted) j["recovery"] = cluster_recovery(map, m).agreement;
      write_json(cl_out, j);
    };
  });

  // prune-experts
  ConfigFlags pe_cfg;
  std::string pe_model, pe_calib, pe_clusters, pe_plan, pe_out;
  auto* pe = app.add_subcommand("prune-experts", "remove experts using a cluster map");
  pe->add_option("--model", pe_model)->required();
  pe->add_option("--clusters", pe_clusters, "cluster map from `cluster`")->required();
  pe->add_option("--calib", pe_calib, "needed by the on/combinatorial engines");
  pe->add_option("--plan", pe_plan, "write the pruning plan JSON here");
  pe->add_option("-o,--out", pe_out)->required();
  pe_cfg.attach(pe);
  pe->callback([&] {
    action = [&] {
      const StunConfig cfg = pe_cfg.resolve();
      const MoeModel m = load_model(pe_model);
      const ClusterMap map = cluster_map_from_json(read_json(pe_clusters));
      if (map.layers.size() != m.layers.size()) throw ArgumentError("cluster map does not match the model");
      PruningPlan plan;
      CostLedger ledger(m.layers.size());
      if (cfg.engine == ExpertEngine::o1) {
        plan = greedy_prune_o1(m, map, cfg.greedy);
      } else {
        const CalibrationSet data = load_calibration(pe_calib);
        std::vector<std::vector<std::size_t>> sets;
        for (std::size_t l = 0; l < m.layers.size(); ++l) {
          const std::size_t k = m.layers[l].expert_count() - map.layers[l].cluster_count();
          LayerProbe probe(m, l, data, &ledger);
          sets.push_back(cfg.engine == ExpertEngine::on
                             ? greedy_prune_on(probe, map.layers[l], k, cfg.greedy).pruned
                             : combinatorial_prune(probe, k, cfg.greedy.enumeration_cap).pruned);
        }
        plan = plan_from_pruned_sets(m, std::string(to_string(cfg.engine)), sets);
      }
      const MoeModel pruned = apply_expert_prune(m, plan);
      save_model(pruned, pe_out);
      if (!pe_plan.empty()) write_json(pe_plan, to_json(plan));
      std::cout << "expert sparsity " << plan.expert_sparsity << ", calibration forwards "
                << ledger.total_forwards() << "\n";
    };
  });

  // prune-weights
  ConfigFlags pw_cfg;
  double pw_sparsity = 0.5;
  std::string pw_model, pw_calib, pw_out;
  auto* pw = app.add_subcommand("prune-weights", "mask individual weights at a fixed sparsity");
  pw->add_option("--model", pw_model)->required();
  pw->add_option("--calib", pw_calib, "needed by wanda/owl");
  pw->add_option("--sparsity", pw_sparsity, "fraction of each prunable group")->capture_default_str();
  pw->add_option("-o,--out", pw_out)->required();
  pw_cfg.attach(pw);
  pw->callback([&] {
    action = [&] {
      const StunConfig cfg = pw_cfg.resolve();
      const MoeModel m = load_model(pw_model);
      MaskRequest req;
      req.method = cfg.method;
      req.sparsity = pw_sparsity;
      req.group = cfg.group;
      req.owl = cfg.owl;
      req.prunable = cfg.prunable;
      ActivationNorms norms;
      if (cfg.method != UnstructuredMethod::magnitude) norms = collect_activation_norms(m, load_calibration(pw_calib));
      const MaskResult r = compute_masks(m, cfg.method == UnstructuredMethod::magnitude ? nullptr : &norms, req);
      const MoeModel masked = apply_masks(m, r.mask);
      save_model(masked, pw_out);
      std::cout << "masked " << r.mask.pruned_count() << " weights, global sparsity "
                << *masked.meta.global_sparsity << "\n";
    };
  });

  // run
  ConfigFlags run_cfg;
  std::string run_model, run_calib, run_out, run_report;
  bool run_timing = false;
  auto* run = app.add_subcommand("run", "full pipeline: expert pruning, then weight masking");
  run->add_option("--model", run_model)->required();
  run->add_option("--calib", run_calib, "calibration file (or the config's calibration path)");
  run->add_option("-o,--out", run_out)->required();
  run->add_option("--report", run_report, "report JSON path");
  run->add_flag("--timing", run_timing, "include wall-clock timing in the JSON report");
  run_cfg.attach(run);
  run->callback([&] {
    action = [&] {
      const StunConfig cfg = run_cfg.resolve();
      const std::string calib = run_calib.empty() ? cfg.calibration_path : run_calib;
      const MoeModel m = load_model(run_model);
      const StunResult r = run_stun(m, load_optional_calibration(calib), cfg);
      save_model(r.model, run_out);
      if (!run_report.empty()) write_json(run_report, to_json(r.report, run_timing));
      std::cout << report_text(r.report);
    };
  });

  // sweep
  ConfigFlags sw_cfg;
  std::string sw_model, sw_calib, sw_heldout, sw_out;
  std::vector<double> sw_ratios{0.0, 0.25, 0.5, 0.75, 1.0};
  auto* sw = app.add_subcommand("sweep", "vary the structured share of a fixed total sparsity");
  sw->add_option("--model", sw_model)->required();
  sw->add_option("--calib", sw_calib)->required();
  sw->add_option("--heldout", sw_heldout, "evaluation tokens (default: --calib)");
  sw->add_option("--ratios", sw_ratios)->delimiter(',')->capture_default_str();
  sw->add_option("-o,--out", sw_out, "CSV output (default stdout)");
  sw_cfg.attach(sw);
  sw->callback([&] {
    action = [&] {
      const StunConfig cfg = sw_cfg.resolve();
      const MoeModel m = load_model(sw_model);
      const CalibrationSet data = load_calibration(sw_calib);
      const CalibrationSet held = sw_heldout.empty() ? data : load_calibration(sw_heldout);
      const auto rows = interpolation_sweep(m, data, held, cfg, sw_ratios);
      const std::string hash = hex64(fnv1a64(to_json(cfg).dump()));
      std::ostringstream csv;
      csv << "config_hash,seed,ratio,expert_sparsity_requested,expert_sparsity,unstructured_sparsity,"
             "total_sparsity,deviation,kurtosis\n";
      csv.precision(17);
      for (const auto& r : rows) {
        csv << hash << ',' << cfg.seed << ',' << r.ratio << ',' << r.expert_sparsity_requested << ','
            << r.expert_sparsity_achieved << ',' << r.unstructured_sparsity << ',' << r.total_sparsity_achieved
            << ',' << r.deviation << ',' << r.kurtosis << '\n';
      }
      write_text(sw_out, csv.str());
    };
  });

  // kurtosis
  std::string ku_model;
  auto* ku = app.add_subcommand("kurtosis", "moment statistics of nonzero expert weights");
  ku->add_option("model", ku_model)->required();
  ku->callback([&] {
    action = [&] {
      const KurtosisReport r = kurtosis_report(load_model(ku_model));
      json j = {{"aggregate", to_json(r.aggregate)}};
      for (const auto& [name, m] : r.per_matrix) j["per_matrix"][name] = to_json(m);
      std::cout << j.dump(2) << "\n";
    };
  });

  // subset-count
  std::size_t sc_n = 0, sc_k = 0;
  auto* sc = app.add_subcommand("subset-count", "exact C(n, k)");
  sc->add_option("n", sc_n)->required();
  sc->add_option("k", sc_k)->required();
  sc->callback([&] { action = [&] { std::cout << subset_count_string(sc_n, sc_k) << "\n"; }; });

  // oracle
  ConfigFlags or_cfg;
  std::string or_model, or_calib;
  std::size_t or_k = 1;
  auto* orc = app.add_subcommand("oracle", "greedy engines against the exhaustive optimum");
  orc->add_option("--model", or_model)->required();
  orc->add_option("--calib", or_calib)->required();
  orc->add_option("-k,--prune", or_k, "experts removed per layer")->capture_default_str();
  or_cfg.attach(orc);
  orc->callback([&] {
    action = [&] {
      const StunConfig cfg = or_cfg.resolve();
      const OracleTable t =
          greedy_vs_oracle(load_model(or_model), load_calibration(or_calib), or_k, cfg.greedy, cfg.lambda1, cfg.lambda2);
      json rows = json::array();
      for (const auto& r : t.rows) {
        json ratio;
        for (const auto& [e, v] : r.ratio) ratio[e] = std::isfinite(v) ? json(v) : json("inf");
        rows.push_back({{"layer", r.layer}, {"k", r.prune_count}, {"optimum", r.optimum}, {"loss", r.loss},
                        {"ratio", ratio}, {"abs_diff", r.abs_diff}, {"forwards", r.forwards}});
      }
      std::cout << rows.dump(2) << "\n";
    };
  });

  // compare
  ConfigFlags cmp_cfg;
  std::size_t cmp_seeds = 10;
  std::uint64_t cmp_first = 1;
  std::string cmp_out;
  SyntheticSpec cmp_spec;
  cmp_spec.clusters_per_layer = 6;
  cmp_spec.model_dim = 32;
  cmp_spec.hidden_dim = 64;
  cmp_spec.noise_sigma = 0.05;
  cmp_spec.flags.renormalize = true;
  auto* cmp = app.add_subcommand("compare", "paired STUN vs unstructured-only runs on synthetic models");
  cmp->add_option("--seeds", cmp_seeds)->capture_default_str();
  cmp->add_option("--first-seed", cmp_first)->capture_default_str();
  cmp->add_option("--experts", cmp_spec.experts)->capture_default_str();
  cmp->add_option("--clusters", cmp_spec.clusters_per_layer)->capture_default_str();
  cmp->add_option("--noise", cmp_spec.noise_sigma)->capture_default_str();
  cmp->add_option("-o,--out", cmp_out, "CSV rows (default stdout)");
  cmp_cfg.attach(cmp);
  cmp->callback([&] {
    action = [&] {
      const StunConfig cfg = cmp_cfg.resolve();
      auto factory = [&](std::uint64_t seed) {
        SeededRng rng(seed);
        Trial t;
        t.model = generate_synthetic(cmp_spec, rng);
        t.calibration = generate_calibration(cmp_spec.model_dim, 16, 8, rng);
        t.heldout = generate_calibration(cmp_spec.model_dim, 16, 8, rng);
        return t;
      };
      std::vector<std::uint64_t> seeds(cmp_seeds);
      std::iota(seeds.begin(), seeds.end(), cmp_first);
      const PairedSummary s = paired_comparison(factory, cfg, seeds);
      const std::string hash = hex64(fnv1a64(to_json(cfg).dump()));
      std::ostringstream csv;
      csv.precision(17);
      csv << "config_hash,seed,stun_deviation,baseline_deviation,stun_total_sparsity,baseline_total_sparsity,"
             "stun_forwards\n";
      for (const auto& r : s.rows) {
        csv << hash << ',' << r.seed << ',' << r.stun_deviation << ',' << r.baseline_deviation << ','
            << r.stun_total_sparsity << ',' << r.baseline_total_sparsity << ',' << r.stun_forwards << '\n';
      }
      write_text(cmp_out, csv.str());
      std::cerr << "win rate " << s.win_rate << ", mean deviation " << s.mean_stun_deviation << " vs "
                << s.mean_baseline_deviation << "\n";
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kBadConfig;
  }
  try {
    action();
    return kOk;
  } catch (const InfeasibleBudgetError& e) {
    std::cerr << "infeasible: " << e.what() << "\n";
    return kInfeasible;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kIo;
  } catch (const FormatError& e) {
    std::cerr << "bad file: " << e.what() << "\n";
    return kIo;
  } catch (const ChecksumError& e) {
    std::cerr << "corrupt file: " << e.what() << "\n";
    return kIo;
  } catch (const EnumerationCapError& e) {
    std::cerr << "bad configuration: " << e.what() << " (C(n,k) = " << e.count() << ")\n";
    return kBadConfig;
  } catch (const ArgumentError& e) {
    std::cerr << "bad configuration: " << e.what() << "\n";
    return kBadConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
}
