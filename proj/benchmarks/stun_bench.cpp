#include <benchmark/benchmark.h>

#include "stun/clustering.hpp"
#include "stun/expert_pruning.hpp"
#include "stun/model_io.hpp"
#include "stun/pipeline.hpp"
#include "stun/synthetic.hpp"
#include "stun/unstructured.hpp"

namespace {

using namespace stun;

struct Fixture {
  MoeModel model;
  CalibrationSet calib;
};

Fixture make(std::size_t experts, std::size_t dim) {
  SeededRng rng(42);
  SyntheticSpec sp;
  sp.layers = 2;
  sp.experts = experts;
  sp.model_dim = dim;
  sp.hidden_dim = 2 * dim;
  sp.clusters_per_layer = experts * 3 / 4;
  sp.noise_sigma = 0.05;
  Fixture f{generate_synthetic(sp, rng), {}};
  f.calib = generate_calibration(dim, 16, 8, rng);
  return f;
}

void BM_ForwardLayer(benchmark::State& state) {
  const Fixture f = make(static_cast<std::size_t>(state.range(0)), 64);
  const auto tokens = f.calib.tokens();
  std::size_t i = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(forward_layer(f.model.layers[0], tokens[i++ % tokens.size()]));
  }
}
BENCHMARK(BM_ForwardLayer)->Arg(8)->Arg(32)->Arg(128);

void BM_Agglomerative(benchmark::State& state) {
  const Fixture f = make(static_cast<std::size_t>(state.range(0)), 32);
  const DistanceMatrix d = behavioral_distance(f.model.layers[0], 0, nullptr, 1.0, 0.0);
  for (auto _ : state) benchmark::DoNotOptimize(threshold_search(d, d.d.rows() / 2));
}
BENCHMARK(BM_Agglomerative)->Arg(8)->Arg(32)->Arg(128);

void BM_Dsatur(benchmark::State& state) {
  const Fixture f = make(static_cast<std::size_t>(state.range(0)), 32);
  const DistanceMatrix d = behavioral_distance(f.model.layers[0], 0, nullptr, 1.0, 0.0);
  for (auto _ : state) benchmark::DoNotOptimize(dsatur_threshold_search(d, d.d.rows() / 2));
}
BENCHMARK(BM_Dsatur)->Arg(8)->Arg(32)->Arg(128);

// The three expert-pruning engines on the same layer: O(1), O(n), C(n, k).
void BM_EngineO1(benchmark::State& state) {
  const Fixture f = make(static_cast<std::size_t>(state.range(0)), 32);
  const std::size_t n = f.model.layers[0].expert_count();
  StunConfig cfg;
  const ClusterMap map = cluster_experts(f.model, nullptr, cfg, {n - 2, n - 2});
  for (auto _ : state) benchmark::DoNotOptimize(greedy_prune_o1(f.model, map, GreedyConfig{}));
}
BENCHMARK(BM_EngineO1)->Arg(8)->Arg(12)->Arg(16);

void BM_EngineOn(benchmark::State& state) {
  const Fixture f = make(static_cast<std::size_t>(state.range(0)), 32);
  const std::size_t n = f.model.layers[0].expert_count();
  StunConfig cfg;
  const ClusterMap map = cluster_experts(f.model, nullptr, cfg, {n - 2, n - 2});
  LayerProbe probe(f.model, 0, f.calib);
  for (auto _ : state) benchmark::DoNotOptimize(greedy_prune_on(probe, map.layers[0], 2, GreedyConfig{}));
}
BENCHMARK(BM_EngineOn)->Arg(8)->Arg(12)->Arg(16);

void BM_EngineCombinatorial(benchmark::State& state) {
  const Fixture f = make(static_cast<std::size_t>(state.range(0)), 32);
  LayerProbe probe(f.model, 0, f.calib);
  for (auto _ : state) benchmark::DoNotOptimize(combinatorial_prune(probe, 2, 1000000));
}
BENCHMARK(BM_EngineCombinatorial)->Arg(8)->Arg(12)->Arg(16);

void BM_WandaMask(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  SeededRng rng(1);
  std::vector<double> v(n * n);
  for (double& x : v) x = rng.normal();
  const Tensor2 w(n, n, v);
  Vector norms(n);
  for (double& x : norms) x = rng.uniform();
  for (auto _ : state) benchmark::DoNotOptimize(wanda_mask(w, norms, 0.5));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n));
}
BENCHMARK(BM_WandaMask)->Arg(64)->Arg(256);

void BM_EncodeDecode(benchmark::State& state) {
  const Fixture f = make(16, 64);
  for (auto _ : state) benchmark::DoNotOptimize(decode_model(encode_model(f.model)));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(f.model.parameter_count()));
}
BENCHMARK(BM_EncodeDecode);

void BM_RunStun(benchmark::State& state) {
  const Fixture f = make(8, 32);
  StunConfig cfg;
  cfg.engine = static_cast<ExpertEngine>(state.range(0));
  cfg.expert_sparsity = 0.25;
  for (auto _ : state) benchmark::DoNotOptimize(run_stun(f.model, f.calib, cfg));
}
BENCHMARK(BM_RunStun)->Arg(0)->Arg(1)->Arg(2)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
