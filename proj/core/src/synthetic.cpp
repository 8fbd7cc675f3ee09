#include "stun/synthetic.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "stun/error.hpp"

namespace stun {
namespace {

Tensor2 gaussian(std::size_t rows, std::size_t cols, double stddev, SeededRng& rng) {
  Tensor2 t(rows, cols);
  for (double& v : t.values()) v = rng.normal(0.0, stddev);
  return t;
}

double rms(std::span<const double> v) {
  return v.empty() ? 0.0 : l2_norm(v) / std::sqrt(static_cast<double>(v.size()));
}

void add_noise(std::span<double> dst, std::span<const double> prototype, double sigma,
               SeededRng& rng) {
  const double stddev = sigma * rms(prototype);
  for (std::size_t i = 0; i < dst.size(); ++i) {
    dst[i] = prototype[i] + (stddev > 0.0 ? rng.normal(0.0, stddev) : 0.0);
  }
}

}  // namespace

MoeModel generate_synthetic(const SyntheticSpec& shape, SeededRng& rng) {
  if (shape.layers == 0 || shape.experts == 0 || shape.model_dim == 0 || shape.hidden_dim == 0) {
    throw ArgumentError("synthetic model dimensions must be positive");
  }
  if (shape.top_k < 1 || shape.top_k > shape.experts) throw ArgumentError("top_k outside [1, n]");
  if (shape.clusters_per_layer < 1 || shape.clusters_per_layer > shape.experts) {
    throw ArgumentError("clusters_per_layer outside [1, n]");
  }
  if (!(shape.noise_sigma >= 0.0) || !std::isfinite(shape.noise_sigma)) {
    throw ArgumentError("noise_sigma must be finite and >= 0");
  }

  const double router_std = shape.router_scale / std::sqrt(static_cast<double>(shape.model_dim));
  const double in_std = 1.0 / std::sqrt(static_cast<double>(shape.model_dim));
  const double out_std = 1.0 / std::sqrt(static_cast<double>(shape.hidden_dim));

  MoeModel model;
  model.model_dim = shape.model_dim;
  model.meta.name = "synthetic";
  model.meta.seed = rng.seed();
  model.meta.flags = shape.flags;
  std::vector<std::vector<std::size_t>> planted;

  for (std::size_t m = 0; m < shape.layers; ++m) {
    const std::size_t c = shape.clusters_per_layer;
    std::vector<ExpertParams> protos;
    Tensor2 proto_router = gaussian(c, shape.model_dim, router_std, rng);
    for (std::size_t p = 0; p < c; ++p) {
      ExpertParams e;
      e.w_in = gaussian(shape.hidden_dim, shape.model_dim, in_std, rng);
      e.w_out = gaussian(shape.model_dim, shape.hidden_dim, out_std, rng);
      e.activation = shape.activation;
      protos.push_back(std::move(e));
    }

    // Balanced labels (i mod c) in a random order so clusters are not
    // contiguous index ranges.
    std::vector<std::size_t> labels(shape.experts);
    for (std::size_t i = 0; i < shape.experts; ++i) labels[i] = i % c;
    rng.shuffle(labels);

    MoeLayer layer;
    layer.top_k = shape.top_k;
    layer.router = Tensor2(shape.experts, shape.model_dim);
    for (std::size_t i = 0; i < shape.experts; ++i) {
      const std::size_t p = labels[i];
      add_noise(layer.router.row(i), proto_router.row(p), shape.noise_sigma, rng);
      ExpertParams e;
      e.activation = shape.activation;
      e.w_in = Tensor2(shape.hidden_dim, shape.model_dim);
      e.w_out = Tensor2(shape.model_dim, shape.hidden_dim);
      add_noise(e.w_in.values(), protos[p].w_in.values(), shape.noise_sigma, rng);
      add_noise(e.w_out.values(), protos[p].w_out.values(), shape.noise_sigma, rng);
      round_to_float(e.w_in);
      round_to_float(e.w_out);
      layer.experts.push_back(std::move(e));
    }
    round_to_float(layer.router);
    model.layers.push_back(std::move(layer));
    planted.push_back(std::move(labels));
  }
  model.meta.planted = std::move(planted);
  return model;
}

CalibrationSet generate_calibration(std::size_t model_dim, std::size_t count,
                                    std::size_t seq_len, SeededRng& rng) {
  if (model_dim == 0 || seq_len == 0) throw ArgumentError("calibration dims must be positive");
  CalibrationSet set;
  set.samples.reserve(count);
  for (std::size_t s = 0; s < count; ++s) {
    Tensor2 t(seq_len, model_dim);
    for (double& v : t.values()) v = static_cast<double>(static_cast<float>(rng.normal()));
    set.samples.push_back(std::move(t));
  }
  return set;
}

}  // namespace stun
