#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "stun/tensor.hpp"

namespace stun {

enum class Activation { relu, silu };

std::string_view to_string(Activation a);
Activation activation_from_string(std::string_view name);

double activate(Activation a, double v);

// One expert MLP: w_out * act(w_in * x).
struct ExpertParams {
  Tensor2 w_in;   // hidden_dim x model_dim
  Tensor2 w_out;  // model_dim x hidden_dim
  Activation activation = Activation::relu;

  std::size_t hidden_dim() const noexcept { return w_in.rows(); }
  std::size_t parameter_count() const noexcept { return w_in.size() + w_out.size(); }

  Vector apply(std::span<const double> x) const;
  // act(w_in * x), the input seen by w_out.
  Vector hidden(std::span<const double> x) const;

  friend bool operator==(const ExpertParams&, const ExpertParams&) = default;
};

struct MoeLayer {
  Tensor2 router;  // expert_count x model_dim, row i routes to experts[i]
  std::vector<ExpertParams> experts;
  std::size_t top_k = 1;

  std::size_t expert_count() const noexcept { return experts.size(); }
  std::size_t parameter_count() const noexcept;
  std::size_t expert_parameter_count() const noexcept;

  // Throws ShapeError/ArgumentError when the layer is inconsistent.
  void validate(std::size_t model_dim) const;

  friend bool operator==(const MoeLayer&, const MoeLayer&) = default;
};

// Parameters removed with expert i: w_in, w_out and its router row.
std::size_t expert_footprint(const MoeLayer& layer, std::size_t expert);

struct ForwardFlags {
  bool renormalize = false;  // renormalize top-k coefficients to sum 1
  bool residual = true;      // y_m = y_{m-1} + layer_m(y_{m-1})

  friend bool operator==(const ForwardFlags&, const ForwardFlags&) = default;
};

struct ModelMetadata {
  std::string name;
  std::uint64_t seed = 0;
  ForwardFlags flags;
  // Per layer: expert index -> planted cluster label.
  std::optional<std::vector<std::vector<std::size_t>>> planted;
  // Parameter count of the unpruned ancestor; set by the first pruning step.
  std::optional<std::size_t> original_parameters;
  std::optional<double> expert_sparsity;
  std::optional<double> global_sparsity;

  friend bool operator==(const ModelMetadata&, const ModelMetadata&) = default;
};

struct MoeModel {
  std::size_t model_dim = 0;
  std::vector<MoeLayer> layers;
  ModelMetadata meta;
  // Unstructured masks keyed by tensor name (see tensor_name()).
  std::map<std::string, BitMask> masks;

  std::size_t parameter_count() const noexcept;
  std::size_t expert_parameter_count() const noexcept;
  std::size_t baseline_parameters() const noexcept {
    return meta.original_parameters.value_or(parameter_count());
  }

  void validate() const;

  friend bool operator==(const MoeModel&, const MoeModel&) = default;
};

enum class ExpertMatrix { w_in, w_out };

// Canonical tensor names used by the container format and mask maps.
std::string router_name(std::size_t layer);
std::string tensor_name(std::size_t layer, std::size_t expert, ExpertMatrix which);

// Inference-only inputs: each sample is a seq_len x model_dim sequence.
struct CalibrationSet {
  std::vector<Tensor2> samples;

  std::size_t count() const noexcept { return samples.size(); }
  std::size_t token_count() const noexcept;
  std::size_t model_dim() const noexcept { return samples.empty() ? 0 : samples.front().cols(); }
  // Flattened token list in sample-major order.
  std::vector<Vector> tokens() const;
};

// Routing decision for one token.
struct Routing {
  Vector coefficients;               // softmax over the active experts, full length n
  std::vector<std::size_t> selected;  // top-k indices into the layer, best first
};

// removed[i] != 0 drops expert i: its router row leaves the softmax and the
// effective top-k is min(top_k, survivors). An empty span keeps everyone.
Routing route(const MoeLayer& layer, std::span<const double> x,
              std::span<const std::uint8_t> removed = {});

Vector forward_layer(const MoeLayer& layer, std::span<const double> x, bool renormalize = false,
                     std::span<const std::uint8_t> removed = {});

Vector forward_model(const MoeModel& model, std::span<const double> x);

// Inputs reaching every layer for each token: result[layer][token].
std::vector<std::vector<Vector>> layer_inputs(const MoeModel& model,
                                              std::span<const Vector> tokens);

struct CoactivationStats {
  std::vector<Tensor2> per_layer;  // symmetric, zero diagonal
  std::size_t token_count = 0;
  // Set when some layer has top_k < 2 and therefore no pairs.
  bool degenerate = false;
};

// Counts every unordered pair in each token's top-k set, per layer, then
// divides by that layer's total pair count. Throws ArgumentError on empty data.
CoactivationStats collect_coactivations(const MoeModel& model, const CalibrationSet& data);

}  // namespace stun
