#include "stun/moe_model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "stun/error.hpp"

namespace stun {

std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::silu: return "silu";
  }
  return "relu";
}

Activation activation_from_string(std::string_view name) {
  if (name == "relu") return Activation::relu;
  if (name == "silu") return Activation::silu;
  throw ArgumentError("unknown activation '" + std::string(name) + "'");
}

double activate(Activation a, double v) {
  switch (a) {
    case Activation::relu: return v > 0.0 ? v : 0.0;
    case Activation::silu: return v / (1.0 + std::exp(-v));
  }
  return v;
}

Vector ExpertParams::hidden(std::span<const double> x) const {
  Vector h = matvec(w_in, x);
  for (double& v : h) v = activate(activation, v);
  return h;
}

Vector ExpertParams::apply(std::span<const double> x) const { return matvec(w_out, hidden(x)); }

std::size_t MoeLayer::parameter_count() const noexcept {
  return router.size() + expert_parameter_count();
}

std::size_t MoeLayer::expert_parameter_count() const noexcept {
  std::size_t total = 0;
  for (const auto& e : experts) total += e.parameter_count();
  return total;
}

std::size_t expert_footprint(const MoeLayer& layer, std::size_t expert) {
  return layer.experts.at(expert).parameter_count() + layer.router.cols();
}

void MoeLayer::validate(std::size_t model_dim) const {
  if (experts.empty()) throw ArgumentError("layer has no experts");
  if (router.rows() != experts.size()) {
    throw ShapeError("router has " + std::to_string(router.rows()) + " rows for " +
                     std::to_string(experts.size()) + " experts");
  }
  if (router.cols() != model_dim) throw ShapeError("router width != model_dim");
  if (top_k < 1 || top_k > experts.size()) {
    throw ArgumentError("top_k " + std::to_string(top_k) + " outside [1, " +
                        std::to_string(experts.size()) + "]");
  }
  for (const auto& e : experts) {
    if (e.w_in.cols() != model_dim || e.w_out.rows() != model_dim ||
        e.w_out.cols() != e.w_in.rows()) {
      throw ShapeError("expert matrices inconsistent with model_dim");
    }
  }
}

std::size_t MoeModel::parameter_count() const noexcept {
  std::size_t total = 0;
  for (const auto& l : layers) total += l.parameter_count();
  return total;
}

std::size_t MoeModel::expert_parameter_count() const noexcept {
  std::size_t total = 0;
  for (const auto& l : layers) total += l.expert_parameter_count();
  return total;
}

void MoeModel::validate() const {
  if (layers.empty()) throw ArgumentError("model has no layers");
  if (model_dim == 0) throw ArgumentError("model_dim must be positive");
  for (const auto& l : layers) l.validate(model_dim);
  if (meta.planted) {
    if (meta.planted->size() != layers.size()) throw ArgumentError("planted record layer count");
    for (std::size_t m = 0; m < layers.size(); ++m) {
      if ((*meta.planted)[m].size() != layers[m].expert_count()) {
        throw ArgumentError("planted record expert count");
      }
    }
  }
}

std::string router_name(std::size_t layer) {
  return "layer" + std::to_string(layer) + ".router";
}

std::string tensor_name(std::size_t layer, std::size_t expert, ExpertMatrix which) {
  return "layer" + std::to_string(layer) + ".expert" + std::to_string(expert) +
         (which == ExpertMatrix::w_in ? ".w_in" : ".w_out");
}

std::size_t CalibrationSet::token_count() const noexcept {
  std::size_t total = 0;
  for (const auto& s : samples) total += s.rows();
  return total;
}

std::vector<Vector> CalibrationSet::tokens() const {
  std::vector<Vector> out;
  out.reserve(token_count());
  for (const auto& s : samples) {
    for (std::size_t r = 0; r < s.rows(); ++r) {
      auto row = s.row(r);
      out.emplace_back(row.begin(), row.end());
    }
  }
  return out;
}

Routing route(const MoeLayer& layer, std::span<const double> x,
              std::span<const std::uint8_t> removed) {
  const std::size_t n = layer.expert_count();
  if (!removed.empty() && removed.size() != n) throw ShapeError("removed mask length != experts");
  const Vector logits = matvec(layer.router, x);

  std::vector<std::size_t> alive;
  alive.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (removed.empty() || removed[i] == 0) alive.push_back(i);
  }
  if (alive.empty()) throw ArgumentError("cannot route with every expert removed");

  Vector alive_logits(alive.size());
  for (std::size_t a = 0; a < alive.size(); ++a) alive_logits[a] = logits[alive[a]];
  const Vector probs = softmax(alive_logits);
  const std::size_t k = std::min(layer.top_k, alive.size());
  const auto picked = topk(probs, k);

  Routing r;
  r.coefficients.assign(n, 0.0);
  for (std::size_t a = 0; a < alive.size(); ++a) r.coefficients[alive[a]] = probs[a];
  r.selected.reserve(k);
  for (std::size_t p : picked) r.selected.push_back(alive[p]);
  return r;
}

Vector forward_layer(const MoeLayer& layer, std::span<const double> x, bool renormalize,
                     std::span<const std::uint8_t> removed) {
  if (x.size() != layer.router.cols()) {
    throw ShapeError("input length " + std::to_string(x.size()) + " != model_dim " +
                     std::to_string(layer.router.cols()));
  }
  const Routing r = route(layer, x, removed);
  double norm = 1.0;
  if (renormalize) {
    norm = 0.0;
    for (std::size_t i : r.selected) norm += r.coefficients[i];
  }
  Vector out(x.size(), 0.0);
  for (std::size_t i : r.selected) {
    const Vector e = layer.experts[i].apply(x);
    const double c = r.coefficients[i] / norm;
    for (std::size_t d = 0; d < out.size(); ++d) out[d] += c * e[d];
  }
  return out;
}

Vector forward_model(const MoeModel& model, std::span<const double> x) {
  if (x.size() != model.model_dim) throw ShapeError("input length != model_dim");
  Vector y(x.begin(), x.end());
  for (const auto& layer : model.layers) {
    Vector out = forward_layer(layer, y, model.meta.flags.renormalize);
    if (model.meta.flags.residual) {
      for (std::size_t d = 0; d < y.size(); ++d) y[d] += out[d];
    } else {
      y = std::move(out);
    }
  }
  return y;
}

std::vector<std::vector<Vector>> layer_inputs(const MoeModel& model,
                                              std::span<const Vector> tokens) {
  std::vector<std::vector<Vector>> inputs(model.layers.size());
  for (auto& per_layer : inputs) per_layer.reserve(tokens.size());
  for (const auto& token : tokens) {
    if (token.size() != model.model_dim) throw ShapeError("token length != model_dim");
    Vector y = token;
    for (std::size_t m = 0; m < model.layers.size(); ++m) {
      inputs[m].push_back(y);
      if (m + 1 == model.layers.size()) break;
      Vector out = forward_layer(model.layers[m], y, model.meta.flags.renormalize);
      if (model.meta.flags.residual) {
        for (std::size_t d = 0; d < y.size(); ++d) y[d] += out[d];
      } else {
        y = std::move(out);
      }
    }
  }
  return inputs;
}

CoactivationStats collect_coactivations(const MoeModel& model, const CalibrationSet& data) {
  if (data.token_count() == 0) throw ArgumentError("empty calibration set");
  const auto tokens = data.tokens();
  const auto inputs = layer_inputs(model, tokens);

  CoactivationStats stats;
  stats.token_count = tokens.size();
  for (std::size_t m = 0; m < model.layers.size(); ++m) {
    const auto& layer = model.layers[m];
    const std::size_t n = layer.expert_count();
    Tensor2 counts(n, n);
    std::uint64_t pairs = 0;
    if (layer.top_k < 2) stats.degenerate = true;
    for (const auto& x : inputs[m]) {
      const Routing r = route(layer, x);
      for (std::size_t a = 0; a < r.selected.size(); ++a) {
        for (std::size_t b = a + 1; b < r.selected.size(); ++b) {
          counts(r.selected[a], r.selected[b]) += 1.0;
          counts(r.selected[b], r.selected[a]) += 1.0;
          ++pairs;
        }
      }
    }
    if (pairs > 0) {
      for (double& v : counts.values()) v /= static_cast<double>(pairs);
    }
    stats.per_layer.push_back(std::move(counts));
  }
  return stats;
}

}  // namespace stun
