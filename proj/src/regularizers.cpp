// Copyright 2026 The magdrop-lab Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "magdrop/regularizers.hpp"

#include <algorithm>
#include <cmath>

namespace magdrop::reg {

Tensor magdrop_update_momentum(MagDropState& state, std::size_t layer,
                               const Tensor& grad) {
  auto it = state.momentum.find(layer);
  if (it == state.momentum.end()) {
    state.momentum.emplace(layer, grad);
    return grad;
  }
  if (!it->second.same_shape(grad)) {
    throw StateError("magdrop momentum shape changed for layer " +
                     std::to_string(layer));
  }
  it->second.array() =
      state.beta * it->second.array() + (1.0 - state.beta) * grad.array();
  return it->second;
}

Eigen::VectorXd magdrop_rate(const MagDropState& state, const Tensor& grad,
                             const Tensor& momentum) {
  if (state.tau <= 0.0) throw ConfigError("magdrop tau must be positive");
  if (!grad.same_shape(momentum)) {
    throw StateError("magdrop_rate: grad/momentum shape mismatch");
  }
  const Eigen::VectorXd mom_norm = per_sample_norms(momentum);
  const double mean_norm = mom_norm.mean();
  const Index n = mom_norm.size();
  if (mean_norm == 0.0) return Eigen::VectorXd::Zero(n);

  Tensor diff = grad;
  diff.array() -= momentum.array();
  const Eigen::VectorXd diff_norm = per_sample_norms(diff);

  Eigen::VectorXd rate(n);
  for (Index i = 0; i < n; ++i) {
    const double sig = 1.0 / (1.0 + std::exp(-diff_norm[i] / state.tau));
    const double raw = state.p_base * (mom_norm[i] / mean_norm) * sig;
    rate[i] = std::clamp(raw, 0.0, state.clamp_max);
  }
  return rate;
}

std::pair<Tensor, DropoutDecision> magdrop_apply(MagDropState& state,
                                                 std::size_t layer,
                                                 const Tensor& activation,
                                                 const Eigen::VectorXd& rate) {
  if (rate.size() != activation.batch()) {
    throw StateError("magdrop_apply: rate size != batch");
  }
  DropoutDecision dec;
  dec.per_sample_rate = rate;
  const double mean_rate = rate.mean();
  if (mean_rate >= 1.0) {
    throw StateError("magdrop_apply: mean rate >= 1 escaped the clamp");
  }
  dec.scale = 1.0 - mean_rate;
  dec.mask = Tensor(activation.shape());
  Tensor out = activation;
  Rng& rng = state.rng_for(layer);
  const Index features = activation.features();
  for (Index i = 0; i < activation.batch(); ++i) {
    const double keep_p = 1.0 - rate[i];
    for (Index j = 0; j < features; ++j) {
      const Index k = i * features + j;
      const bool keep = rng.uniform() < keep_p;
      dec.mask[k] = keep ? 1.0 : 0.0;
      out[k] = keep ? activation[k] / dec.scale : 0.0;
    }
  }
  state.rate_trace[layer].push_back(mean_rate);
  return {std::move(out), std::move(dec)};
}

Tensor fixed_dropout_apply(const Tensor& activation, double p_fixed, Rng& rng,
                           Tensor* mask_out) {
  if (p_fixed < 0.0 || p_fixed >= 1.0) {
    throw ConfigError("fixed dropout rate must lie in [0,1)");
  }
  const double keep_p = 1.0 - p_fixed;
  Tensor out = activation;
  Tensor mask(activation.shape());
  for (Index k = 0; k < activation.numel(); ++k) {
    const bool keep = rng.uniform() < keep_p;
    mask[k] = keep ? 1.0 : 0.0;
    out[k] = keep ? activation[k] / keep_p : 0.0;
  }
  if (mask_out != nullptr) *mask_out = std::move(mask);
  return out;
}

void agr_rescale(nn::Gradients& grads, double lambda) {
  if (lambda == 0.0) return;
  std::vector<Tensor*> tensors;
  for (auto& g : grads.weight_grads) {
    if (!g.empty()) tensors.push_back(&g);
  }
  for (auto& g : grads.bias_grads) {
    if (!g.empty()) tensors.push_back(&g);
  }
  if (tensors.empty()) return;
  Eigen::VectorXd norms(static_cast<Index>(tensors.size()));
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    norms[static_cast<Index>(i)] = tensors[i]->array().matrix().norm();
  }
  const double mean_norm = norms.mean();
  if (mean_norm == 0.0) return;
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const double factor = 1.0 + lambda * norms[static_cast<Index>(i)] / mean_norm;
    tensors[i]->array() *= factor;
  }
}

Tensor MagDropHook::apply(std::size_t layer, const Tensor& activation) {
  applied_[layer] = false;
  const auto it = stale_grads_.find(layer);
  if (it == stale_grads_.end()) {
    return activation;  // no gradient yet: first batch is a no-op
  }
  if (it->second.batch() != activation.batch()) {
    return activation;  // partial batch: skip rather than resize momentum
  }
  const Tensor momentum =
      magdrop_update_momentum(state_, layer, it->second);
  const Eigen::VectorXd rate = magdrop_rate(state_, it->second, momentum);
  auto [out, dec] = magdrop_apply(state_, layer, activation, rate);
  decisions_[layer] = std::move(dec);
  applied_[layer] = true;
  return out;
}

Tensor MagDropHook::backprop(std::size_t layer, const Tensor& grad) {
  const auto it = applied_.find(layer);
  if (it == applied_.end() || !it->second) return grad;
  const DropoutDecision& dec = decisions_.at(layer);
  Tensor out = grad;
  out.array() = grad.array() * dec.mask.array() / dec.scale;
  return out;
}

void MagDropHook::observe_gradients(const std::vector<nn::LayerState>& states) {
  for (std::size_t layer : layers_) {
    if (layer < states.size() && states[layer].last_activation_grad) {
      stale_grads_[layer] = *states[layer].last_activation_grad;
    }
  }
}

FixedDropoutHook::FixedDropoutHook(double p_fixed, std::uint64_t seed,
                                   std::vector<std::size_t> layers)
    : p_fixed_(p_fixed),
      seed_(seed),
      layers_(layers.begin(), layers.end()) {
  if (p_fixed < 0.0 || p_fixed >= 1.0) {
    throw ConfigError("fixed dropout rate must lie in [0,1)");
  }
}

Tensor FixedDropoutHook::apply(std::size_t layer, const Tensor& activation) {
  auto it = rngs_.find(layer);
  if (it == rngs_.end()) {
    it = rngs_.emplace(layer, Rng::seeded(seed_, 0x3000 + layer)).first;
  }
  Tensor mask;
  Tensor out = fixed_dropout_apply(activation, p_fixed_, it->second, &mask);
  masks_[layer] = std::move(mask);
  return out;
}

Tensor FixedDropoutHook::backprop(std::size_t layer, const Tensor& grad) {
  const auto it = masks_.find(layer);
  if (it == masks_.end()) return grad;
  Tensor out = grad;
  out.array() = grad.array() * it->second.array() / (1.0 - p_fixed_);
  return out;
}

}  // namespace magdrop::reg
