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

#pragma once

#include <set>
#include <unordered_map>
#include <vector>

#include "magdrop/nn.hpp"
#include "magdrop/tensor.hpp"

namespace magdrop::reg {

/// Momentum-adaptive dropout state shared across the layers of one
/// training run. Momentum buffers are keyed by layer index.
struct MagDropState {
  double p_base = 0.3;
  double beta = 0.9;
  double tau = 0.1;
  double clamp_max = 0.6;
  std::uint64_t rng_seed = 0;

  std::unordered_map<std::size_t, Tensor> momentum;
  std::unordered_map<std::size_t, Rng> mask_rngs;
  // mean applied rate per step, per layer
  std::unordered_map<std::size_t, std::vector<double>> rate_trace;

  Rng& rng_for(std::size_t layer) {
    auto it = mask_rngs.find(layer);
    if (it == mask_rngs.end()) {
      it = mask_rngs.emplace(layer, Rng::seeded(rng_seed, 0x2000 + layer))
               .first;
    }
    return it->second;
  }
};

struct DropoutDecision {
  Eigen::VectorXd per_sample_rate;  // post-clamp, one entry per batch row
  Tensor mask;                      // {0,1}, activation-shaped
  double scale = 1.0;               // 1 - mean(per_sample_rate)
};

/// EMA update m <- beta*m + (1-beta)*grad; the first call seeds m = grad.
/// Returns a copy of the new momentum.
Tensor magdrop_update_momentum(MagDropState& state, std::size_t layer,
                               const Tensor& grad);

/// Per-sample dropout rate:
///   p_i = p_base * (|m_i| / mean_j |m_j|) * sigmoid(|g_i - m_i| / tau),
/// clamped to [0, clamp_max]. Norms are L2 over flattened non-batch dims.
/// A zero batch-mean momentum norm yields rate 0.
Eigen::VectorXd magdrop_rate(const MagDropState& state, const Tensor& grad,
                             const Tensor& momentum);

/// Bernoulli mask at the per-sample rates, survivors divided by
/// 1 - mean(rate). Records the step's mean rate in rate_trace.
std::pair<Tensor, DropoutDecision> magdrop_apply(MagDropState& state,
                                                 std::size_t layer,
                                                 const Tensor& activation,
                                                 const Eigen::VectorXd& rate);

/// Standard inverted dropout: keep with probability 1-p, scale by 1/(1-p).
Tensor fixed_dropout_apply(const Tensor& activation, double p_fixed, Rng& rng,
                           Tensor* mask_out = nullptr);

/// Gradient-norm-proportional rescaling, an approximation of adaptive
/// gradient regularization: each parameter gradient is scaled by
/// (1 + lambda * norm / mean_norm). All-zero gradients pass unchanged.
void agr_rescale(nn::Gradients& grads, double lambda);

/// ActivationHook running MAGDrop on the chosen layers with one-step-stale
/// activation gradients. The harness calls observe_gradients() after each
/// backward pass; until a gradient exists for a layer (or when the batch
/// size changes), the hook is an identity.
class MagDropHook : public nn::ActivationHook {
 public:
  MagDropHook(MagDropState state, std::vector<std::size_t> layers)
      : state_(std::move(state)),
        layers_(layers.begin(), layers.end()) {}

  bool hooks_layer(std::size_t layer) const override {
    return layers_.count(layer) > 0;
  }

  Tensor apply(std::size_t layer, const Tensor& activation) override;
  Tensor backprop(std::size_t layer, const Tensor& grad) override;

  /// Capture last_activation_grad from the hooked layers for use as the
  /// stale gradient at the next step.
  void observe_gradients(const std::vector<nn::LayerState>& states);

  MagDropState& state() { return state_; }
  const MagDropState& state() const { return state_; }

 private:
  MagDropState state_;
  std::set<std::size_t> layers_;
  std::unordered_map<std::size_t, Tensor> stale_grads_;
  std::unordered_map<std::size_t, DropoutDecision> decisions_;
  std::unordered_map<std::size_t, bool> applied_;
};

/// Fixed-rate dropout as an ActivationHook.
class FixedDropoutHook : public nn::ActivationHook {
 public:
  FixedDropoutHook(double p_fixed, std::uint64_t seed,
                   std::vector<std::size_t> layers);

  bool hooks_layer(std::size_t layer) const override {
    return layers_.count(layer) > 0;
  }
  Tensor apply(std::size_t layer, const Tensor& activation) override;
  Tensor backprop(std::size_t layer, const Tensor& grad) override;

  double rate() const { return p_fixed_; }

 private:
  double p_fixed_;
  std::uint64_t seed_;
  std::unordered_map<std::size_t, Rng> rngs_;
  std::unordered_map<std::size_t, Tensor> masks_;
  std::set<std::size_t> layers_;
};

}  // namespace magdrop::reg
