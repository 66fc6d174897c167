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

#include <optional>
#include <variant>
#include <vector>

#include "magdrop/tensor.hpp"

namespace magdrop::nn {

struct Dense {
  Index in = 0;
  Index out = 0;
};
struct ReLU {};
struct Conv2D {
  Index in_ch = 0;
  Index out_ch = 0;
  Index kernel = 0;
  Index stride = 1;
};
struct Flatten {};
struct SoftmaxCrossEntropy {};

using LayerSpec = std::variant<Dense, ReLU, Conv2D, Flatten, SoftmaxCrossEntropy>;

/// Architecture description. input_shape excludes the batch dimension:
/// {features} for MLP input, {channels, height, width} for image input.
struct ModelSpec {
  std::vector<LayerSpec> layers;
  std::vector<Index> input_shape;
  std::uint64_t seed = 0;
};

/// Throws ConfigError unless adjacent layer shapes are compatible and
/// exactly one loss head sits last. Returns the logits dimension.
Index validate(const ModelSpec& model);

/// Per-layer parameters and caches. Parameterless layers keep empty
/// weight/bias tensors.
struct LayerState {
  Tensor weights;
  Tensor bias;
  Tensor last_input;            // cache for backward
  Tensor last_activation;       // layer output a_l, pre any hook transform
  std::optional<Tensor> last_activation_grad;  // dL/da_l, set by backward
};

/// Kaiming-uniform fan-in initialization, seeded from model.seed.
std::vector<LayerState> init_states(const ModelSpec& model);

/// Per-layer activation transform applied during training (dropout family).
/// apply() sees the layer output; backprop() must invert the transform's
/// Jacobian action for the same step.
class ActivationHook {
 public:
  virtual ~ActivationHook() = default;
  virtual Tensor apply(std::size_t layer, const Tensor& activation) = 0;
  virtual Tensor backprop(std::size_t layer, const Tensor& grad) = 0;
  /// Which layers this hook transforms (others pass through untouched).
  virtual bool hooks_layer(std::size_t layer) const = 0;
};

struct ForwardResult {
  Tensor logits;
  double loss = 0.0;  // mean softmax cross-entropy over the batch
};

/// Forward pass. Stores each layer's activation in its LayerState.
/// hook may be null (evaluation mode / no regularizer).
ForwardResult forward(const ModelSpec& model, std::vector<LayerState>& states,
                      const Tensor& batch, const std::vector<int>& targets,
                      ActivationHook* hook = nullptr);

/// Logits only; no targets, no loss, no hooks. Does not disturb caches
/// needed by a pending backward (uses scratch states).
Tensor infer_logits(const ModelSpec& model,
                    const std::vector<LayerState>& states,
                    const Tensor& batch);

struct Gradients {
  std::vector<Tensor> weight_grads;  // aligned with states
  std::vector<Tensor> bias_grads;
};

/// Backward pass for the batch last seen by forward(). Populates
/// last_activation_grad on every layer and returns parameter gradients.
/// The hook must be the same instance used in the forward pass.
Gradients backward(const ModelSpec& model, std::vector<LayerState>& states,
                   const std::vector<int>& targets,
                   ActivationHook* hook = nullptr);

/// Argmax class per sample; ties break to the lowest index.
std::vector<int> predict(const ModelSpec& model,
                         const std::vector<LayerState>& states,
                         const Tensor& batch);

/// Mean cross-entropy with per-sample losses clipped at clip_b (<=0
/// disables clipping). Evaluation mode.
double mean_loss(const ModelSpec& model, const std::vector<LayerState>& states,
                 const Tensor& batch, const std::vector<int>& targets,
                 double clip_b = 0.0);

/// Shape of each layer's output given the model input shape (batch excluded).
std::vector<std::vector<Index>> layer_output_shapes(const ModelSpec& model);

/// Indices of ReLU layers; the regularizer hooks attach there.
std::vector<std::size_t> relu_layers(const ModelSpec& model);

}  // namespace magdrop::nn
