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

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "magdrop/nn.hpp"

namespace magdrop::testutil {

inline nn::ModelSpec make_mlp(const std::vector<Index>& dims,
                              std::uint64_t seed) {
  nn::ModelSpec model;
  model.seed = seed;
  model.input_shape = {dims.front()};
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    model.layers.push_back(nn::Dense{dims[i], dims[i + 1]});
    if (i + 2 < dims.size()) model.layers.push_back(nn::ReLU{});
  }
  model.layers.push_back(nn::SoftmaxCrossEntropy{});
  return model;
}

inline Tensor random_batch(const std::vector<Index>& sample_shape, Index n,
                           Rng& rng) {
  std::vector<Index> shape = {n};
  shape.insert(shape.end(), sample_shape.begin(), sample_shape.end());
  Tensor t(shape);
  for (Index i = 0; i < t.numel(); ++i) t[i] = rng.normal();
  return t;
}

inline std::vector<int> random_targets(Index n, int classes, Rng& rng) {
  std::vector<int> t(static_cast<std::size_t>(n));
  for (auto& v : t) v = static_cast<int>(rng.below(classes));
  return t;
}

/// Independent central-finite-difference oracle for parameter gradients.
/// subsample 0 checks every parameter entry; otherwise a seeded random
/// subset of that size per tensor. Returns the max relative error.
inline double finite_difference_max_rel_error(
    const nn::ModelSpec& model, std::vector<nn::LayerState> states,
    const Tensor& batch, const std::vector<int>& targets, Index subsample = 0,
    std::uint64_t pick_seed = 0, double eps = 1e-5) {
  nn::forward(model, states, batch, targets);
  const nn::Gradients analytic = nn::backward(model, states, targets);
  Rng pick = Rng::seeded(pick_seed, 0x90);
  double max_rel = 0.0;
  const auto loss_at = [&](const std::vector<nn::LayerState>& s) {
    return nn::mean_loss(model, s, batch, targets);
  };
  for (std::size_t l = 0; l < states.size(); ++l) {
    for (int which = 0; which < 2; ++which) {
      Tensor& param = which == 0 ? states[l].weights : states[l].bias;
      const Tensor& an =
          which == 0 ? analytic.weight_grads[l] : analytic.bias_grads[l];
      if (param.empty()) continue;
      std::vector<Index> entries;
      if (subsample <= 0 || subsample >= param.numel()) {
        entries.resize(static_cast<std::size_t>(param.numel()));
        std::iota(entries.begin(), entries.end(), Index{0});
      } else {
        for (Index k = 0; k < subsample; ++k) {
          entries.push_back(static_cast<Index>(
              pick.below(static_cast<std::uint64_t>(param.numel()))));
        }
      }
      for (Index k : entries) {
        const double orig = param[k];
        param[k] = orig + eps;
        const double lp = loss_at(states);
        param[k] = orig - eps;
        const double lm = loss_at(states);
        param[k] = orig;
        const double fd = (lp - lm) / (2.0 * eps);
        const double a = an[k];
        const double rel =
            std::abs(fd - a) / std::max({std::abs(fd), std::abs(a), 1e-6});
        max_rel = std::max(max_rel, rel);
      }
    }
  }
  return max_rel;
}

}  // namespace magdrop::testutil
