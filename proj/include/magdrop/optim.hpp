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

#include <cmath>
#include <string>
#include <vector>

#include "magdrop/tensor.hpp"

namespace magdrop::optim {

struct AdamWConfig {
  double b1 = 0.9;
  double b2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// Per-parameter moment buffers; lazily shaped on the first step.
struct AdamWState {
  AdamWConfig cfg;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  long step_count = 0;
};

/// One decoupled-weight-decay Adam step over an aligned parameter/gradient
/// list. Throws NumericError naming the parameter on non-finite gradients.
void adamw_step(AdamWState& state, double lr, std::vector<Tensor*> params,
                const std::vector<const Tensor*>& grads,
                const std::vector<std::string>& names = {});

struct CosineSchedule {
  double lr_max = 1e-3;
  double lr_min = 0.0;
  long total_steps = 1;
};

/// lr_min + (lr_max - lr_min) * (1 + cos(pi * step / total)) / 2.
inline double cosine_lr(const CosineSchedule& s, long step) {
  if (step < 0 || step > s.total_steps) {
    throw ConfigError("cosine_lr: step out of [0, total_steps]");
  }
  const double frac =
      static_cast<double>(step) / static_cast<double>(s.total_steps);
  return s.lr_min +
         0.5 * (s.lr_max - s.lr_min) *
             (1.0 + std::cos(3.141592653589793238462643383280 * frac));
}

}  // namespace magdrop::optim
