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

#include "magdrop/optim.hpp"

namespace magdrop::optim {

void adamw_step(AdamWState& state, double lr, std::vector<Tensor*> params,
                const std::vector<const Tensor*>& grads,
                const std::vector<std::string>& names) {
  if (params.size() != grads.size()) {
    throw StateError("adamw_step: params/grads size mismatch");
  }
  if (state.first_moment.empty()) {
    state.first_moment.resize(params.size());
    state.second_moment.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.first_moment[i] = Tensor(params[i]->shape());
      state.second_moment[i] = Tensor(params[i]->shape());
    }
  }
  state.step_count += 1;
  const auto& c = state.cfg;
  const double bc1 = 1.0 - std::pow(c.b1, static_cast<double>(state.step_count));
  const double bc2 = 1.0 - std::pow(c.b2, static_cast<double>(state.step_count));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    const Tensor& g = *grads[i];
    if (!p.same_shape(g)) {
      throw StateError("adamw_step: gradient shape mismatch");
    }
    if (!g.array().isFinite().all()) {
      const std::string name =
          i < names.size() ? names[i] : ("param[" + std::to_string(i) + "]");
      throw NumericError("non-finite gradient for " + name);
    }
    auto& m = state.first_moment[i].array();
    auto& v = state.second_moment[i].array();
    m = c.b1 * m + (1.0 - c.b1) * g.array();
    v = c.b2 * v + (1.0 - c.b2) * g.array().square();
    // decoupled weight decay, then bias-corrected Adam update
    p.array() *= (1.0 - lr * c.weight_decay);
    p.array() -= lr * (m / bc1) / ((v / bc2).sqrt() + c.eps);
  }
}

}  // namespace magdrop::optim
