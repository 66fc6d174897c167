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
#include <string>

#include <json.hpp>

#include "magdrop/pac_bound.hpp"

namespace magdrop::bound {

// JSON schema:
//   BoundInputs: {"weight_norm_sq", "expected_rate",
//                 "per_layer": [{"kappa", "expected_rate"}...],
//                 "m", "delta", "B", "X_sq", "sigma" (optional/null),
//                 "alpha", "c", "empirical_risk", "risk_clipped"}
//   BoundReport adds the term decomposition next to an "inputs" snapshot.

inline nlohmann::json to_json(const BoundInputs& in) {
  nlohmann::json per_layer = nlohmann::json::array();
  for (const auto& pl : in.per_layer) {
    per_layer.push_back(
        {{"kappa", pl.kappa}, {"expected_rate", pl.expected_rate}});
  }
  nlohmann::json j = {
      {"weight_norm_sq", in.weight_norm_sq},
      {"expected_rate", in.expected_rate},
      {"per_layer", per_layer},
      {"m", in.m},
      {"delta", in.delta},
      {"B", in.B},
      {"X_sq", in.X_sq},
      {"alpha", in.alpha},
      {"c", in.c},
      {"empirical_risk", in.empirical_risk},
      {"risk_clipped", in.risk_clipped},
  };
  if (in.sigma) {
    j["sigma"] = *in.sigma;
  } else {
    j["sigma"] = nullptr;
  }
  return j;
}

inline BoundInputs bound_inputs_from_json(const nlohmann::json& j) {
  static const std::set<std::string> known = {
      "weight_norm_sq", "expected_rate", "per_layer",      "m",
      "delta",          "B",             "X_sq",           "sigma",
      "alpha",          "c",             "empirical_risk", "risk_clipped"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.count(it.key())) {
      throw ConfigError("bound inputs: unknown key '" + it.key() + "'");
    }
  }
  BoundInputs in;
  try {
    in.weight_norm_sq = j.at("weight_norm_sq").get<double>();
    in.expected_rate = j.at("expected_rate").get<double>();
    for (const auto& pj : j.at("per_layer")) {
      PerLayer pl;
      pl.kappa = pj.at("kappa").get<double>();
      pl.expected_rate = pj.at("expected_rate").get<double>();
      in.per_layer.push_back(pl);
    }
    in.m = j.at("m").get<long>();
    in.delta = j.value("delta", 0.05);
    in.B = j.value("B", 1.0);
    in.X_sq = j.at("X_sq").get<double>();
    if (j.contains("sigma") && !j.at("sigma").is_null()) {
      in.sigma = j.at("sigma").get<double>();
    }
    in.alpha = j.value("alpha", kDefaultAlpha);
    in.c = j.value("c", kDefaultCoveringC);
    in.empirical_risk = j.value("empirical_risk", 0.0);
    in.risk_clipped = j.value("risk_clipped", false);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bound inputs: ") + e.what());
  }
  in.validate();
  return in;
}

inline nlohmann::json to_json(const BoundReport& r) {
  return {
      {"kl_term", r.kl_term},
      {"entropy_term", r.entropy_term},
      {"confidence_term", r.confidence_term},
      {"covering_term", r.covering_overflow
                            ? nlohmann::json("overflow")
                            : nlohmann::json(r.covering_term)},
      {"perturbation_sum", r.perturbation_sum},
      {"numerator", r.numerator},
      {"bound_gap", r.bound_gap},
      {"total_bound", r.total_bound},
      {"covering_overflow", r.covering_overflow},
      {"note", r.note},
      {"inputs", to_json(r.inputs)},
  };
}

}  // namespace magdrop::bound
