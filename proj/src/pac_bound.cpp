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

#include "magdrop/pac_bound.hpp"

#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

namespace magdrop::bound {

void BoundInputs::validate() const {
  if (m < 1) throw ConfigError("bound: m must be >= 1");
  if (delta <= 0.0 || delta >= 1.0) throw ConfigError("bound: delta in (0,1)");
  if (expected_rate < 0.0 || expected_rate >= 1.0) {
    throw ConfigError("bound: expected_rate must lie in [0,1)");
  }
  for (const auto& pl : per_layer) {
    if (pl.kappa < 0.0) throw ConfigError("bound: kappa must be >= 0");
    if (pl.expected_rate < 0.0 || pl.expected_rate >= 1.0) {
      throw ConfigError("bound: per-layer rate must lie in [0,1)");
    }
  }
  if (B <= 0.0) throw ConfigError("bound: B must be positive");
  if (X_sq < 0.0) throw ConfigError("bound: X^2 must be >= 0");
  if (alpha <= 0.0) throw ConfigError("bound: alpha must be positive");
  if (sigma && *sigma <= 0.0) throw ConfigError("bound: sigma must be positive");
  if (empirical_risk < 0.0 || empirical_risk > B) {
    throw ConfigError("bound: empirical risk outside [0, B]");
  }
}

double measure_spectral_norm(const Tensor& weight, int max_iters, double tol,
                             std::uint64_t seed) {
  if (weight.empty()) return 0.0;
  Index rows, cols;
  if (weight.shape().size() == 2) {
    rows = weight.shape()[0];
    cols = weight.shape()[1];
  } else if (weight.shape().size() == 4) {
    rows = weight.shape()[0];
    cols = weight.numel() / weight.shape()[0];
  } else {
    rows = 1;
    cols = weight.numel();
  }
  const auto w = weight.matrix(rows, cols);
  if (w.cwiseAbs().maxCoeff() == 0.0) return 0.0;

  Rng rng = Rng::seeded(seed, 0x7001);
  Eigen::VectorXd v(cols);
  for (Index i = 0; i < cols; ++i) v[i] = rng.normal();
  v.normalize();
  double sigma = 0.0;
  for (int it = 0; it < max_iters; ++it) {
    Eigen::VectorXd u = w * v;
    const double norm_u = u.norm();
    if (norm_u == 0.0) return 0.0;
    v = w.transpose() * u;
    const double norm_v = v.norm();
    if (norm_v == 0.0) return 0.0;
    v /= norm_v;
    const double next = norm_v / norm_u;
    if (it > 0 && std::abs(next - sigma) <= tol * next) {
      sigma = next;
      break;
    }
    sigma = next;
  }
  return sigma;
}

double kl_bound(double weight_norm_sq, double sigma, double alpha,
                double expected_rate) {
  if (sigma <= 0.0) throw ConfigError("kl_bound: sigma must be positive");
  if (expected_rate >= 1.0) {
    throw NumericError("kl_bound: expected_rate >= 1 (entropy term domain)");
  }
  return weight_norm_sq / (2.0 * sigma * sigma) +
         std::log(1.0 / (alpha * (1.0 - expected_rate)));
}

double covering_term(double B, double X_sq, double c,
                     const std::vector<PerLayer>& per_layer) {
  double sum = 0.0;
  for (const auto& pl : per_layer) {
    sum += pl.kappa * std::sqrt(pl.expected_rate);
  }
  return c * B * B * X_sq * std::exp(sum);
}

BoundReport magdrop_bound(const BoundInputs& inputs) {
  inputs.validate();
  if (!inputs.sigma) {
    throw ConfigError(
        "bound: sigma not supplied; pass it explicitly or back-solve it "
        "from a target gap");
  }
  BoundReport r;
  r.inputs = inputs;
  const double sigma = *inputs.sigma;
  r.kl_term = inputs.weight_norm_sq / (2.0 * sigma * sigma);
  r.entropy_term =
      std::log(1.0 / (inputs.alpha * (1.0 - inputs.expected_rate)));
  r.confidence_term =
      std::log(static_cast<double>(inputs.m) / inputs.delta);
  for (const auto& pl : inputs.per_layer) {
    r.perturbation_sum += pl.kappa * std::sqrt(pl.expected_rate);
  }
  r.covering_term =
      covering_term(inputs.B, inputs.X_sq, inputs.c, inputs.per_layer);
  if (!std::isfinite(r.covering_term)) {
    r.covering_overflow = true;
    r.note = "covering term overflowed: exp(" +
             std::to_string(r.perturbation_sum) + ") too large";
  }
  r.numerator =
      r.kl_term + r.entropy_term + r.confidence_term + r.covering_term;
  r.bound_gap = std::sqrt(r.numerator / (2.0 * static_cast<double>(inputs.m)));
  r.total_bound = inputs.empirical_risk + r.bound_gap;
  return r;
}

double catoni_bound(double empirical_risk, double kl, long m, double delta,
                    double B, double lambda) {
  if (lambda <= 0.0) throw NumericError("catoni_bound: lambda must be > 0");
  return empirical_risk + (kl + std::log(1.0 / delta)) / lambda +
         B * lambda / (2.0 * static_cast<double>(m));
}

double catoni_bound_optimized(double empirical_risk, double kl, long m,
                              double delta, double B) {
  const double md = static_cast<double>(m);
  const double inner =
      kl + std::log(1.0 / delta) + std::log(2.0 * std::sqrt(md));
  return empirical_risk + std::sqrt(B * B * inner / (2.0 * md));
}

double back_solve_sigma(double target_gap, const BoundInputs& partial) {
  BoundInputs probe = partial;
  probe.sigma.reset();
  const double entropy =
      std::log(1.0 / (probe.alpha * (1.0 - probe.expected_rate)));
  const double confidence =
      std::log(static_cast<double>(probe.m) / probe.delta);
  const double covering =
      covering_term(probe.B, probe.X_sq, probe.c, probe.per_layer);
  const double residual =
      target_gap * target_gap * 2.0 * static_cast<double>(probe.m) - entropy -
      confidence - covering;
  if (residual <= 0.0) {
    throw NumericError(
        "back_solve_sigma: target gap infeasible (non-KL terms alone exceed "
        "it; residual " +
        std::to_string(residual) + ")");
  }
  return std::sqrt(probe.weight_norm_sq / (2.0 * residual));
}

BoundInputs measure_from_run(
    const nn::ModelSpec& model, const std::vector<nn::LayerState>& states,
    const std::vector<std::vector<double>>& per_layer_rate_traces,
    const data::Dataset& train_set, double B, double delta) {
  if (per_layer_rate_traces.size() != model.layers.size()) {
    throw StateError("measure_from_run: rate traces not aligned with layers");
  }
  BoundInputs in;
  in.m = train_set.size();
  in.delta = delta;
  in.B = B;
  in.X_sq = train_set.input_norm_bound * train_set.input_norm_bound;

  const auto trace_mean = [](const std::vector<double>& t) {
    return t.empty() ? 0.0
                     : std::accumulate(t.begin(), t.end(), 0.0) /
                           static_cast<double>(t.size());
  };

  double rate_sum = 0.0;
  int rate_count = 0;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const auto& s = states[i];
    if (s.weights.empty()) continue;
    in.weight_norm_sq += s.weights.array().matrix().squaredNorm() +
                         s.bias.array().matrix().squaredNorm();
    PerLayer pl;
    pl.kappa = measure_spectral_norm(s.weights);
    // dropout attaches to the activation directly after the weight layer
    if (i + 1 < per_layer_rate_traces.size() &&
        !per_layer_rate_traces[i + 1].empty()) {
      pl.expected_rate = trace_mean(per_layer_rate_traces[i + 1]);
      rate_sum += pl.expected_rate;
      rate_count += 1;
    }
    in.per_layer.push_back(pl);
  }
  in.expected_rate = rate_count > 0 ? rate_sum / rate_count : 0.0;

  std::vector<Index> idx(static_cast<std::size_t>(train_set.size()));
  std::iota(idx.begin(), idx.end(), Index{0});
  std::vector<Index> sample_shape = model.input_shape;
  auto [batch, labels] = data::gather(train_set, idx, sample_shape);
  in.empirical_risk = nn::mean_loss(model, states, batch, labels, B);
  const double raw_risk = nn::mean_loss(model, states, batch, labels, 0.0);
  in.risk_clipped = raw_risk > in.empirical_risk;
  return in;
}

double compare_report(const BoundReport& a, const BoundReport& b) {
  if (a.bound_gap == 0.0) {
    throw NumericError("compare_report: reference gap is zero");
  }
  return (a.bound_gap - b.bound_gap) / a.bound_gap * 100.0;
}

std::string report_table(
    const std::vector<std::pair<std::string, BoundReport>>& rows) {
  std::ostringstream os;
  os << std::left << std::setw(20) << "Method" << std::right << std::setw(12)
     << "E[|w|^2]" << std::setw(10) << "E[p_t]" << std::setw(16)
     << "sum k*sqrt(p)" << std::setw(10) << "Bound" << "\n";
  for (const auto& [name, r] : rows) {
    os << std::left << std::setw(20) << name << std::right << std::fixed
       << std::setprecision(3) << std::setw(12) << r.inputs.weight_norm_sq
       << std::setw(10) << r.inputs.expected_rate << std::setw(16)
       << r.perturbation_sum << std::setw(10) << r.bound_gap << "\n";
    os.unsetf(std::ios::fixed);
  }
  return os.str();
}

}  // namespace magdrop::bound
