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
#include <string>
#include <vector>

#include "magdrop/data_io.hpp"
#include "magdrop/nn.hpp"
#include "magdrop/tensor.hpp"

namespace magdrop::bound {

inline constexpr double kDefaultAlpha = 0.5;
/// Covering constant c = 2 ln 2. All logarithms here are natural.
inline constexpr double kDefaultCoveringC = 1.3862943611198906;

struct PerLayer {
  double kappa = 0.0;          // spectral norm of the layer weight
  double expected_rate = 0.0;  // time-mean applied dropout rate
};

/// Every scalar the combined bound consumes. sigma must be supplied or
/// back-solved explicitly; it has no default.
struct BoundInputs {
  double weight_norm_sq = 0.0;  // E_Q[||w||^2]
  double expected_rate = 0.0;   // E[p_t], mean over layers
  std::vector<PerLayer> per_layer;
  long m = 1;
  double delta = 0.05;
  double B = 1.0;
  double X_sq = 0.0;
  std::optional<double> sigma;  // prior width
  double alpha = kDefaultAlpha;
  double c = kDefaultCoveringC;
  double empirical_risk = 0.0;  // clipped, in [0, B]
  bool risk_clipped = false;    // true when the raw loss exceeded B

  void validate() const;
};

struct BoundReport {
  double kl_term = 0.0;          // weight_norm_sq / (2 sigma^2)
  double entropy_term = 0.0;     // ln(1 / (alpha (1 - E[p_t])))
  double confidence_term = 0.0;  // ln(m / delta)
  double covering_term = 0.0;    // c B^2 X^2 exp(sum kappa sqrt(rate))
  double perturbation_sum = 0.0;  // sum_l kappa_l sqrt(rate_l)
  double numerator = 0.0;
  double bound_gap = 0.0;   // sqrt(numerator / 2m)
  double total_bound = 0.0; // empirical_risk + bound_gap
  bool covering_overflow = false;
  std::string note;
  BoundInputs inputs;
};

/// Largest singular value by power iteration on W^T W. Conv kernels are
/// matricized as out_ch x (in_ch*k*k). Zero matrices return 0.
double measure_spectral_norm(const Tensor& weight, int max_iters = 1000,
                             double tol = 1e-9, std::uint64_t seed = 0);

/// KL(Q||P) <= w2/(2 sigma^2) + ln(1/(alpha (1 - rate))).
double kl_bound(double weight_norm_sq, double sigma, double alpha,
                double expected_rate);

double covering_term(double B, double X_sq, double c,
                     const std::vector<PerLayer>& per_layer);

/// Combined bound with full term decomposition.
BoundReport magdrop_bound(const BoundInputs& inputs);

/// Catoni form at a fixed temperature lambda.
double catoni_bound(double empirical_risk, double kl, long m, double delta,
                    double B, double lambda);

/// Lambda-optimized form with the ln(2 sqrt(m)) slack.
double catoni_bound_optimized(double empirical_risk, double kl, long m,
                              double delta, double B);

/// Prior width that makes the combined bound's gap equal target_gap given
/// the other inputs. Throws NumericError if the target is infeasible.
double back_solve_sigma(double target_gap, const BoundInputs& partial);

/// Measurement protocol on a trained model: Frobenius weight norms,
/// per-layer spectral norms, time-mean applied rates, clipped train risk.
/// rate_trace[i] holds the applied-rate series for hooked layer i; layers
/// that never dropped contribute rate 0.
BoundInputs measure_from_run(
    const nn::ModelSpec& model, const std::vector<nn::LayerState>& states,
    const std::vector<std::vector<double>>& per_layer_rate_traces,
    const data::Dataset& train_set, double B, double delta);

/// (gap_a - gap_b) / gap_a * 100.
double compare_report(const BoundReport& a, const BoundReport& b);

/// Aligned text table mirroring the published comparison columns.
std::string report_table(const std::vector<std::pair<std::string, BoundReport>>&
                             rows);

}  // namespace magdrop::bound
