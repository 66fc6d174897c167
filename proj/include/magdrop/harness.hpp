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

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "magdrop/data_io.hpp"
#include "magdrop/nn.hpp"
#include "magdrop/pac_bound.hpp"

namespace magdrop::harness {

enum class RegularizerKind { None, Dropout, Agr, MagDrop };

std::string to_string(RegularizerKind kind);

struct RegularizerConfig {
  RegularizerKind kind = RegularizerKind::None;
  double p = 0.3;           // dropout
  double lambda = 0.01;     // agr
  double p_base = 0.3;      // magdrop
  double beta = 0.9;
  double tau = 0.1;
  double clamp_max = 0.6;
};

struct ConvLayerConfig {
  Index out_ch = 8;
  Index kernel = 3;
  Index stride = 1;
};

struct ModelConfig {
  std::string arch = "mlp";  // "mlp" | "cnn"
  std::vector<Index> hidden = {256};
  std::vector<ConvLayerConfig> conv;  // cnn only
};

struct RunConfig {
  std::string dataset = "blobs";  // mnist | cifar10 | blobs
  std::optional<Index> subset_per_class;
  std::optional<Index> test_subset_per_class;
  ModelConfig model;
  RegularizerConfig regularizer;
  double lr_max = 1e-3;
  double lr_min = 0.0;
  double adam_b1 = 0.9;
  double adam_b2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.01;
  bool schedule_per_epoch = false;
  long epochs = 5;
  Index batch_size = 32;
  std::uint64_t seed = 0;
  double loss_clip_B = 1.0;
  std::string output_dir;
  // blobs parameters
  int blobs_classes = 4;
  Index blobs_dim = 16;
  Index blobs_train_per_class = 100;
  Index blobs_test_per_class = 50;
  double blobs_spread = 1.0;
};

/// Strict parse; unknown keys anywhere reject with ConfigError.
RunConfig config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RunConfig& cfg);
RunConfig load_config(const std::filesystem::path& path);

struct RunMetrics {
  // row 0 is the pre-training (epoch 0) evaluation
  std::vector<double> train_acc, test_acc, train_loss, test_loss, gen_gap;
  // [epoch][hooked-layer] mean applied dropout rate
  std::vector<std::vector<double>> epoch_rates;
  std::vector<std::size_t> hooked_layers;
  double wall_seconds = 0.0;
};

struct TrainResult {
  RunMetrics metrics;
  nn::ModelSpec model;
  std::vector<nn::LayerState> states;
  std::vector<std::vector<double>> rate_traces;  // aligned with model layers
  data::Dataset train_set;
};

/// Resolve MAGDROP_DATA_ROOT (default ./data) and load the configured
/// dataset pair.
std::pair<data::Dataset, data::Dataset> load_datasets(const RunConfig& cfg);

nn::ModelSpec build_model(const RunConfig& cfg, const data::Dataset& train);

/// Train per config; when cfg.output_dir is non-empty, writes config.json,
/// metrics.csv, rate_trace.csv, model_state.bin and run_meta.json there.
TrainResult cmd_train(const RunConfig& cfg);

/// Measure a completed run directory into BoundInputs.
bound::BoundInputs measure_run_dir(const std::filesystem::path& run_dir);

struct BoundOptions {
  std::optional<double> sigma;
  std::optional<double> backsolve_target;
};

/// Apply sigma policy and evaluate the bound; writes bound_report.json and
/// bound_report.txt into out_dir when non-empty.
bound::BoundReport cmd_bound(bound::BoundInputs inputs,
                             const BoundOptions& opts,
                             const std::filesystem::path& out_dir);

struct CompareRow {
  std::string run_dir;
  std::string method;
  std::string dataset;
  double train_acc = 0.0;
  double test_acc = 0.0;
  double gen_gap = 0.0;
  std::optional<double> bound_gap;
};

std::vector<CompareRow> collect_compare_rows(
    const std::vector<std::filesystem::path>& run_dirs);
std::string compare_table_text(const std::vector<CompareRow>& rows);
std::string compare_table_csv(const std::vector<CompareRow>& rows);

/// Checks every .json/.csv artifact in a run directory; returns problems.
std::vector<std::string> validate_run_dir(const std::filesystem::path& dir);

/// Model state binary round-trip.
void save_model_state(const std::vector<nn::LayerState>& states,
                      const std::filesystem::path& path);
std::vector<nn::LayerState> load_model_state(
    const nn::ModelSpec& model, const std::filesystem::path& path);

/// Full CLI: train/bound/compare/validate. Returns a process exit code.
int run_cli(const std::vector<std::string>& args);

}  // namespace magdrop::harness
