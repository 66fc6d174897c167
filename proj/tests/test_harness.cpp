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

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "magdrop/harness.hpp"

using namespace magdrop;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& leaf) {
  const fs::path dir = fs::temp_directory_path() / "magdrop_harness_test" / leaf;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

harness::RunConfig quick_blobs_config(harness::RegularizerKind kind,
                                      std::uint64_t seed = 7) {
  harness::RunConfig cfg;
  cfg.dataset = "blobs";
  cfg.blobs_classes = 4;
  cfg.blobs_dim = 16;
  cfg.blobs_train_per_class = 50;
  cfg.blobs_test_per_class = 25;
  cfg.model.arch = "mlp";
  cfg.model.hidden = {32};
  cfg.regularizer.kind = kind;
  cfg.epochs = 5;
  cfg.batch_size = 32;
  cfg.seed = seed;
  return cfg;
}

}  // namespace

TEST_CASE("run config survives a json round-trip") {
  harness::RunConfig cfg = quick_blobs_config(harness::RegularizerKind::MagDrop);
  cfg.lr_max = 5e-3;
  cfg.subset_per_class = 200;
  const nlohmann::json j = harness::to_json(cfg);
  const harness::RunConfig back = harness::config_from_json(j);
  CHECK(back.dataset == cfg.dataset);
  CHECK(back.lr_max == cfg.lr_max);
  CHECK(back.subset_per_class == cfg.subset_per_class);
  CHECK(back.regularizer.kind == cfg.regularizer.kind);
  CHECK(back.model.hidden == cfg.model.hidden);
  CHECK(back.seed == cfg.seed);
}

TEST_CASE("unknown config keys are rejected at every nesting level") {
  nlohmann::json j = harness::to_json(
      quick_blobs_config(harness::RegularizerKind::None));
  j["typo_key"] = 1;
  CHECK_THROWS_AS(harness::config_from_json(j), ConfigError);
  j.erase("typo_key");
  j["regularizer"]["typo"] = 1;
  CHECK_THROWS_AS(harness::config_from_json(j), ConfigError);
  j["regularizer"].erase("typo");
  j["model"]["typo"] = 1;
  CHECK_THROWS_AS(harness::config_from_json(j), ConfigError);
}

TEST_CASE("bad enum values name the offending field") {
  nlohmann::json j = harness::to_json(
      quick_blobs_config(harness::RegularizerKind::None));
  j["dataset"] = "imagenet";
  CHECK_THROWS_AS(harness::config_from_json(j), ConfigError);
  j["dataset"] = "blobs";
  j["regularizer"]["kind"] = "spicy";
  CHECK_THROWS_AS(harness::config_from_json(j), ConfigError);
}

TEST_CASE("five epochs on separable blobs reach 99 percent train accuracy") {
  harness::RunConfig cfg = quick_blobs_config(harness::RegularizerKind::MagDrop);
  const auto result = harness::cmd_train(cfg);
  REQUIRE(result.metrics.train_acc.size() == 6);  // epoch 0 plus 5
  CHECK(result.metrics.train_acc.back() >= 0.99);
  CHECK(result.metrics.test_acc.back() >= 0.95);
}

TEST_CASE("epoch zero metrics are identical across regularizers") {
  // dropout only engages during training, so the pre-training evaluation
  // must agree bit for bit between hooked and unhooked runs
  harness::RunConfig a = quick_blobs_config(harness::RegularizerKind::None);
  harness::RunConfig b = quick_blobs_config(harness::RegularizerKind::MagDrop);
  a.epochs = 1;
  b.epochs = 1;
  const auto ra = harness::cmd_train(a);
  const auto rb = harness::cmd_train(b);
  CHECK(ra.metrics.train_loss[0] == rb.metrics.train_loss[0]);
  CHECK(ra.metrics.test_loss[0] == rb.metrics.test_loss[0]);
  CHECK(ra.metrics.train_acc[0] == rb.metrics.train_acc[0]);
}

TEST_CASE("training artifacts are byte-identical across repeat runs") {
  const fs::path d1 = fresh_dir("repeat1");
  const fs::path d2 = fresh_dir("repeat2");
  harness::RunConfig cfg = quick_blobs_config(harness::RegularizerKind::MagDrop);
  cfg.epochs = 3;
  cfg.output_dir = d1.string();
  harness::cmd_train(cfg);
  cfg.output_dir = d2.string();
  harness::cmd_train(cfg);
  CHECK(slurp(d1 / "metrics.csv") == slurp(d2 / "metrics.csv"));
  CHECK(slurp(d1 / "rate_trace.csv") == slurp(d2 / "rate_trace.csv"));
  CHECK(slurp(d1 / "model_state.bin") == slurp(d2 / "model_state.bin"));
}

TEST_CASE("a different seed changes the metrics") {
  const fs::path d1 = fresh_dir("seed7");
  const fs::path d2 = fresh_dir("seed8");
  harness::RunConfig cfg = quick_blobs_config(harness::RegularizerKind::Dropout);
  cfg.epochs = 2;
  cfg.output_dir = d1.string();
  harness::cmd_train(cfg);
  cfg.seed = 8;
  cfg.output_dir = d2.string();
  harness::cmd_train(cfg);
  CHECK(slurp(d1 / "metrics.csv") != slurp(d2 / "metrics.csv"));
}

TEST_CASE("metrics csv uses crlf endings and the documented header") {
  const fs::path dir = fresh_dir("csv");
  harness::RunConfig cfg = quick_blobs_config(harness::RegularizerKind::None);
  cfg.epochs = 1;
  cfg.output_dir = dir.string();
  harness::cmd_train(cfg);
  const std::string text = slurp(dir / "metrics.csv");
  CHECK(text.rfind("epoch,train_acc,test_acc,train_loss,test_loss,gen_gap\r\n",
                   0) == 0);
  CHECK(text.find("\r\n") != std::string::npos);
  // no bare LF: every newline is preceded by CR
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text[i] == '\n') {
      REQUIRE(i > 0);
      CHECK(text[i - 1] == '\r');
    }
  }
}

TEST_CASE("model state round-trips through the binary format") {
  harness::RunConfig cfg = quick_blobs_config(harness::RegularizerKind::None);
  cfg.epochs = 1;
  const auto result = harness::cmd_train(cfg);
  const fs::path dir = fresh_dir("state");
  harness::save_model_state(result.states, dir / "m.bin");
  const auto loaded = harness::load_model_state(result.model, dir / "m.bin");
  REQUIRE(loaded.size() == result.states.size());
  for (std::size_t i = 0; i < loaded.size(); ++i) {
    if (result.states[i].weights.empty()) continue;
    CHECK((loaded[i].weights.array() == result.states[i].weights.array()).all());
    CHECK((loaded[i].bias.array() == result.states[i].bias.array()).all());
  }
}

TEST_CASE("a finished run directory measures into usable bound inputs") {
  const fs::path dir = fresh_dir("measure");
  harness::RunConfig cfg = quick_blobs_config(harness::RegularizerKind::Dropout);
  cfg.epochs = 2;
  cfg.output_dir = dir.string();
  harness::cmd_train(cfg);
  const bound::BoundInputs in = harness::measure_run_dir(dir);
  CHECK(in.m == 200);  // 4 classes x 50
  CHECK(in.weight_norm_sq > 0.0);
  CHECK(in.expected_rate == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(in.empirical_risk >= 0.0);
  CHECK(in.empirical_risk <= cfg.loss_clip_B);
  CHECK(!in.sigma.has_value());
}

TEST_CASE("bound command writes a report given an explicit sigma") {
  const fs::path run = fresh_dir("bound_run");
  harness::RunConfig cfg = quick_blobs_config(harness::RegularizerKind::MagDrop);
  cfg.epochs = 2;
  cfg.output_dir = run.string();
  harness::cmd_train(cfg);
  const bound::BoundInputs in = harness::measure_run_dir(run);
  harness::BoundOptions opts;
  opts.sigma = 0.05;
  const bound::BoundReport r = harness::cmd_bound(in, opts, run);
  CHECK(r.bound_gap > 0.0);
  CHECK(fs::exists(run / "bound_report.json"));
  CHECK(fs::exists(run / "bound_report.txt"));
  const auto j = nlohmann::json::parse(slurp(run / "bound_report.json"));
  CHECK(j.at("bound_gap").get<double>() == doctest::Approx(r.bound_gap));
}

TEST_CASE("bound command without sigma or a backsolve target is an error") {
  bound::BoundInputs in;
  in.weight_norm_sq = 1.0;
  in.m = 100;
  in.X_sq = 1.0;
  CHECK_THROWS_AS(harness::cmd_bound(in, {}, ""), ConfigError);
}

TEST_CASE("compare rows recompute accuracies from run artifacts") {
  const fs::path d1 = fresh_dir("cmp_a");
  const fs::path d2 = fresh_dir("cmp_b");
  harness::RunConfig cfg = quick_blobs_config(harness::RegularizerKind::None);
  cfg.epochs = 2;
  cfg.output_dir = d1.string();
  const auto ra = harness::cmd_train(cfg);
  cfg.regularizer.kind = harness::RegularizerKind::Dropout;
  cfg.output_dir = d2.string();
  harness::cmd_train(cfg);
  const auto rows = harness::collect_compare_rows({d1, d2});
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].method == "none");
  CHECK(rows[1].method == "dropout");
  CHECK(rows[0].train_acc == doctest::Approx(ra.metrics.train_acc.back()));
  CHECK(rows[0].gen_gap ==
        doctest::Approx(ra.metrics.train_acc.back() -
                        ra.metrics.test_acc.back()));
  const std::string table = harness::compare_table_text(rows);
  CHECK(table.find("none") != std::string::npos);
  CHECK(table.find("dropout") != std::string::npos);
  const std::string csv = harness::compare_table_csv(rows);
  CHECK(csv.find("\r\n") != std::string::npos);
}

TEST_CASE("validate passes a clean run and flags a corrupted one") {
  const fs::path dir = fresh_dir("validate");
  harness::RunConfig cfg = quick_blobs_config(harness::RegularizerKind::MagDrop);
  cfg.epochs = 1;
  cfg.output_dir = dir.string();
  harness::cmd_train(cfg);
  CHECK(harness::validate_run_dir(dir).empty());
  std::ofstream(dir / "config.json", std::ios::trunc) << "{not json";
  CHECK(!harness::validate_run_dir(dir).empty());
}

TEST_CASE("cli maps error classes to documented exit codes") {
  CHECK(harness::run_cli({"train", "--config", "/nonexistent/cfg.json"}) == 2);
  const fs::path dir = fresh_dir("cli_cfg");
  std::ofstream(dir / "bad.json") << "{\"dataset\": \"imagenet\"}";
  CHECK(harness::run_cli({"train", "--config", (dir / "bad.json").string()}) ==
        2);
  CHECK(harness::run_cli({"bound", "--run", "/nonexistent/run"}) == 3);
}

TEST_CASE("cli runs train, bound and validate end to end") {
  const fs::path dir = fresh_dir("cli_e2e");
  harness::RunConfig cfg = quick_blobs_config(harness::RegularizerKind::MagDrop);
  cfg.epochs = 2;
  const fs::path cfg_path = dir / "cfg.json";
  std::ofstream(cfg_path) << harness::to_json(cfg).dump(2);
  const fs::path run = dir / "run";
  CHECK(harness::run_cli({"train", "--config", cfg_path.string(), "--output",
                          run.string()}) == 0);
  CHECK(fs::exists(run / "metrics.csv"));
  CHECK(harness::run_cli({"bound", "--run", run.string(), "--sigma", "0.05"}) ==
        0);
  CHECK(fs::exists(run / "bound_report.json"));
  // missing sigma is a config error
  const fs::path run2 = dir / "run2";
  fs::create_directories(run2);
  fs::copy(run, run2, fs::copy_options::overwrite_existing |
                          fs::copy_options::recursive);
  fs::remove(run2 / "bound_report.json");
  CHECK(harness::run_cli({"bound", "--run", run2.string()}) == 2);
  CHECK(harness::run_cli({"validate", run.string()}) == 0);
  CHECK(harness::run_cli({"compare", run.string()}) == 0);
}
