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

#include "magdrop/harness.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <set>
#include <sstream>
#include <unordered_map>

#include <CLI11.hpp>

#include "magdrop/optim.hpp"
#include "magdrop/pac_bound_json.hpp"
#include "magdrop/regularizers.hpp"

namespace fs = std::filesystem;

namespace magdrop::harness {

namespace {

void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known,
                    const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.count(it.key())) {
      throw ConfigError(where + ": unknown key '" + it.key() + "'");
    }
  }
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_text(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << content;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

nlohmann::json parse_json_file(const fs::path& path) {
  try {
    return nlohmann::json::parse(read_text(path));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

fs::path data_root() {
  if (const char* env = std::getenv("MAGDROP_DATA_ROOT")) return env;
  return "data";
}

}  // namespace

std::string to_string(RegularizerKind kind) {
  switch (kind) {
    case RegularizerKind::None: return "none";
    case RegularizerKind::Dropout: return "dropout";
    case RegularizerKind::Agr: return "agr";
    case RegularizerKind::MagDrop: return "magdrop";
  }
  return "?";
}

RunConfig config_from_json(const nlohmann::json& j) {
  reject_unknown(j, {"dataset", "subset_per_class", "test_subset_per_class",
                     "model", "regularizer", "optimizer", "epochs",
                     "batch_size", "seed", "loss_clip_B", "output_dir",
                     "blobs"},
                 "config");
  RunConfig cfg;
  try {
    cfg.dataset = j.at("dataset").get<std::string>();
    if (cfg.dataset != "mnist" && cfg.dataset != "cifar10" &&
        cfg.dataset != "blobs") {
      throw ConfigError("config: dataset must be mnist|cifar10|blobs");
    }
    if (j.contains("subset_per_class")) {
      cfg.subset_per_class = j.at("subset_per_class").get<Index>();
    }
    if (j.contains("test_subset_per_class")) {
      cfg.test_subset_per_class = j.at("test_subset_per_class").get<Index>();
    }
    if (j.contains("model")) {
      const auto& m = j.at("model");
      reject_unknown(m, {"arch", "hidden", "conv"}, "config.model");
      cfg.model.arch = m.value("arch", std::string("mlp"));
      if (cfg.model.arch != "mlp" && cfg.model.arch != "cnn") {
        throw ConfigError("config.model.arch must be mlp|cnn");
      }
      if (m.contains("hidden")) {
        cfg.model.hidden = m.at("hidden").get<std::vector<Index>>();
      }
      if (m.contains("conv")) {
        cfg.model.conv.clear();
        for (const auto& cj : m.at("conv")) {
          reject_unknown(cj, {"out_ch", "kernel", "stride"},
                         "config.model.conv[]");
          ConvLayerConfig c;
          c.out_ch = cj.value("out_ch", Index{8});
          c.kernel = cj.value("kernel", Index{3});
          c.stride = cj.value("stride", Index{1});
          cfg.model.conv.push_back(c);
        }
      }
    }
    if (j.contains("regularizer")) {
      const auto& r = j.at("regularizer");
      reject_unknown(r, {"kind", "p", "lambda", "p_base", "beta", "tau",
                         "clamp_max"},
                     "config.regularizer");
      const std::string kind = r.value("kind", std::string("none"));
      if (kind == "none") cfg.regularizer.kind = RegularizerKind::None;
      else if (kind == "dropout") cfg.regularizer.kind = RegularizerKind::Dropout;
      else if (kind == "agr") cfg.regularizer.kind = RegularizerKind::Agr;
      else if (kind == "magdrop") cfg.regularizer.kind = RegularizerKind::MagDrop;
      else throw ConfigError("config.regularizer.kind must be none|dropout|agr|magdrop");
      cfg.regularizer.p = r.value("p", 0.3);
      cfg.regularizer.lambda = r.value("lambda", 0.01);
      cfg.regularizer.p_base = r.value("p_base", 0.3);
      cfg.regularizer.beta = r.value("beta", 0.9);
      cfg.regularizer.tau = r.value("tau", 0.1);
      cfg.regularizer.clamp_max = r.value("clamp_max", 0.6);
    }
    if (j.contains("optimizer")) {
      const auto& o = j.at("optimizer");
      reject_unknown(o, {"lr_max", "lr_min", "b1", "b2", "eps",
                         "weight_decay", "schedule_per_epoch"},
                     "config.optimizer");
      cfg.lr_max = o.value("lr_max", 1e-3);
      cfg.lr_min = o.value("lr_min", 0.0);
      cfg.adam_b1 = o.value("b1", 0.9);
      cfg.adam_b2 = o.value("b2", 0.999);
      cfg.adam_eps = o.value("eps", 1e-8);
      cfg.weight_decay = o.value("weight_decay", 0.01);
      cfg.schedule_per_epoch = o.value("schedule_per_epoch", false);
    }
    cfg.epochs = j.at("epochs").get<long>();
    cfg.batch_size = j.at("batch_size").get<Index>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
    cfg.loss_clip_B = j.value("loss_clip_B", 1.0);
    cfg.output_dir = j.value("output_dir", std::string());
    if (j.contains("blobs")) {
      const auto& b = j.at("blobs");
      reject_unknown(b, {"classes", "dim", "train_per_class",
                         "test_per_class", "spread"},
                     "config.blobs");
      cfg.blobs_classes = b.value("classes", 4);
      cfg.blobs_dim = b.value("dim", Index{16});
      cfg.blobs_train_per_class = b.value("train_per_class", Index{100});
      cfg.blobs_test_per_class = b.value("test_per_class", Index{50});
      cfg.blobs_spread = b.value("spread", 1.0);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (cfg.epochs < 0) throw ConfigError("config: epochs must be >= 0");
  if (cfg.batch_size < 1) throw ConfigError("config: batch_size must be >= 1");
  return cfg;
}

nlohmann::json to_json(const RunConfig& cfg) {
  nlohmann::json model = {{"arch", cfg.model.arch},
                          {"hidden", cfg.model.hidden}};
  if (!cfg.model.conv.empty()) {
    nlohmann::json conv = nlohmann::json::array();
    for (const auto& c : cfg.model.conv) {
      conv.push_back({{"out_ch", c.out_ch},
                      {"kernel", c.kernel},
                      {"stride", c.stride}});
    }
    model["conv"] = conv;
  }
  nlohmann::json reg = {{"kind", to_string(cfg.regularizer.kind)}};
  switch (cfg.regularizer.kind) {
    case RegularizerKind::Dropout:
      reg["p"] = cfg.regularizer.p;
      break;
    case RegularizerKind::Agr:
      reg["lambda"] = cfg.regularizer.lambda;
      break;
    case RegularizerKind::MagDrop:
      reg["p_base"] = cfg.regularizer.p_base;
      reg["beta"] = cfg.regularizer.beta;
      reg["tau"] = cfg.regularizer.tau;
      reg["clamp_max"] = cfg.regularizer.clamp_max;
      break;
    default:
      break;
  }
  nlohmann::json j = {
      {"dataset", cfg.dataset},
      {"model", model},
      {"regularizer", reg},
      {"optimizer",
       {{"lr_max", cfg.lr_max},
        {"lr_min", cfg.lr_min},
        {"b1", cfg.adam_b1},
        {"b2", cfg.adam_b2},
        {"eps", cfg.adam_eps},
        {"weight_decay", cfg.weight_decay},
        {"schedule_per_epoch", cfg.schedule_per_epoch}}},
      {"epochs", cfg.epochs},
      {"batch_size", cfg.batch_size},
      {"seed", cfg.seed},
      {"loss_clip_B", cfg.loss_clip_B},
      {"output_dir", cfg.output_dir},
  };
  if (cfg.subset_per_class) j["subset_per_class"] = *cfg.subset_per_class;
  if (cfg.test_subset_per_class) {
    j["test_subset_per_class"] = *cfg.test_subset_per_class;
  }
  if (cfg.dataset == "blobs") {
    j["blobs"] = {{"classes", cfg.blobs_classes},
                  {"dim", cfg.blobs_dim},
                  {"train_per_class", cfg.blobs_train_per_class},
                  {"test_per_class", cfg.blobs_test_per_class},
                  {"spread", cfg.blobs_spread}};
  }
  return j;
}

RunConfig load_config(const fs::path& path) {
  if (!fs::exists(path)) {
    throw ConfigError("config file not found: " + path.string());
  }
  return config_from_json(parse_json_file(path));
}

std::pair<data::Dataset, data::Dataset> load_datasets(const RunConfig& cfg) {
  data::Dataset train, test;
  if (cfg.dataset == "blobs") {
    train = data::synthetic_blobs(cfg.blobs_classes, cfg.blobs_dim,
                                  cfg.blobs_train_per_class, cfg.seed ^ 0x11,
                                  cfg.blobs_spread, 0);
    // same class means, fresh noise
    test = data::synthetic_blobs(cfg.blobs_classes, cfg.blobs_dim,
                                 cfg.blobs_test_per_class, cfg.seed ^ 0x11,
                                 cfg.blobs_spread, 1);
  } else if (cfg.dataset == "mnist") {
    const fs::path root = data_root() / "mnist";
    const fs::path paths[4] = {
        root / "train-images-idx3-ubyte", root / "train-labels-idx1-ubyte",
        root / "t10k-images-idx3-ubyte", root / "t10k-labels-idx1-ubyte"};
    for (const auto& p : paths) {
      if (!fs::exists(p)) {
        throw DataError("missing MNIST file " + p.string() +
                        "; expected raw IDX files under $MAGDROP_DATA_ROOT/"
                        "mnist (big-endian IDX, magic 0x803/0x801)");
      }
    }
    train = data::load_idx(paths[0], paths[1]);
    test = data::load_idx(paths[2], paths[3]);
    train.name = "mnist-train";
    test.name = "mnist-test";
  } else {  // cifar10
    const fs::path root = data_root() / "cifar10";
    std::vector<fs::path> train_paths;
    for (int i = 1; i <= 5; ++i) {
      train_paths.push_back(root /
                            ("data_batch_" + std::to_string(i) + ".bin"));
    }
    const fs::path test_path = root / "test_batch.bin";
    for (const auto& p : train_paths) {
      if (!fs::exists(p)) {
        throw DataError("missing CIFAR-10 file " + p.string() +
                        "; expected 3073-byte-record binaries under "
                        "$MAGDROP_DATA_ROOT/cifar10");
      }
    }
    if (!fs::exists(test_path)) {
      throw DataError("missing CIFAR-10 file " + test_path.string());
    }
    train = data::load_cifar10_bin(train_paths);
    test = data::load_cifar10_bin({test_path});
    train.name = "cifar10-train";
    test.name = "cifar10-test";
  }
  if (cfg.subset_per_class) {
    train = data::subset_per_class(train, *cfg.subset_per_class);
  }
  if (cfg.test_subset_per_class) {
    test = data::subset_per_class(test, *cfg.test_subset_per_class);
  }
  return {std::move(train), std::move(test)};
}

nn::ModelSpec build_model(const RunConfig& cfg, const data::Dataset& train) {
  nn::ModelSpec model;
  model.seed = cfg.seed;
  const Index classes = train.num_classes;
  if (cfg.model.arch == "mlp") {
    model.input_shape = {train.features()};
    Index prev = train.features();
    for (Index h : cfg.model.hidden) {
      model.layers.push_back(nn::Dense{prev, h});
      model.layers.push_back(nn::ReLU{});
      prev = h;
    }
    model.layers.push_back(nn::Dense{prev, classes});
    model.layers.push_back(nn::SoftmaxCrossEntropy{});
  } else {
    if (train.image_shape.size() != 3) {
      throw ConfigError("cnn arch needs image-shaped data");
    }
    model.input_shape = train.image_shape;
    Index ch = train.image_shape[0];
    Index h = train.image_shape[1], w = train.image_shape[2];
    for (const auto& c : cfg.model.conv) {
      model.layers.push_back(nn::Conv2D{ch, c.out_ch, c.kernel, c.stride});
      model.layers.push_back(nn::ReLU{});
      ch = c.out_ch;
      h = (h - c.kernel) / c.stride + 1;
      w = (w - c.kernel) / c.stride + 1;
    }
    model.layers.push_back(nn::Flatten{});
    Index prev = ch * h * w;
    for (Index hd : cfg.model.hidden) {
      model.layers.push_back(nn::Dense{prev, hd});
      model.layers.push_back(nn::ReLU{});
      prev = hd;
    }
    model.layers.push_back(nn::Dense{prev, classes});
    model.layers.push_back(nn::SoftmaxCrossEntropy{});
  }
  nn::validate(model);
  return model;
}

namespace {

struct EvalResult {
  double acc = 0.0;
  double loss = 0.0;
};

EvalResult evaluate(const nn::ModelSpec& model,
                    const std::vector<nn::LayerState>& states,
                    const data::Dataset& ds) {
  constexpr Index kChunk = 512;
  long correct = 0;
  double loss_sum = 0.0;
  std::vector<Index> idx;
  for (Index start = 0; start < ds.size(); start += kChunk) {
    const Index end = std::min(ds.size(), start + kChunk);
    idx.clear();
    for (Index i = start; i < end; ++i) idx.push_back(i);
    auto [batch, labels] = data::gather(ds, idx, model.input_shape);
    const auto pred = nn::predict(model, states, batch);
    for (std::size_t i = 0; i < pred.size(); ++i) {
      if (pred[i] == labels[i]) ++correct;
    }
    loss_sum += nn::mean_loss(model, states, batch, labels) *
                static_cast<double>(end - start);
  }
  EvalResult r;
  r.acc = 100.0 * static_cast<double>(correct) /
          static_cast<double>(ds.size());
  r.loss = loss_sum / static_cast<double>(ds.size());
  return r;
}

std::string metrics_csv(const RunMetrics& m) {
  std::ostringstream os;
  os << "epoch,train_acc,test_acc,train_loss,test_loss,gen_gap\r\n";
  for (std::size_t e = 0; e < m.train_acc.size(); ++e) {
    os << e << ',' << format_double(m.train_acc[e]) << ','
       << format_double(m.test_acc[e]) << ','
       << format_double(m.train_loss[e]) << ','
       << format_double(m.test_loss[e]) << ','
       << format_double(m.gen_gap[e]) << "\r\n";
  }
  return os.str();
}

std::string rate_trace_csv(const RunMetrics& m) {
  std::ostringstream os;
  os << "epoch";
  for (std::size_t layer : m.hooked_layers) os << ",layer_" << layer;
  os << "\r\n";
  for (std::size_t e = 0; e < m.epoch_rates.size(); ++e) {
    os << (e + 1);
    for (double r : m.epoch_rates[e]) os << ',' << format_double(r);
    os << "\r\n";
  }
  return os.str();
}

}  // namespace

TrainResult cmd_train(const RunConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  auto [train_set, test_set] = load_datasets(cfg);
  TrainResult result;
  result.model = build_model(cfg, train_set);
  result.states = nn::init_states(result.model);
  nn::ModelSpec& model = result.model;
  auto& states = result.states;

  const auto hooked = nn::relu_layers(model);
  std::unique_ptr<reg::MagDropHook> magdrop;
  std::unique_ptr<reg::FixedDropoutHook> dropout;
  nn::ActivationHook* hook = nullptr;
  if (cfg.regularizer.kind == RegularizerKind::MagDrop) {
    reg::MagDropState st;
    st.p_base = cfg.regularizer.p_base;
    st.beta = cfg.regularizer.beta;
    st.tau = cfg.regularizer.tau;
    st.clamp_max = cfg.regularizer.clamp_max;
    st.rng_seed = cfg.seed ^ 0xD20Full;  // mask stream independent of shuffle
    magdrop = std::make_unique<reg::MagDropHook>(std::move(st), hooked);
    hook = magdrop.get();
  } else if (cfg.regularizer.kind == RegularizerKind::Dropout) {
    dropout = std::make_unique<reg::FixedDropoutHook>(
        cfg.regularizer.p, cfg.seed ^ 0xD20Full, hooked);
    hook = dropout.get();
  }

  // optimizer over all parameterized layers
  std::vector<Tensor*> params;
  std::vector<std::string> names;
  std::vector<std::size_t> param_layers;
  for (std::size_t i = 0; i < states.size(); ++i) {
    if (states[i].weights.empty()) continue;
    params.push_back(&states[i].weights);
    names.push_back("layer" + std::to_string(i) + ".weights");
    params.push_back(&states[i].bias);
    names.push_back("layer" + std::to_string(i) + ".bias");
    param_layers.push_back(i);
  }
  optim::AdamWState opt;
  opt.cfg = {cfg.adam_b1, cfg.adam_b2, cfg.adam_eps, cfg.weight_decay};

  const auto batches0 =
      data::epoch_batches(train_set.size(), cfg.batch_size, cfg.seed, 0);
  const long steps_per_epoch = static_cast<long>(batches0.size());
  optim::CosineSchedule sched{cfg.lr_max, cfg.lr_min,
                              cfg.schedule_per_epoch
                                  ? std::max<long>(1, cfg.epochs)
                                  : std::max<long>(1, cfg.epochs *
                                                          steps_per_epoch)};

  RunMetrics& metrics = result.metrics;
  metrics.hooked_layers = hooked;
  const auto record_eval = [&] {
    const EvalResult tr = evaluate(model, states, train_set);
    const EvalResult te = evaluate(model, states, test_set);
    metrics.train_acc.push_back(tr.acc);
    metrics.test_acc.push_back(te.acc);
    metrics.train_loss.push_back(tr.loss);
    metrics.test_loss.push_back(te.loss);
    metrics.gen_gap.push_back(tr.acc - te.acc);
  };
  record_eval();  // epoch 0: pre-training

  // step counts per hooked layer at the start of the epoch, to compute
  // epoch-mean applied rates from the magdrop trace
  long global_step = 0;
  for (long epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::unordered_map<std::size_t, std::size_t> trace_start;
    std::unordered_map<std::size_t, double> epoch_rate_sum;
    std::unordered_map<std::size_t, long> epoch_rate_n;
    if (magdrop) {
      for (std::size_t l : hooked) {
        trace_start[l] = magdrop->state().rate_trace[l].size();
      }
    }
    const auto batches =
        data::epoch_batches(train_set.size(), cfg.batch_size, cfg.seed, epoch);
    for (const auto& batch_idx : batches) {
      auto [batch, labels] =
          data::gather(train_set, batch_idx, model.input_shape);
      const long sched_step = cfg.schedule_per_epoch ? epoch : global_step;
      const double lr = optim::cosine_lr(sched, sched_step);
      nn::forward(model, states, batch, labels, hook);
      nn::Gradients grads = nn::backward(model, states, labels, hook);
      if (magdrop) magdrop->observe_gradients(states);
      if (cfg.regularizer.kind == RegularizerKind::Agr) {
        reg::agr_rescale(grads, cfg.regularizer.lambda);
      }
      std::vector<const Tensor*> grad_ptrs;
      for (std::size_t l : param_layers) {
        grad_ptrs.push_back(&grads.weight_grads[l]);
        grad_ptrs.push_back(&grads.bias_grads[l]);
      }
      optim::adamw_step(opt, lr, params, grad_ptrs, names);
      ++global_step;
    }
    // epoch-mean applied rate per hooked layer
    std::vector<double> rates;
    for (std::size_t l : hooked) {
      double mean = 0.0;
      if (magdrop) {
        const auto& trace = magdrop->state().rate_trace[l];
        const std::size_t start = trace_start[l];
        // steps where magdrop was a no-op count as rate 0
        double sum = 0.0;
        for (std::size_t k = start; k < trace.size(); ++k) sum += trace[k];
        mean = sum / static_cast<double>(batches.size());
      } else if (dropout) {
        mean = dropout->rate();
      }
      rates.push_back(mean);
    }
    metrics.epoch_rates.push_back(std::move(rates));
    record_eval();
  }

  metrics.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();

  // full per-layer traces for bound measurement
  result.rate_traces.assign(model.layers.size(), {});
  if (magdrop) {
    for (std::size_t l : hooked) {
      result.rate_traces[l] = magdrop->state().rate_trace[l];
    }
  } else if (dropout) {
    for (std::size_t l : hooked) {
      result.rate_traces[l].assign(
          static_cast<std::size_t>(cfg.epochs * steps_per_epoch),
          dropout->rate());
    }
  }
  result.train_set = std::move(train_set);

  if (!cfg.output_dir.empty()) {
    const fs::path dir = cfg.output_dir;
    fs::create_directories(dir);
    write_text(dir / "config.json", to_json(cfg).dump(2) + "\n");
    write_text(dir / "metrics.csv", metrics_csv(metrics));
    write_text(dir / "rate_trace.csv", rate_trace_csv(metrics));
    save_model_state(states, dir / "model_state.bin");
    nlohmann::json meta = {
        {"dataset", result.train_set.name},
        {"train_size", result.train_set.size()},
        {"test_size", test_set.size()},
        {"regularizer", to_string(cfg.regularizer.kind)},
        {"wall_seconds", metrics.wall_seconds},
        {"loss_clip_B", cfg.loss_clip_B},
        {"batch_size", cfg.batch_size},
        {"batch_size_note",
         "desk-scale batch size; the reference experiments used batch 8 over "
         "50 epochs"},
        {"final_train_acc", metrics.train_acc.back()},
        {"final_test_acc", metrics.test_acc.back()},
    };
    write_text(dir / "run_meta.json", meta.dump(2) + "\n");
  }
  return result;
}

void save_model_state(const std::vector<nn::LayerState>& states,
                      const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  const char magic[8] = {'M', 'G', 'D', 'M', '0', '0', '0', '1'};
  out.write(magic, 8);
  const auto write_u64 = [&](std::uint64_t v) {
    out.write(reinterpret_cast<const char*>(&v), 8);
  };
  const auto write_tensor = [&](const Tensor& t) {
    write_u64(t.shape().size());
    for (Index d : t.shape()) write_u64(static_cast<std::uint64_t>(d));
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(t.numel() * sizeof(double)));
  };
  write_u64(states.size());
  for (const auto& s : states) {
    write_tensor(s.weights);
    write_tensor(s.bias);
  }
}

std::vector<nn::LayerState> load_model_state(const nn::ModelSpec& model,
                                             const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::string(magic, 8) != "MGDM0001") {
    throw DataError("bad model state magic in " + path.string());
  }
  const auto read_u64 = [&]() {
    std::uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 8);
    if (!in) throw DataError("truncated model state " + path.string());
    return v;
  };
  const auto read_tensor = [&]() {
    const std::uint64_t ndims = read_u64();
    // parameterless layers serialize as zero-dimensional placeholders
    if (ndims == 0) return Tensor();
    std::vector<Index> shape(ndims);
    for (auto& d : shape) d = static_cast<Index>(read_u64());
    Tensor t(shape);
    in.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.numel() * sizeof(double)));
    if (!in) throw DataError("truncated model state " + path.string());
    return t;
  };
  const std::uint64_t n = read_u64();
  if (n != model.layers.size()) {
    throw DataError("model state layer count mismatch");
  }
  std::vector<nn::LayerState> states(n);
  for (auto& s : states) {
    s.weights = read_tensor();
    s.bias = read_tensor();
  }
  return states;
}

bound::BoundInputs measure_run_dir(const fs::path& run_dir) {
  if (!fs::is_directory(run_dir)) {
    throw DataError(run_dir.string() + " is not a run directory");
  }
  const RunConfig cfg = load_config(run_dir / "config.json");
  auto [train_set, test_set] = load_datasets(cfg);
  const nn::ModelSpec model = build_model(cfg, train_set);
  auto states = load_model_state(model, run_dir / "model_state.bin");

  // rebuild per-layer traces from the epoch-mean CSV
  std::vector<std::vector<double>> traces(model.layers.size());
  const std::string csv = read_text(run_dir / "rate_trace.csv");
  std::istringstream is(csv);
  std::string line;
  std::vector<std::size_t> cols;
  bool header = true;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(ls, field, ',')) fields.push_back(field);
    if (header) {
      for (std::size_t i = 1; i < fields.size(); ++i) {
        if (fields[i].rfind("layer_", 0) != 0) {
          throw DataError("rate_trace.csv: bad column '" + fields[i] + "'");
        }
        cols.push_back(std::stoul(fields[i].substr(6)));
      }
      header = false;
      continue;
    }
    for (std::size_t i = 1; i < fields.size(); ++i) {
      traces[cols[i - 1]].push_back(std::stod(fields[i]));
    }
  }
  if (header) throw StateError("rate_trace.csv missing for bound measurement");
  return bound::measure_from_run(model, states, traces, train_set,
                                 cfg.loss_clip_B, 0.05);
}

bound::BoundReport cmd_bound(bound::BoundInputs inputs,
                             const BoundOptions& opts,
                             const fs::path& out_dir) {
  if (opts.sigma) {
    inputs.sigma = *opts.sigma;
  } else if (opts.backsolve_target) {
    inputs.sigma = bound::back_solve_sigma(*opts.backsolve_target, inputs);
  } else if (!inputs.sigma) {
    throw ConfigError(
        "prior width sigma is required but was not supplied; the reference "
        "tables omit it, so pass --sigma <value> or --backsolve-sigma "
        "<target-gap>");
  }
  const bound::BoundReport report = bound::magdrop_bound(inputs);
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    write_text(out_dir / "bound_report.json",
               bound::to_json(report).dump(2) + "\n");
    write_text(out_dir / "bound_report.txt",
               bound::report_table({{"run", report}}));
  }
  return report;
}

std::vector<CompareRow> collect_compare_rows(
    const std::vector<fs::path>& run_dirs) {
  if (run_dirs.empty()) throw ConfigError("compare: need at least one run dir");
  std::vector<CompareRow> rows;
  for (const auto& dir : run_dirs) {
    const RunConfig cfg = load_config(dir / "config.json");
    CompareRow row;
    row.run_dir = dir.string();
    row.method = to_string(cfg.regularizer.kind);
    row.dataset = cfg.dataset;
    const std::string csv = read_text(dir / "metrics.csv");
    std::istringstream is(csv);
    std::string line, last;
    std::getline(is, line);  // header
    while (std::getline(is, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!line.empty()) last = line;
    }
    if (last.empty()) throw DataError("metrics.csv empty in " + dir.string());
    std::istringstream ls(last);
    std::string f;
    std::vector<double> vals;
    std::getline(ls, f, ',');  // epoch
    while (std::getline(ls, f, ',')) vals.push_back(std::stod(f));
    if (vals.size() < 5) throw DataError("metrics.csv malformed in " + dir.string());
    row.train_acc = vals[0];
    row.test_acc = vals[1];
    row.gen_gap = vals[4];
    const fs::path report = dir / "bound_report.json";
    if (fs::exists(report)) {
      row.bound_gap = parse_json_file(report).at("bound_gap").get<double>();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string compare_table_text(const std::vector<CompareRow>& rows) {
  std::set<std::string> datasets;
  for (const auto& r : rows) datasets.insert(r.dataset);
  std::ostringstream os;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-10s %-10s %12s %12s %12s %12s\n", "Method",
                "Dataset", "Train Acc", "Test Acc", "Gen Gap", "Bound Gap");
  os << buf;
  for (const auto& r : rows) {
    std::string bound_col = "-";
    if (r.bound_gap) {
      char b[32];
      std::snprintf(b, sizeof b, "%.3f", *r.bound_gap);
      bound_col = b;
    }
    std::snprintf(buf, sizeof buf, "%-10s %-10s %12.2f %12.2f %12.2f %12s\n",
                  r.method.c_str(), r.dataset.c_str(), r.train_acc, r.test_acc,
                  r.gen_gap, bound_col.c_str());
    os << buf;
  }
  if (datasets.size() > 1) {
    os << "note: runs span multiple datasets; rows are not directly "
          "comparable\n";
  }
  return os.str();
}

std::string compare_table_csv(const std::vector<CompareRow>& rows) {
  std::ostringstream os;
  os << "method,dataset,train_acc,test_acc,gen_gap,bound_gap\r\n";
  for (const auto& r : rows) {
    os << r.method << ',' << r.dataset << ',' << format_double(r.train_acc)
       << ',' << format_double(r.test_acc) << ',' << format_double(r.gen_gap)
       << ',' << (r.bound_gap ? format_double(*r.bound_gap) : std::string())
       << "\r\n";
  }
  return os.str();
}

std::vector<std::string> validate_run_dir(const fs::path& dir) {
  std::vector<std::string> problems;
  if (!fs::is_directory(dir)) {
    problems.push_back(dir.string() + " is not a directory");
    return problems;
  }
  for (const auto& entry : fs::directory_iterator(dir)) {
    const fs::path& p = entry.path();
    if (p.extension() == ".json") {
      try {
        (void)parse_json_file(p);
      } catch (const std::exception& e) {
        problems.push_back(e.what());
      }
    } else if (p.extension() == ".csv") {
      const std::string text = read_text(p);
      std::istringstream is(text);
      std::string line;
      long expected_fields = -1;
      long line_no = 0;
      while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        if (line.back() != '\r') {
          problems.push_back(p.string() + ":" + std::to_string(line_no) +
                             ": missing CRLF line ending");
          break;
        }
        line.pop_back();
        long fields = 1;
        for (char c : line) {
          if (c == ',') ++fields;
          if (c == '"') {
            problems.push_back(p.string() + ":" + std::to_string(line_no) +
                               ": unexpected quote (writer never quotes)");
            break;
          }
        }
        if (expected_fields < 0) expected_fields = fields;
        else if (fields != expected_fields) {
          problems.push_back(p.string() + ":" + std::to_string(line_no) +
                             ": inconsistent field count");
          break;
        }
      }
    }
  }
  return problems;
}

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"MAGDrop training and PAC-Bayes bound laboratory"};
  app.require_subcommand(1);

  std::string config_path;
  auto* train = app.add_subcommand("train", "train a model from a JSON config");
  train->add_option("--config", config_path, "run config JSON")->required();
  std::string train_output;
  train->add_option("--output", train_output,
                    "override the config's output_dir");

  auto* bound_cmd =
      app.add_subcommand("bound", "compute the PAC-Bayes bound report");
  std::string run_dir, inputs_path, bound_out;
  double sigma_opt = 0.0, backsolve = 0.0;
  auto* run_opt = bound_cmd->add_option("--run", run_dir,
                                        "completed run directory to measure");
  auto* inputs_opt = bound_cmd->add_option(
      "--inputs", inputs_path, "BoundInputs JSON (direct mode)");
  run_opt->excludes(inputs_opt);
  auto* sigma_flag =
      bound_cmd->add_option("--sigma", sigma_opt, "prior width sigma");
  auto* backsolve_flag = bound_cmd->add_option(
      "--backsolve-sigma", backsolve, "back-solve sigma from this target gap");
  sigma_flag->excludes(backsolve_flag);
  bound_cmd->add_option("--out", bound_out, "output directory for the report");

  auto* compare = app.add_subcommand("compare", "tabulate completed runs");
  std::vector<std::string> compare_dirs;
  compare->add_option("dirs", compare_dirs, "run directories")->required();
  std::string compare_csv_out;
  compare->add_option("--csv", compare_csv_out, "also write a CSV table here");

  auto* validate = app.add_subcommand("validate", "check run artifacts");
  std::string validate_dir;
  validate->add_option("dir", validate_dir, "run directory")->required();

  std::vector<const char*> argv;
  argv.push_back("magdrop");
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()),
              const_cast<char**>(argv.data()));
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : ConfigError::exit_code;
  }

  try {
    if (train->parsed()) {
      RunConfig cfg = load_config(config_path);
      if (!train_output.empty()) cfg.output_dir = train_output;
      const TrainResult result = cmd_train(cfg);
      std::cout << "trained " << cfg.dataset << " ("
                << to_string(cfg.regularizer.kind) << "): final train acc "
                << result.metrics.train_acc.back() << "%, test acc "
                << result.metrics.test_acc.back() << "%\n";
      if (!cfg.output_dir.empty()) {
        std::cout << "artifacts in " << cfg.output_dir << "\n";
      }
    } else if (bound_cmd->parsed()) {
      if (run_dir.empty() && inputs_path.empty()) {
        throw ConfigError("bound: pass --run <dir> or --inputs <json>");
      }
      bound::BoundInputs inputs =
          !run_dir.empty()
              ? measure_run_dir(run_dir)
              : bound::bound_inputs_from_json(parse_json_file(inputs_path));
      BoundOptions opts;
      if (sigma_flag->count() > 0) opts.sigma = sigma_opt;
      if (backsolve_flag->count() > 0) opts.backsolve_target = backsolve;
      fs::path out = bound_out;
      if (out.empty() && !run_dir.empty()) out = run_dir;
      const auto report = cmd_bound(std::move(inputs), opts, out);
      std::cout << bound::report_table({{"run", report}});
      if (report.covering_overflow) std::cout << "warning: " << report.note
                                              << "\n";
    } else if (compare->parsed()) {
      std::vector<fs::path> dirs(compare_dirs.begin(), compare_dirs.end());
      const auto rows = collect_compare_rows(dirs);
      std::cout << compare_table_text(rows);
      if (!compare_csv_out.empty()) {
        write_text(compare_csv_out, compare_table_csv(rows));
      }
    } else if (validate->parsed()) {
      const auto problems = validate_run_dir(validate_dir);
      if (!problems.empty()) {
        for (const auto& p : problems) std::cerr << p << "\n";
        return DataError::exit_code;
      }
      std::cout << "ok\n";
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return ConfigError::exit_code;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return DataError::exit_code;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return NumericError::exit_code;
  } catch (const StateError& e) {
    std::cerr << "state error: " << e.what() << "\n";
    return StateError::exit_code;
  }
  return 0;
}

}  // namespace magdrop::harness
