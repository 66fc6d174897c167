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

#include "magdrop/data_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>

namespace magdrop::data {

namespace {

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;
constexpr Index kCifarRecord = 3073;

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& b, std::size_t off) {
  return (std::uint32_t(b[off]) << 24) | (std::uint32_t(b[off + 1]) << 16) |
         (std::uint32_t(b[off + 2]) << 8) | std::uint32_t(b[off + 3]);
}

void write_be32(std::ofstream& out, std::uint32_t v) {
  const char bytes[4] = {char(v >> 24), char(v >> 16), char(v >> 8), char(v)};
  out.write(bytes, 4);
}

void finalize_bound(Dataset& ds, double bound) {
  double max_norm = 0.0;
  const auto m = ds.images.matrix();
  for (Index i = 0; i < m.rows(); ++i) {
    max_norm = std::max(max_norm, m.row(i).norm());
  }
  ds.input_norm_bound = bound > 0.0 ? bound : max_norm;
  if (max_norm > ds.input_norm_bound + 1e-12) {
    throw DataError("input_norm_bound violated: " + std::to_string(max_norm) +
                    " > " + std::to_string(ds.input_norm_bound));
  }
}

}  // namespace

Dataset load_idx(const std::filesystem::path& images_path,
                 const std::filesystem::path& labels_path) {
  const auto ib = read_file(images_path);
  const auto lb = read_file(labels_path);
  if (ib.size() < 16) throw DataError("IDX image file truncated header");
  if (lb.size() < 8) throw DataError("IDX label file truncated header");
  const auto im = read_be32(ib, 0);
  if (im != kIdxImagesMagic) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "0x%08X", im);
    throw DataError(std::string("IDX image magic mismatch, observed ") + buf);
  }
  const auto lm = read_be32(lb, 0);
  if (lm != kIdxLabelsMagic) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "0x%08X", lm);
    throw DataError(std::string("IDX label magic mismatch, observed ") + buf);
  }
  const Index n = read_be32(ib, 4);
  const Index rows = read_be32(ib, 8);
  const Index cols = read_be32(ib, 12);
  const Index n_labels = read_be32(lb, 4);
  if (n != n_labels) {
    throw DataError("IDX image/label count mismatch: " + std::to_string(n) +
                    " vs " + std::to_string(n_labels));
  }
  const Index features = rows * cols;
  if (static_cast<Index>(ib.size()) != 16 + n * features) {
    throw DataError("IDX image file length mismatch");
  }
  if (static_cast<Index>(lb.size()) != 8 + n) {
    throw DataError("IDX label file length mismatch");
  }
  Dataset ds;
  ds.name = images_path.filename().string();
  ds.num_classes = 10;
  ds.image_shape = {1, rows, cols};
  ds.images = Tensor({n, features});
  for (Index i = 0; i < n * features; ++i) {
    ds.images[i] = static_cast<double>(ib[16 + i]) / 255.0;
  }
  ds.labels.resize(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    ds.labels[static_cast<std::size_t>(i)] = lb[8 + i];
  }
  finalize_bound(ds, std::sqrt(static_cast<double>(features)));
  return ds;
}

void write_idx(const Dataset& ds, const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path) {
  const Index rows = ds.image_shape.size() == 3 ? ds.image_shape[1] : 1;
  const Index cols = ds.image_shape.size() == 3 ? ds.image_shape[2]
                                                : ds.features();
  std::ofstream im(images_path, std::ios::binary);
  if (!im) throw DataError("cannot write " + images_path.string());
  write_be32(im, kIdxImagesMagic);
  write_be32(im, static_cast<std::uint32_t>(ds.size()));
  write_be32(im, static_cast<std::uint32_t>(rows));
  write_be32(im, static_cast<std::uint32_t>(cols));
  for (Index i = 0; i < ds.images.numel(); ++i) {
    const auto byte =
        static_cast<std::uint8_t>(std::llround(ds.images[i] * 255.0));
    im.put(static_cast<char>(byte));
  }
  std::ofstream lb(labels_path, std::ios::binary);
  if (!lb) throw DataError("cannot write " + labels_path.string());
  write_be32(lb, kIdxLabelsMagic);
  write_be32(lb, static_cast<std::uint32_t>(ds.size()));
  for (int label : ds.labels) lb.put(static_cast<char>(label));
}

Dataset load_cifar10_bin(const std::vector<std::filesystem::path>& paths) {
  std::vector<std::uint8_t> all;
  for (const auto& p : paths) {
    auto b = read_file(p);
    if (b.size() % kCifarRecord != 0) {
      throw DataError("CIFAR-10 file length not divisible by 3073: " +
                      p.string());
    }
    all.insert(all.end(), b.begin(), b.end());
  }
  const Index n = static_cast<Index>(all.size()) / kCifarRecord;
  Dataset ds;
  ds.name = "cifar10";
  ds.num_classes = 10;
  ds.image_shape = {3, 32, 32};
  ds.images = Tensor({n, 3072});
  ds.labels.resize(static_cast<std::size_t>(n));
  for (Index r = 0; r < n; ++r) {
    const std::size_t base = static_cast<std::size_t>(r) * kCifarRecord;
    ds.labels[static_cast<std::size_t>(r)] = all[base];
    for (Index i = 0; i < 3072; ++i) {
      ds.images[r * 3072 + i] =
          static_cast<double>(all[base + 1 + i]) / 255.0;
    }
  }
  finalize_bound(ds, std::sqrt(3072.0));
  return ds;
}

void write_cifar10_bin(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  for (Index r = 0; r < ds.size(); ++r) {
    out.put(static_cast<char>(ds.labels[static_cast<std::size_t>(r)]));
    for (Index i = 0; i < ds.features(); ++i) {
      out.put(static_cast<char>(
          std::llround(ds.images[r * ds.features() + i] * 255.0)));
    }
  }
}

std::vector<std::vector<Index>> epoch_batches(Index n, Index batch_size,
                                              std::uint64_t shuffle_seed,
                                              long epoch) {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  Rng rng = Rng::seeded(shuffle_seed,
                        0x4000 + static_cast<std::uint64_t>(epoch));
  const std::vector<Index> perm = fisher_yates_permutation(n, rng);
  std::vector<std::vector<Index>> batches;
  for (Index start = 0; start < n; start += batch_size) {
    const Index end = std::min(n, start + batch_size);
    batches.emplace_back(perm.begin() + start, perm.begin() + end);
  }
  return batches;
}

std::pair<Tensor, std::vector<int>> gather(
    const Dataset& ds, const std::vector<Index>& indices,
    const std::vector<Index>& sample_shape) {
  const Index features = Tensor::product(sample_shape);
  if (features != ds.features()) {
    throw ConfigError("gather: sample shape does not match dataset features");
  }
  std::vector<Index> shape = {static_cast<Index>(indices.size())};
  shape.insert(shape.end(), sample_shape.begin(), sample_shape.end());
  Tensor batch(shape);
  std::vector<int> labels(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const Index src = indices[i];
    std::copy(ds.images.data() + src * features,
              ds.images.data() + (src + 1) * features,
              batch.data() + static_cast<Index>(i) * features);
    labels[i] = ds.labels[static_cast<std::size_t>(src)];
  }
  return {std::move(batch), std::move(labels)};
}

Dataset synthetic_blobs(int num_classes, Index dim, Index n_per_class,
                        std::uint64_t seed, double spread,
                        std::uint64_t variant) {
  if (dim < 1) throw ConfigError("synthetic_blobs: dim must be >= 1");
  Rng mean_rng = Rng::seeded(seed, 0x5001);
  Rng noise_rng = Rng::seeded(seed, 0x5002 + 0x100 * variant);
  RowMatrixXd means(num_classes, dim);
  for (Index i = 0; i < means.size(); ++i) {
    means.data()[i] = 3.0 * mean_rng.normal();
  }
  const Index n = num_classes * n_per_class;
  Dataset ds;
  ds.name = "blobs";
  ds.num_classes = num_classes;
  ds.image_shape = {dim};
  ds.images = Tensor({n, dim});
  ds.labels.resize(static_cast<std::size_t>(n));
  Index row = 0;
  for (int c = 0; c < num_classes; ++c) {
    for (Index k = 0; k < n_per_class; ++k, ++row) {
      for (Index j = 0; j < dim; ++j) {
        ds.images[row * dim + j] = means(c, j) + spread * noise_rng.normal();
      }
      ds.labels[static_cast<std::size_t>(row)] = c;
    }
  }
  finalize_bound(ds, 0.0);
  return ds;
}

Dataset synthetic_digits(Index n_per_class, std::uint64_t seed, double noise) {
  constexpr Index kSide = 28;
  constexpr Index kFeatures = kSide * kSide;
  constexpr int kClasses = 10;
  Rng tmpl_rng = Rng::seeded(seed, 0x6001);
  Rng noise_rng = Rng::seeded(seed, 0x6002);
  // one smooth-ish random template per class
  RowMatrixXd templates(kClasses, kFeatures);
  for (int c = 0; c < kClasses; ++c) {
    for (Index i = 0; i < kFeatures; ++i) {
      templates(c, i) = tmpl_rng.uniform();
    }
  }
  const Index n = kClasses * n_per_class;
  Dataset ds;
  ds.name = "synthetic-digits";
  ds.num_classes = kClasses;
  ds.image_shape = {1, kSide, kSide};
  ds.images = Tensor({n, kFeatures});
  ds.labels.resize(static_cast<std::size_t>(n));
  Index row = 0;
  for (int c = 0; c < kClasses; ++c) {
    for (Index k = 0; k < n_per_class; ++k, ++row) {
      for (Index i = 0; i < kFeatures; ++i) {
        double v = templates(c, i) + noise * noise_rng.normal();
        v = std::clamp(v, 0.0, 1.0);
        // byte quantization keeps the IDX round-trip exact
        ds.images[row * kFeatures + i] = std::round(v * 255.0) / 255.0;
      }
      ds.labels[static_cast<std::size_t>(row)] = c;
    }
  }
  finalize_bound(ds, std::sqrt(static_cast<double>(kFeatures)));
  return ds;
}

Dataset subset_per_class(const Dataset& ds, Index k) {
  std::map<int, Index> counts;
  std::vector<Index> keep;
  for (Index i = 0; i < ds.size(); ++i) {
    if (counts[ds.labels[static_cast<std::size_t>(i)]]++ < k) keep.push_back(i);
  }
  Dataset out;
  out.name = ds.name;
  out.num_classes = ds.num_classes;
  out.image_shape = ds.image_shape;
  out.input_norm_bound = ds.input_norm_bound;
  const Index features = ds.features();
  out.images = Tensor({static_cast<Index>(keep.size()), features});
  out.labels.resize(keep.size());
  for (std::size_t i = 0; i < keep.size(); ++i) {
    std::copy(ds.images.data() + keep[i] * features,
              ds.images.data() + (keep[i] + 1) * features,
              out.images.data() + static_cast<Index>(i) * features);
    out.labels[i] = ds.labels[static_cast<std::size_t>(keep[i])];
  }
  return out;
}

}  // namespace magdrop::data
