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
#include <string>
#include <vector>

#include "magdrop/tensor.hpp"

namespace magdrop::data {

/// Immutable sample store. images is {N, features}; image_shape describes
/// the per-sample layout ({1,28,28}, {3,32,32}, or {dim} for point sets).
struct Dataset {
  Tensor images;
  std::vector<int> labels;
  std::string name;
  int num_classes = 0;
  std::vector<Index> image_shape;
  /// Upper bound on per-sample L2 norm; for byte-pixel formats this is the
  /// format ceiling sqrt(features), keeping X^2 = features exact.
  double input_norm_bound = 0.0;

  Index size() const { return images.batch(); }
  Index features() const { return images.features(); }
};

/// IDX (big-endian) loader; magic 0x803 for images, 0x801 for labels.
/// Pixels scaled by 1/255 into [0,1].
Dataset load_idx(const std::filesystem::path& images_path,
                 const std::filesystem::path& labels_path);

/// Writes a Dataset whose values are exact multiples of 1/255 back to a
/// pair of IDX files (inverse of load_idx).
void write_idx(const Dataset& ds, const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path);

/// CIFAR-10 binary loader: 3073-byte records, label byte first.
Dataset load_cifar10_bin(const std::vector<std::filesystem::path>& paths);

void write_cifar10_bin(const Dataset& ds, const std::filesystem::path& path);

/// Deterministic shuffled batch index lists for one epoch; the last
/// partial batch is kept.
std::vector<std::vector<Index>> epoch_batches(Index n, Index batch_size,
                                              std::uint64_t shuffle_seed,
                                              long epoch);

/// Assemble a batch tensor of shape {indices.size(), *sample_shape}.
std::pair<Tensor, std::vector<int>> gather(const Dataset& ds,
                                           const std::vector<Index>& indices,
                                           const std::vector<Index>& sample_shape);

/// Gaussian clusters around class-dependent means; linearly separable at
/// the default spread. variant reseeds the noise stream only, so a train
/// and test split share means but not samples.
Dataset synthetic_blobs(int num_classes, Index dim, Index n_per_class,
                        std::uint64_t seed, double spread = 1.0,
                        std::uint64_t variant = 0);

/// Byte-quantized 28x28 10-class pattern dataset in MNIST's layout; a
/// stand-in when the real IDX files are not on disk.
Dataset synthetic_digits(Index n_per_class, std::uint64_t seed,
                         double noise = 0.25);

/// First k samples of each class, original order preserved.
Dataset subset_per_class(const Dataset& ds, Index k);

}  // namespace magdrop::data
