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

#include <cmath>

#include "magdrop/nn.hpp"
#include "magdrop/regularizers.hpp"
#include "test_util.hpp"

using namespace magdrop;
using testutil::make_mlp;

TEST_CASE("identity Dense layer passes input through") {
  nn::ModelSpec model = make_mlp({3, 3}, 1);
  auto states = nn::init_states(model);
  states[0].weights.matrix().setIdentity();
  states[0].bias.array().setZero();
  Tensor x({2, 3}, Eigen::ArrayXd::LinSpaced(6, -1.0, 1.5));
  nn::forward(model, states, x, {0, 1});
  CHECK(states[0].last_activation.array().isApprox(x.array()));
}

TEST_CASE("2x2 Dense forward matches hand-computed softmax cross-entropy") {
  nn::ModelSpec model = make_mlp({2, 2}, 1);
  auto states = nn::init_states(model);
  // W = [[1, -1], [2, 0.5]], b = [0.1, -0.2], x = [0.3, 0.7]
  states[0].weights.matrix() << 1.0, -1.0, 2.0, 0.5;
  states[0].bias[0] = 0.1;
  states[0].bias[1] = -0.2;
  Tensor x({1, 2});
  x[0] = 0.3;
  x[1] = 0.7;
  const auto r = nn::forward(model, states, x, {1});
  // logits: z0 = 0.3*1 + 0.7*2 + 0.1 = 1.8; z1 = -0.3 + 0.35 - 0.2 = -0.15
  CHECK(r.logits[0] == doctest::Approx(1.8).epsilon(1e-12));
  CHECK(r.logits[1] == doctest::Approx(-0.15).epsilon(1e-12));
  const double z0 = 1.8, z1 = -0.15;
  const double expected = std::log(std::exp(z0) + std::exp(z1)) - z1;
  CHECK(r.loss == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("ReLU zeroes negatives and keeps the rest") {
  nn::ModelSpec model;
  model.input_shape = {4};
  model.layers = {nn::ReLU{}, nn::SoftmaxCrossEntropy{}};
  auto states = nn::init_states(model);
  Tensor x({1, 4});
  x[0] = -1.0; x[1] = 0.0; x[2] = 2.5; x[3] = -0.1;
  nn::forward(model, states, x, {2});
  const Tensor& a = states[0].last_activation;
  CHECK(a[0] == 0.0);
  CHECK(a[1] == 0.0);
  CHECK(a[2] == 2.5);
  CHECK(a[3] == 0.0);
}

TEST_CASE("softmax gradient with zero weights equals (uniform - target)/n") {
  nn::ModelSpec model = make_mlp({3, 4}, 1);
  auto states = nn::init_states(model);
  states[0].weights.array().setZero();
  states[0].bias.array().setZero();
  Rng rng(5);
  Tensor x = testutil::random_batch({3}, 2, rng);
  nn::forward(model, states, x, {1, 3});
  nn::backward(model, states, {1, 3});
  const Tensor& g = *states.back().last_activation_grad;
  for (Index i = 0; i < 2; ++i) {
    for (Index j = 0; j < 4; ++j) {
      const double onehot = (j == (i == 0 ? 1 : 3)) ? 1.0 : 0.0;
      CHECK(g[i * 4 + j] == doctest::Approx((0.25 - onehot) / 2.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("MLP 784-16-10 gradients match central finite differences") {
  nn::ModelSpec model = make_mlp({784, 16, 10}, 11);
  auto states = nn::init_states(model);
  Rng rng(77);
  Tensor x = testutil::random_batch({784}, 4, rng);
  auto t = testutil::random_targets(4, 10, rng);
  const double err = testutil::finite_difference_max_rel_error(
      model, states, x, t, /*subsample=*/300, /*pick_seed=*/3);
  CHECK(err <= 1e-4);
}

TEST_CASE("small CNN gradients match central finite differences") {
  nn::ModelSpec model;
  model.seed = 21;
  model.input_shape = {1, 6, 6};
  model.layers = {nn::Conv2D{1, 2, 3, 1}, nn::ReLU{}, nn::Flatten{},
                  nn::Dense{32, 5}, nn::SoftmaxCrossEntropy{}};
  auto states = nn::init_states(model);
  Rng rng(99);
  Tensor x = testutil::random_batch({1, 6, 6}, 3, rng);
  auto t = testutil::random_targets(3, 5, rng);
  const double err =
      testutil::finite_difference_max_rel_error(model, states, x, t);
  CHECK(err <= 1e-4);
}

TEST_CASE("strided conv gradients match finite differences") {
  nn::ModelSpec model;
  model.seed = 8;
  model.input_shape = {2, 7, 7};
  model.layers = {nn::Conv2D{2, 3, 3, 2}, nn::ReLU{}, nn::Flatten{},
                  nn::Dense{27, 4}, nn::SoftmaxCrossEntropy{}};
  auto states = nn::init_states(model);
  Rng rng(123);
  Tensor x = testutil::random_batch({2, 7, 7}, 2, rng);
  auto t = testutil::random_targets(2, 4, rng);
  const double err =
      testutil::finite_difference_max_rel_error(model, states, x, t);
  CHECK(err <= 1e-4);
}

TEST_CASE("all-ones mask at rate zero leaves gradients unchanged") {
  nn::ModelSpec model = make_mlp({6, 5, 3}, 4);
  auto states = nn::init_states(model);
  auto states2 = states;
  Rng rng(17);
  Tensor x = testutil::random_batch({6}, 3, rng);
  auto t = testutil::random_targets(3, 3, rng);

  const auto plain = nn::forward(model, states, x, t);
  const auto g1 = nn::backward(model, states, t);

  reg::FixedDropoutHook hook(0.0, 99, nn::relu_layers(model));
  const auto hooked = nn::forward(model, states2, x, t, &hook);
  const auto g2 = nn::backward(model, states2, t, &hook);

  CHECK(plain.loss == hooked.loss);
  for (std::size_t l = 0; l < g1.weight_grads.size(); ++l) {
    if (g1.weight_grads[l].empty()) continue;
    CHECK(g1.weight_grads[l].array().isApprox(g2.weight_grads[l].array()));
  }
}

TEST_CASE("predict takes the row argmax, ties to the lowest index") {
  nn::ModelSpec model;
  model.input_shape = {3};
  model.layers = {nn::SoftmaxCrossEntropy{}};
  auto states = nn::init_states(model);
  Tensor logits({3, 3});
  logits.matrix() << 0.1, 2.0, -1.0,   // class 1
                     0.5, 0.5, 0.5,    // tie -> 0
                     -3.0, -1.0, -1.0; // tie between 1,2 -> 1
  const auto pred = nn::predict(model, states, logits);
  CHECK(pred == std::vector<int>{1, 0, 1});
}

TEST_CASE("predict matches a brute-force per-row argmax") {
  nn::ModelSpec model = make_mlp({5, 4}, 31);
  auto states = nn::init_states(model);
  Rng rng(64);
  Tensor x = testutil::random_batch({5}, 8, rng);
  const auto pred = nn::predict(model, states, x);
  const Tensor logits = nn::infer_logits(model, states, x);
  for (Index i = 0; i < 8; ++i) {
    int best = 0;
    for (Index j = 0; j < 4; ++j) {
      if (logits[i * 4 + j] > logits[i * 4 + best]) best = (int)j;
    }
    CHECK(pred[(std::size_t)i] == best);
  }
}

TEST_CASE("forward is deterministic for identical seeds") {
  for (int run = 0; run < 2; ++run) {
    static double first_loss;
    nn::ModelSpec model = make_mlp({10, 8, 3}, 1234);
    auto states = nn::init_states(model);
    Rng rng(55);
    Tensor x = testutil::random_batch({10}, 4, rng);
    const auto r = nn::forward(model, states, x, {0, 1, 2, 0});
    if (run == 0) first_loss = r.loss;
    else CHECK(r.loss == first_loss);
  }
}

TEST_CASE("ReLU is 1-Lipschitz on random pairs") {
  Rng rng(202);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor x = testutil::random_batch({12}, 1, rng);
    Tensor y = testutil::random_batch({12}, 1, rng);
    const Eigen::ArrayXd rx = x.array().max(0.0);
    const Eigen::ArrayXd ry = y.array().max(0.0);
    const double lhs = std::sqrt((rx - ry).square().sum());
    const double rhs = std::sqrt((x.array() - y.array()).square().sum());
    CHECK(lhs <= rhs + 1e-12);
  }
}

TEST_CASE("cross-entropy loss is nonnegative and the clipped variant <= B") {
  nn::ModelSpec model = make_mlp({6, 4}, 77);
  auto states = nn::init_states(model);
  Rng rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor x = testutil::random_batch({6}, 5, rng);
    auto t = testutil::random_targets(5, 4, rng);
    const double loss = nn::mean_loss(model, states, x, t);
    CHECK(loss >= 0.0);
    const double clipped = nn::mean_loss(model, states, x, t, 1.0);
    CHECK(clipped <= 1.0);
    CHECK(clipped >= 0.0);
  }
}

TEST_CASE("backward before forward is a state error") {
  nn::ModelSpec model = make_mlp({4, 2}, 3);
  auto states = nn::init_states(model);
  CHECK_THROWS_AS(nn::backward(model, states, {0}), StateError);
}

TEST_CASE("construction rejects incompatible layer dimensions") {
  nn::ModelSpec model;
  model.input_shape = {4};
  model.layers = {nn::Dense{5, 2}, nn::SoftmaxCrossEntropy{}};
  CHECK_THROWS_AS(nn::validate(model), ConfigError);

  nn::ModelSpec no_head = make_mlp({4, 2}, 0);
  no_head.layers.pop_back();
  CHECK_THROWS_AS(nn::validate(no_head), ConfigError);
}

TEST_CASE("batch shape mismatch is rejected") {
  nn::ModelSpec model = make_mlp({4, 2}, 3);
  auto states = nn::init_states(model);
  Tensor bad({2, 5});
  CHECK_THROWS_AS(nn::forward(model, states, bad, {0, 1}), ConfigError);
}
