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

#include "magdrop/nn.hpp"

#include <algorithm>
#include <cmath>

namespace magdrop::nn {

namespace {

Index conv_out_dim(Index in, Index kernel, Index stride) {
  return (in - kernel) / stride + 1;
}

std::vector<Index> output_shape_of(const LayerSpec& layer,
                                   const std::vector<Index>& in_shape,
                                   std::size_t index) {
  const auto fail = [index](const std::string& msg) -> std::vector<Index> {
    throw ConfigError("layer " + std::to_string(index) + ": " + msg);
  };
  if (std::holds_alternative<Dense>(layer)) {
    const auto& d = std::get<Dense>(layer);
    if (in_shape.size() != 1 || in_shape[0] != d.in) {
      return fail("Dense expects flat input of size " + std::to_string(d.in));
    }
    if (d.in < 1 || d.out < 1) return fail("Dense dims must be positive");
    return {d.out};
  }
  if (std::holds_alternative<ReLU>(layer)) {
    return in_shape;
  }
  if (std::holds_alternative<Conv2D>(layer)) {
    const auto& c = std::get<Conv2D>(layer);
    if (in_shape.size() != 3 || in_shape[0] != c.in_ch) {
      return fail("Conv2D expects {in_ch,h,w} input with in_ch=" +
                  std::to_string(c.in_ch));
    }
    if (c.kernel < 1 || c.stride < 1 || c.out_ch < 1) {
      return fail("Conv2D kernel/stride/out_ch must be positive");
    }
    if (in_shape[1] < c.kernel || in_shape[2] < c.kernel) {
      return fail("Conv2D kernel larger than input");
    }
    return {c.out_ch, conv_out_dim(in_shape[1], c.kernel, c.stride),
            conv_out_dim(in_shape[2], c.kernel, c.stride)};
  }
  if (std::holds_alternative<Flatten>(layer)) {
    return {Tensor::product(in_shape)};
  }
  // SoftmaxCrossEntropy
  if (in_shape.size() != 1) return fail("loss head expects flat logits");
  return in_shape;
}

/// Row-wise stable log-sum-exp.
Eigen::VectorXd log_sum_exp_rows(const Eigen::Map<const RowMatrixXd>& m) {
  const Eigen::VectorXd row_max = m.rowwise().maxCoeff();
  return row_max.array() +
         (m.colwise() - row_max).array().exp().rowwise().sum().log();
}

Eigen::VectorXd per_sample_xent(const Tensor& logits,
                                const std::vector<int>& targets) {
  const auto m = logits.matrix();
  if (static_cast<Index>(targets.size()) != m.rows()) {
    throw StateError("targets size does not match batch");
  }
  const Eigen::VectorXd lse = log_sum_exp_rows(m);
  Eigen::VectorXd loss(m.rows());
  for (Index i = 0; i < m.rows(); ++i) {
    const int t = targets[static_cast<std::size_t>(i)];
    if (t < 0 || t >= m.cols()) {
      throw DataError("target class out of range: " + std::to_string(t));
    }
    loss[i] = lse[i] - m(i, t);
  }
  return loss;
}

Tensor dense_forward(const Dense&, const LayerState& s, const Tensor& x) {
  Tensor z({x.batch(), s.bias.numel()});
  z.matrix() = x.matrix() * s.weights.matrix();
  z.matrix().rowwise() +=
      Eigen::Map<const Eigen::RowVectorXd>(s.bias.data(), s.bias.numel());
  return z;
}

Tensor conv_forward(const Conv2D& c, const LayerState& s, const Tensor& x) {
  const Index n = x.shape()[0];
  const Index h = x.shape()[2], w = x.shape()[3];
  const Index oh = conv_out_dim(h, c.kernel, c.stride);
  const Index ow = conv_out_dim(w, c.kernel, c.stride);
  Tensor z({n, c.out_ch, oh, ow});
  const double* xd = x.data();
  const double* wd = s.weights.data();  // {oc, ic, k, k}
  const double* bd = s.bias.data();
  double* zd = z.data();
  for (Index b = 0; b < n; ++b) {
    for (Index oc = 0; oc < c.out_ch; ++oc) {
      for (Index i = 0; i < oh; ++i) {
        for (Index j = 0; j < ow; ++j) {
          double acc = bd[oc];
          for (Index ic = 0; ic < c.in_ch; ++ic) {
            for (Index ki = 0; ki < c.kernel; ++ki) {
              const double* xrow =
                  xd + ((b * c.in_ch + ic) * h + i * c.stride + ki) * w +
                  j * c.stride;
              const double* wrow =
                  wd + ((oc * c.in_ch + ic) * c.kernel + ki) * c.kernel;
              for (Index kj = 0; kj < c.kernel; ++kj) {
                acc += xrow[kj] * wrow[kj];
              }
            }
          }
          zd[((b * c.out_ch + oc) * oh + i) * ow + j] = acc;
        }
      }
    }
  }
  return z;
}

Tensor layer_forward(const LayerSpec& layer, const LayerState& s,
                     const Tensor& x, const std::vector<Index>& out_shape) {
  if (std::holds_alternative<Dense>(layer)) {
    return dense_forward(std::get<Dense>(layer), s, x);
  }
  if (std::holds_alternative<ReLU>(layer)) {
    Tensor z = x;
    z.array() = z.array().max(0.0);
    return z;
  }
  if (std::holds_alternative<Conv2D>(layer)) {
    return conv_forward(std::get<Conv2D>(layer), s, x);
  }
  if (std::holds_alternative<Flatten>(layer)) {
    std::vector<Index> shape = {x.batch()};
    shape.insert(shape.end(), out_shape.begin(), out_shape.end());
    return Tensor(shape, x.array());
  }
  throw StateError("layer_forward called on loss head");
}

}  // namespace

Index validate(const ModelSpec& model) {
  if (model.layers.empty()) throw ConfigError("model has no layers");
  if (model.input_shape.empty()) throw ConfigError("model input_shape empty");
  for (Index d : model.input_shape) {
    if (d < 1) throw ConfigError("model input_shape has non-positive dim");
  }
  std::vector<Index> shape = model.input_shape;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const bool is_head =
        std::holds_alternative<SoftmaxCrossEntropy>(model.layers[i]);
    if (is_head != (i + 1 == model.layers.size())) {
      throw ConfigError(
          "model must end with exactly one SoftmaxCrossEntropy head");
    }
    shape = output_shape_of(model.layers[i], shape, i);
  }
  return shape[0];
}

std::vector<std::vector<Index>> layer_output_shapes(const ModelSpec& model) {
  std::vector<std::vector<Index>> shapes;
  std::vector<Index> shape = model.input_shape;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    shape = output_shape_of(model.layers[i], shape, i);
    shapes.push_back(shape);
  }
  return shapes;
}

std::vector<std::size_t> relu_layers(const ModelSpec& model) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    if (std::holds_alternative<ReLU>(model.layers[i])) idx.push_back(i);
  }
  return idx;
}

std::vector<LayerState> init_states(const ModelSpec& model) {
  validate(model);
  std::vector<LayerState> states(model.layers.size());
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    Rng rng = Rng::seeded(model.seed, 0x1000 + i);
    if (const auto* d = std::get_if<Dense>(&model.layers[i])) {
      const double bound = std::sqrt(6.0 / static_cast<double>(d->in));
      states[i].weights = Tensor({d->in, d->out});
      for (Index k = 0; k < states[i].weights.numel(); ++k) {
        states[i].weights[k] = rng.uniform(-bound, bound);
      }
      states[i].bias = Tensor({d->out});
    } else if (const auto* c = std::get_if<Conv2D>(&model.layers[i])) {
      const double fan_in =
          static_cast<double>(c->in_ch * c->kernel * c->kernel);
      const double bound = std::sqrt(6.0 / fan_in);
      states[i].weights = Tensor({c->out_ch, c->in_ch, c->kernel, c->kernel});
      for (Index k = 0; k < states[i].weights.numel(); ++k) {
        states[i].weights[k] = rng.uniform(-bound, bound);
      }
      states[i].bias = Tensor({c->out_ch});
    }
  }
  return states;
}

ForwardResult forward(const ModelSpec& model, std::vector<LayerState>& states,
                      const Tensor& batch, const std::vector<int>& targets,
                      ActivationHook* hook) {
  if (states.size() != model.layers.size()) {
    throw StateError("states/layers size mismatch");
  }
  const auto shapes = layer_output_shapes(model);
  {
    std::vector<Index> expect = {batch.batch()};
    expect.insert(expect.end(), model.input_shape.begin(),
                  model.input_shape.end());
    if (batch.shape() != expect) {
      throw ConfigError("batch shape " + batch.shape_str() +
                        " does not match model input");
    }
  }
  Tensor x = batch;
  const std::size_t head = model.layers.size() - 1;
  for (std::size_t i = 0; i < head; ++i) {
    states[i].last_input = x;
    Tensor z = layer_forward(model.layers[i], states[i], x, shapes[i]);
    z.require_finite("activation of layer " + std::to_string(i));
    states[i].last_activation = z;
    if (hook != nullptr && hook->hooks_layer(i)) {
      x = hook->apply(i, z);
    } else {
      x = std::move(z);
    }
  }
  states[head].last_input = x;
  states[head].last_activation = x;
  ForwardResult result;
  result.logits = x;
  result.loss = per_sample_xent(x, targets).mean();
  if (!std::isfinite(result.loss)) {
    throw NumericError("non-finite loss at layer " + std::to_string(head));
  }
  return result;
}

Tensor infer_logits(const ModelSpec& model,
                    const std::vector<LayerState>& states,
                    const Tensor& batch) {
  const auto shapes = layer_output_shapes(model);
  Tensor x = batch;
  for (std::size_t i = 0; i + 1 < model.layers.size(); ++i) {
    x = layer_forward(model.layers[i], states[i], x, shapes[i]);
  }
  return x;
}

Gradients backward(const ModelSpec& model, std::vector<LayerState>& states,
                   const std::vector<int>& targets, ActivationHook* hook) {
  const std::size_t head = model.layers.size() - 1;
  if (states[head].last_activation.empty()) {
    throw StateError("backward called before forward");
  }
  Gradients grads;
  grads.weight_grads.resize(states.size());
  grads.bias_grads.resize(states.size());

  // d(mean xent)/d(logits) = (softmax - onehot) / batch
  const Tensor& logits = states[head].last_activation;
  const auto lm = logits.matrix();
  const Index n = lm.rows();
  Tensor g = logits;
  {
    auto gm = g.matrix();
    const Eigen::VectorXd lse = log_sum_exp_rows(lm);
    gm = ((lm.colwise() - lse).array().exp()).matrix();
    for (Index i = 0; i < n; ++i) {
      gm(i, targets[static_cast<std::size_t>(i)]) -= 1.0;
    }
    gm /= static_cast<double>(n);
  }
  states[head].last_activation_grad = g;

  for (std::size_t ii = head; ii-- > 0;) {
    // g is the gradient w.r.t. the post-hook output of layer ii
    if (hook != nullptr && hook->hooks_layer(ii)) {
      g = hook->backprop(ii, g);
    }
    states[ii].last_activation_grad = g;
    const Tensor& x = states[ii].last_input;
    if (const auto* d = std::get_if<Dense>(&model.layers[ii])) {
      Tensor dw({d->in, d->out});
      dw.matrix() = x.matrix().transpose() * g.matrix();
      Tensor db({d->out});
      Eigen::Map<Eigen::RowVectorXd>(db.data(), d->out) =
          g.matrix().colwise().sum();
      Tensor gx = x;
      gx.matrix() = g.matrix() * states[ii].weights.matrix().transpose();
      grads.weight_grads[ii] = std::move(dw);
      grads.bias_grads[ii] = std::move(db);
      g = std::move(gx);
    } else if (std::holds_alternative<ReLU>(model.layers[ii])) {
      Tensor gx = g;
      gx.array() = g.array() * (x.array() > 0.0).cast<double>();
      g = std::move(gx);
    } else if (const auto* c = std::get_if<Conv2D>(&model.layers[ii])) {
      const Index nb = x.shape()[0];
      const Index h = x.shape()[2], w = x.shape()[3];
      const Index oh = g.shape()[2], ow = g.shape()[3];
      Tensor dw({c->out_ch, c->in_ch, c->kernel, c->kernel});
      Tensor db({c->out_ch});
      Tensor gx(x.shape());
      const double* xd = x.data();
      const double* gd = g.data();
      const double* wd = states[ii].weights.data();
      double* dwd = dw.data();
      double* dbd = db.data();
      double* gxd = gx.data();
      for (Index b = 0; b < nb; ++b) {
        for (Index oc = 0; oc < c->out_ch; ++oc) {
          for (Index i = 0; i < oh; ++i) {
            for (Index j = 0; j < ow; ++j) {
              const double gv = gd[((b * c->out_ch + oc) * oh + i) * ow + j];
              dbd[oc] += gv;
              for (Index ic = 0; ic < c->in_ch; ++ic) {
                for (Index ki = 0; ki < c->kernel; ++ki) {
                  const Index xbase =
                      ((b * c->in_ch + ic) * h + i * c->stride + ki) * w +
                      j * c->stride;
                  const Index wbase =
                      ((oc * c->in_ch + ic) * c->kernel + ki) * c->kernel;
                  for (Index kj = 0; kj < c->kernel; ++kj) {
                    dwd[wbase + kj] += gv * xd[xbase + kj];
                    gxd[xbase + kj] += gv * wd[wbase + kj];
                  }
                }
              }
            }
          }
        }
      }
      grads.weight_grads[ii] = std::move(dw);
      grads.bias_grads[ii] = std::move(db);
      g = std::move(gx);
    } else if (std::holds_alternative<Flatten>(model.layers[ii])) {
      g = Tensor(x.shape(), g.array());
    }
  }
  return grads;
}

std::vector<int> predict(const ModelSpec& model,
                         const std::vector<LayerState>& states,
                         const Tensor& batch) {
  const Tensor logits = infer_logits(model, states, batch);
  const auto m = logits.matrix();
  std::vector<int> classes(static_cast<std::size_t>(m.rows()));
  for (Index i = 0; i < m.rows(); ++i) {
    int best = 0;
    for (Index j = 1; j < m.cols(); ++j) {
      if (m(i, j) > m(i, best)) best = static_cast<int>(j);
    }
    classes[static_cast<std::size_t>(i)] = best;
  }
  return classes;
}

double mean_loss(const ModelSpec& model, const std::vector<LayerState>& states,
                 const Tensor& batch, const std::vector<int>& targets,
                 double clip_b) {
  const Tensor logits = infer_logits(model, states, batch);
  Eigen::VectorXd losses = per_sample_xent(logits, targets);
  if (clip_b > 0.0) {
    losses = losses.array().min(clip_b);
  }
  return losses.mean();
}

}  // namespace magdrop::nn
