/* Copyright 2026 The coughpoc Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "coughpoc/error.hpp"
#include "coughpoc/matrix.hpp"

namespace coughpoc {

/// Per-class membership scores; a probability vector.
using MembershipVector = std::vector<double>;

// Parameters are kept as flat blocks so optimisers, gradient checks and the
// model file treat every architecture the same way.
using ParamBlocks = std::vector<std::vector<double>>;

namespace detail {

inline double logistic(double z) { return 1.0 / (1.0 + std::exp(-z)); }

inline std::vector<double> softmax(std::span<const double> z) {
  std::vector<double> p(z.size());
  if (z.empty()) return p;
  const double m = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    p[i] = std::exp(z[i] - m);
    s += p[i];
  }
  for (auto& v : p) v /= s;
  return p;
}

inline void glorot_fill(std::vector<double>& w, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (auto& v : w) v = dist(rng);
}

inline ParamBlocks zeros_like(const ParamBlocks& p) {
  ParamBlocks g(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) g[i].assign(p[i].size(), 0.0);
  return g;
}

inline std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace detail

/// Fully connected network: logistic hidden layers, softmax output.
///
/// Block layout: for each layer l, weights (out x in, row-major) then biases.
struct MlpModel {
  std::vector<std::size_t> layer_sizes;  // input, hidden..., classes
  ParamBlocks params;

  std::size_t input_dim() const { return layer_sizes.front(); }
  std::size_t n_classes() const { return layer_sizes.back(); }
  std::size_t n_layers() const { return layer_sizes.size() - 1; }

  static MlpModel create(std::vector<std::size_t> sizes, std::uint64_t seed) {
    if (sizes.size() < 4) throw std::invalid_argument("an MLP needs at least two hidden layers");
    for (auto s : sizes) {
      if (s == 0) throw std::invalid_argument("layer sizes must be positive");
    }
    if (sizes.back() < 2) throw std::invalid_argument("need at least two classes");
    MlpModel m;
    m.layer_sizes = std::move(sizes);
    std::mt19937_64 rng(seed);
    for (std::size_t l = 0; l + 1 < m.layer_sizes.size(); ++l) {
      const std::size_t in = m.layer_sizes[l], out = m.layer_sizes[l + 1];
      std::vector<double> w(in * out);
      detail::glorot_fill(w, in, out, rng);
      m.params.push_back(std::move(w));
      m.params.emplace_back(out, 0.0);
    }
    return m;
  }

  std::vector<double> logits(std::span<const double> x) const {
    if (x.size() != input_dim()) throw ShapeError("MLP input has " + std::to_string(x.size()) +
                                                  " features, expected " + std::to_string(input_dim()));
    std::vector<double> a(x.begin(), x.end());
    for (std::size_t l = 0; l < n_layers(); ++l) {
      a = layer(l, a, l + 1 < n_layers());
    }
    return a;
  }

  // Activations of every layer, input included; the last entry is logits.
  std::vector<std::vector<double>> forward_all(std::span<const double> x) const {
    std::vector<std::vector<double>> acts;
    acts.emplace_back(x.begin(), x.end());
    for (std::size_t l = 0; l < n_layers(); ++l) acts.push_back(layer(l, acts.back(), l + 1 < n_layers()));
    return acts;
  }

  /// Mean cross-entropy over `rows[idx]` plus (l2/2)*|W|^2; accumulates the
  /// gradient into `grad` when given.
  double loss_and_gradient(const Matrix& rows, std::span<const std::size_t> idx, std::span<const int> labels,
                           double l2, ParamBlocks* grad) const {
    if (idx.empty()) throw std::invalid_argument("empty batch");
    if (rows.cols() != input_dim()) throw ShapeError("row width does not match MLP input");
    const double inv_n = 1.0 / static_cast<double>(idx.size());
    double loss = 0.0;
    for (auto r : idx) {
      const auto acts = forward_all(rows.row(r));
      const auto p = detail::softmax(acts.back());
      const auto y = static_cast<std::size_t>(labels[r]);
      if (y >= n_classes()) throw std::invalid_argument("label out of range");
      loss -= std::log(std::max(p[y], 1e-300)) * inv_n;
      if (!grad) continue;

      std::vector<double> delta = p;
      delta[y] -= 1.0;
      for (auto& d : delta) d *= inv_n;
      for (std::size_t l = n_layers(); l-- > 0;) {
        const auto& in = acts[l];
        auto& gw = (*grad)[2 * l];
        auto& gb = (*grad)[2 * l + 1];
        const auto& w = params[2 * l];
        const std::size_t n_in = layer_sizes[l], n_out = layer_sizes[l + 1];
        for (std::size_t o = 0; o < n_out; ++o) {
          gb[o] += delta[o];
          for (std::size_t i = 0; i < n_in; ++i) gw[o * n_in + i] += delta[o] * in[i];
        }
        if (l == 0) break;
        std::vector<double> prev(n_in, 0.0);
        for (std::size_t o = 0; o < n_out; ++o) {
          for (std::size_t i = 0; i < n_in; ++i) prev[i] += w[o * n_in + i] * delta[o];
        }
        for (std::size_t i = 0; i < n_in; ++i) prev[i] *= in[i] * (1.0 - in[i]);
        delta = std::move(prev);
      }
    }
    if (l2 > 0.0) {
      for (std::size_t l = 0; l < n_layers(); ++l) {
        const auto& w = params[2 * l];
        for (std::size_t k = 0; k < w.size(); ++k) {
          loss += 0.5 * l2 * w[k] * w[k];
          if (grad) (*grad)[2 * l][k] += l2 * w[k];
        }
      }
    }
    return loss;
  }

  friend bool operator==(const MlpModel&, const MlpModel&) = default;

 private:
  std::vector<double> layer(std::size_t l, std::span<const double> in, bool hidden) const {
    const std::size_t n_in = layer_sizes[l], n_out = layer_sizes[l + 1];
    const auto& w = params[2 * l];
    const auto& b = params[2 * l + 1];
    std::vector<double> out(n_out);
    for (std::size_t o = 0; o < n_out; ++o) {
      double z = b[o];
      for (std::size_t i = 0; i < n_in; ++i) z += w[o * n_in + i] * in[i];
      out[o] = hidden ? detail::logistic(z) : z;
    }
    return out;
  }
};

/// Convolutional stack over a (frames x mel bands) log-mel image:
/// [3x3 'same' conv -> ReLU -> 2x2 max pool] per stage, then a dense layer.
struct CnnArch {
  std::size_t input_frames = 64;
  std::size_t input_bands = 26;
  std::vector<std::size_t> channels{8, 16};
  std::size_t kernel = 3;
  std::size_t n_classes = 3;

  friend bool operator==(const CnnArch&, const CnnArch&) = default;

  // Spatial size after `stages` conv+pool stages.
  std::pair<std::size_t, std::size_t> spatial_after(std::size_t stages) const {
    std::size_t h = input_frames, w = input_bands;
    for (std::size_t s = 0; s < stages; ++s) {
      h /= 2;
      w /= 2;
    }
    return {h, w};
  }
  std::size_t flat_size() const {
    auto [h, w] = spatial_after(channels.size());
    return channels.back() * h * w;
  }
  void validate() const {
    if (channels.empty()) throw std::invalid_argument("CNN needs at least one conv stage");
    if (kernel % 2 == 0) throw std::invalid_argument("kernel size must be odd");
    if (n_classes < 2) throw std::invalid_argument("need at least two classes");
    if (flat_size() == 0) throw std::invalid_argument("input too small for the number of pooling stages");
  }
};

/// Block layout: per stage kernels (cout x cin x k x k) then biases; finally
/// dense weights (classes x flat) and dense biases.
struct CnnModel {
  CnnArch arch;
  ParamBlocks params;

  std::size_t n_classes() const { return arch.n_classes; }

  static CnnModel create(CnnArch arch, std::uint64_t seed) {
    arch.validate();
    CnnModel m;
    m.arch = std::move(arch);
    std::mt19937_64 rng(seed);
    std::size_t cin = 1;
    const std::size_t kk = m.arch.kernel * m.arch.kernel;
    for (auto cout : m.arch.channels) {
      std::vector<double> k(cout * cin * kk);
      detail::glorot_fill(k, cin * kk, cout * kk, rng);
      m.params.push_back(std::move(k));
      m.params.emplace_back(cout, 0.0);
      cin = cout;
    }
    std::vector<double> w(m.arch.n_classes * m.arch.flat_size());
    detail::glorot_fill(w, m.arch.flat_size(), m.arch.n_classes, rng);
    m.params.push_back(std::move(w));
    m.params.emplace_back(m.arch.n_classes, 0.0);
    return m;
  }

  void check_input(const Matrix& x) const {
    if (x.rows() != arch.input_frames || x.cols() != arch.input_bands) {
      throw ShapeError("CNN input is " + std::to_string(x.rows()) + "x" + std::to_string(x.cols()) + ", expected " +
                       std::to_string(arch.input_frames) + "x" + std::to_string(arch.input_bands));
    }
  }

  std::vector<double> logits(const Matrix& x) const {
    check_input(x);
    return forward(x).logits;
  }

  double loss_and_gradient(const std::vector<Matrix>& inputs, std::span<const std::size_t> idx,
                           std::span<const int> labels, double l2, ParamBlocks* grad) const {
    if (idx.empty()) throw std::invalid_argument("empty batch");
    const double inv_n = 1.0 / static_cast<double>(idx.size());
    double loss = 0.0;
    for (auto r : idx) {
      check_input(inputs[r]);
      const auto fw = forward(inputs[r]);
      const auto p = detail::softmax(fw.logits);
      const auto y = static_cast<std::size_t>(labels[r]);
      if (y >= n_classes()) throw std::invalid_argument("label out of range");
      loss -= std::log(std::max(p[y], 1e-300)) * inv_n;
      if (grad) backward(fw, p, y, inv_n, *grad);
    }
    if (l2 > 0.0) {
      for (std::size_t b = 0; b < params.size(); b += 2) {
        for (std::size_t k = 0; k < params[b].size(); ++k) {
          loss += 0.5 * l2 * params[b][k] * params[b][k];
          if (grad) (*grad)[b][k] += l2 * params[b][k];
        }
      }
    }
    return loss;
  }

  friend bool operator==(const CnnModel&, const CnnModel&) = default;

 private:
  struct Stage {
    std::size_t cin, cout, h, w;
    std::vector<double> input;   // cin x h x w
    std::vector<double> act;     // cout x h x w, post-ReLU
    std::vector<std::size_t> argmax;  // per pooled cell, index into act
  };
  struct Forward {
    std::vector<Stage> stages;
    std::vector<double> flat;
    std::vector<double> logits;
  };

  Forward forward(const Matrix& x) const {
    Forward fw;
    std::vector<double> cur = x.data();
    std::size_t cin = 1, h = arch.input_frames, w = arch.input_bands;
    const std::size_t k = arch.kernel;
    const auto pad = static_cast<std::ptrdiff_t>(k / 2);
    for (std::size_t s = 0; s < arch.channels.size(); ++s) {
      const std::size_t cout = arch.channels[s];
      const auto& kern = params[2 * s];
      const auto& bias = params[2 * s + 1];
      Stage st{cin, cout, h, w, cur, std::vector<double>(cout * h * w), {}};
      for (std::size_t o = 0; o < cout; ++o) {
        for (std::size_t i = 0; i < h; ++i) {
          for (std::size_t j = 0; j < w; ++j) {
            double z = bias[o];
            for (std::size_t c = 0; c < cin; ++c) {
              for (std::size_t di = 0; di < k; ++di) {
                const auto ii = static_cast<std::ptrdiff_t>(i + di) - pad;
                if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(h)) continue;
                for (std::size_t dj = 0; dj < k; ++dj) {
                  const auto jj = static_cast<std::ptrdiff_t>(j + dj) - pad;
                  if (jj < 0 || jj >= static_cast<std::ptrdiff_t>(w)) continue;
                  z += kern[((o * cin + c) * k + di) * k + dj] *
                       cur[(c * h + static_cast<std::size_t>(ii)) * w + static_cast<std::size_t>(jj)];
                }
              }
            }
            st.act[(o * h + i) * w + j] = std::max(z, 0.0);
          }
        }
      }
      const std::size_t ph = h / 2, pw = w / 2;
      std::vector<double> pooled(cout * ph * pw);
      st.argmax.resize(pooled.size());
      for (std::size_t o = 0; o < cout; ++o) {
        for (std::size_t i = 0; i < ph; ++i) {
          for (std::size_t j = 0; j < pw; ++j) {
            std::size_t best = (o * h + 2 * i) * w + 2 * j;
            for (std::size_t a = 0; a < 2; ++a) {
              for (std::size_t b = 0; b < 2; ++b) {
                const std::size_t at = (o * h + 2 * i + a) * w + 2 * j + b;
                if (st.act[at] > st.act[best]) best = at;
              }
            }
            const std::size_t cell = (o * ph + i) * pw + j;
            pooled[cell] = st.act[best];
            st.argmax[cell] = best;
          }
        }
      }
      fw.stages.push_back(std::move(st));
      cur = std::move(pooled);
      cin = cout;
      h = ph;
      w = pw;
    }
    fw.flat = std::move(cur);
    const auto& dw = params[2 * arch.channels.size()];
    const auto& db = params[2 * arch.channels.size() + 1];
    const std::size_t nf = fw.flat.size();
    fw.logits.assign(arch.n_classes, 0.0);
    for (std::size_t c = 0; c < arch.n_classes; ++c) {
      double z = db[c];
      for (std::size_t f = 0; f < nf; ++f) z += dw[c * nf + f] * fw.flat[f];
      fw.logits[c] = z;
    }
    return fw;
  }

  void backward(const Forward& fw, const std::vector<double>& p, std::size_t y, double scale, ParamBlocks& grad) const {
    const std::size_t ns = arch.channels.size();
    const std::size_t nf = fw.flat.size();
    std::vector<double> dlogits = p;
    dlogits[y] -= 1.0;
    for (auto& d : dlogits) d *= scale;

    const auto& dw = params[2 * ns];
    std::vector<double> dflat(nf, 0.0);
    for (std::size_t c = 0; c < arch.n_classes; ++c) {
      grad[2 * ns + 1][c] += dlogits[c];
      for (std::size_t f = 0; f < nf; ++f) {
        grad[2 * ns][c * nf + f] += dlogits[c] * fw.flat[f];
        dflat[f] += dw[c * nf + f] * dlogits[c];
      }
    }

    const std::size_t k = arch.kernel;
    const auto pad = static_cast<std::ptrdiff_t>(k / 2);
    std::vector<double> dpooled = std::move(dflat);
    for (std::size_t s = ns; s-- > 0;) {
      const Stage& st = fw.stages[s];
      std::vector<double> dz(st.act.size(), 0.0);
      for (std::size_t cell = 0; cell < dpooled.size(); ++cell) {
        const std::size_t at = st.argmax[cell];
        if (st.act[at] > 0.0) dz[at] += dpooled[cell];
      }
      const auto& kern = params[2 * s];
      auto& gk = grad[2 * s];
      auto& gb = grad[2 * s + 1];
      std::vector<double> din(st.input.size(), 0.0);
      const std::size_t h = st.h, w = st.w;
      for (std::size_t o = 0; o < st.cout; ++o) {
        for (std::size_t i = 0; i < h; ++i) {
          for (std::size_t j = 0; j < w; ++j) {
            const double g = dz[(o * h + i) * w + j];
            if (g == 0.0) continue;
            gb[o] += g;
            for (std::size_t c = 0; c < st.cin; ++c) {
              for (std::size_t di = 0; di < k; ++di) {
                const auto ii = static_cast<std::ptrdiff_t>(i + di) - pad;
                if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(h)) continue;
                for (std::size_t dj = 0; dj < k; ++dj) {
                  const auto jj = static_cast<std::ptrdiff_t>(j + dj) - pad;
                  if (jj < 0 || jj >= static_cast<std::ptrdiff_t>(w)) continue;
                  const std::size_t in_at = (c * h + static_cast<std::size_t>(ii)) * w + static_cast<std::size_t>(jj);
                  const std::size_t k_at = ((o * st.cin + c) * k + di) * k + dj;
                  gk[k_at] += g * st.input[in_at];
                  din[in_at] += g * kern[k_at];
                }
              }
            }
          }
        }
      }
      dpooled = std::move(din);
    }
  }
};

inline MembershipVector predict_memberships(const MlpModel& m, std::span<const double> x) {
  return detail::softmax(m.logits(x));
}

inline MembershipVector predict_memberships(const CnnModel& m, const Matrix& x) {
  return detail::softmax(m.logits(x));
}

struct TrainConfig {
  double learning_rate = 0.1;
  int epochs = 200;
  std::size_t batch_size = 16;
  std::uint64_t seed = 1;
  double train_fraction = 0.8;
  double l2 = 1e-4;

  void validate() const {
    // A zero rate is accepted so a run can be a no-op baseline.
    if (!(learning_rate >= 0.0)) throw std::invalid_argument("learning rate must be non-negative");
    if (epochs < 1) throw std::invalid_argument("epochs must be at least 1");
    if (batch_size < 1) throw std::invalid_argument("batch size must be at least 1");
    if (!(l2 >= 0.0)) throw std::invalid_argument("l2 must be non-negative");
  }
};

template <class Model>
struct TrainResult {
  Model model;
  // loss_curve[0] is the loss before training; entry e is the loss after
  // epoch e. Non-increasing by construction.
  std::vector<double> loss_curve;
  double final_learning_rate = 0.0;
  int rejected_epochs = 0;
};

/// Mini-batch gradient descent on cross-entropy. After every epoch the full
/// training loss is measured; an epoch that raises it is rolled back and the
/// learning rate halved.
template <class Model, class Inputs>
TrainResult<Model> train_model(Model model, const Inputs& inputs, std::span<const int> labels, const TrainConfig& cfg) {
  cfg.validate();
  const std::size_t n = labels.size();
  if (n == 0) throw std::invalid_argument("no training examples");
  {
    std::vector<int> seen(labels.begin(), labels.end());
    std::sort(seen.begin(), seen.end());
    if (std::unique(seen.begin(), seen.end()) - seen.begin() < 2) {
      throw std::invalid_argument("training data must contain at least two classes");
    }
  }
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), 0);
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);

  TrainResult<Model> res{std::move(model), {}, cfg.learning_rate, 0};
  double lr = cfg.learning_rate;
  double prev = res.model.loss_and_gradient(inputs, all, labels, cfg.l2, nullptr);
  if (!std::isfinite(prev)) throw DivergenceError(0, "initial loss is not finite");
  res.loss_curve.push_back(prev);

  std::vector<std::size_t> order = all;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const ParamBlocks snapshot = res.model.params;
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t b = 0; b < n; b += cfg.batch_size) {
      std::span<const std::size_t> batch(order.data() + b, std::min(cfg.batch_size, n - b));
      auto grad = detail::zeros_like(res.model.params);
      res.model.loss_and_gradient(inputs, batch, labels, cfg.l2, &grad);
      for (std::size_t blk = 0; blk < grad.size(); ++blk) {
        auto& p = res.model.params[blk];
        for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr * grad[blk][i];
      }
    }
    const double loss = res.model.loss_and_gradient(inputs, all, labels, cfg.l2, nullptr);
    if (std::isnan(loss)) throw DivergenceError(epoch, "training loss became NaN at epoch " + std::to_string(epoch));
    if (loss > prev || !std::isfinite(loss)) {
      res.model.params = snapshot;
      lr *= 0.5;
      ++res.rejected_epochs;
    } else {
      prev = loss;
    }
    res.loss_curve.push_back(prev);
  }
  res.final_learning_rate = lr;
  return res;
}

inline TrainResult<MlpModel> train_mlp(const Matrix& rows, std::span<const int> labels, const TrainConfig& cfg,
                                       std::vector<std::size_t> hidden = {32, 16}, std::size_t n_classes = 0) {
  if (rows.rows() != labels.size()) throw std::invalid_argument("label count does not match row count");
  if (n_classes == 0) n_classes = static_cast<std::size_t>(*std::max_element(labels.begin(), labels.end())) + 1;
  std::vector<std::size_t> sizes{rows.cols()};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(n_classes);
  return train_model(MlpModel::create(sizes, cfg.seed), rows, labels, cfg);
}

inline TrainResult<CnnModel> train_cnn(const std::vector<Matrix>& inputs, std::span<const int> labels,
                                       const TrainConfig& cfg, CnnArch arch) {
  if (inputs.size() != labels.size()) throw std::invalid_argument("label count does not match input count");
  for (const auto& x : inputs) {
    if (x.rows() != inputs.front().rows() || x.cols() != inputs.front().cols()) {
      throw ShapeError("CNN inputs have inconsistent shapes");
    }
  }
  if (!inputs.empty()) {
    arch.input_frames = inputs.front().rows();
    arch.input_bands = inputs.front().cols();
  }
  return train_model(CnnModel::create(arch, cfg.seed), inputs, labels, cfg);
}

/// Central finite differences (step h) against the analytic gradient on up
/// to `n_samples` randomly chosen parameters. Returns the largest relative
/// error |a - n| / max(|a| + |n|, 1e-6).
template <class Model, class Inputs>
double gradient_check(const Model& model, const Inputs& inputs, std::span<const int> labels, double l2 = 0.0,
                      std::size_t n_samples = 200, double h = 1e-5, std::uint64_t seed = 3) {
  if (labels.empty()) throw std::invalid_argument("gradient check needs a non-empty batch");
  std::vector<std::size_t> idx(labels.size());
  std::iota(idx.begin(), idx.end(), 0);
  auto grad = detail::zeros_like(model.params);
  model.loss_and_gradient(inputs, idx, labels, l2, &grad);

  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t b = 0; b < model.params.size(); ++b) {
    for (std::size_t i = 0; i < model.params[b].size(); ++i) coords.emplace_back(b, i);
  }
  std::mt19937_64 rng(seed);
  std::shuffle(coords.begin(), coords.end(), rng);
  if (coords.size() > n_samples) coords.resize(n_samples);

  Model probe = model;
  double worst = 0.0;
  for (auto [b, i] : coords) {
    const double orig = probe.params[b][i];
    probe.params[b][i] = orig + h;
    const double up = probe.loss_and_gradient(inputs, idx, labels, l2, nullptr);
    probe.params[b][i] = orig - h;
    const double down = probe.loss_and_gradient(inputs, idx, labels, l2, nullptr);
    probe.params[b][i] = orig;
    const double numeric = (up - down) / (2.0 * h);
    const double analytic = grad[b][i];
    const double rel = std::abs(analytic - numeric) / std::max(std::abs(analytic) + std::abs(numeric), 1e-6);
    worst = std::max(worst, rel);
  }
  return worst;
}

/// Classification quality on a held-out set. Rates with an empty
/// denominator are reported as 0.
struct Metrics {
  std::vector<std::string> classes;
  std::vector<std::vector<std::size_t>> confusion;  // [actual][predicted]
  double accuracy = 0.0;
  std::vector<double> sensitivity;
  std::vector<double> specificity;
  std::optional<double> false_alarm_rate;  // 1 - specificity of "healthy"

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["classes"] = classes;
    j["confusion"] = confusion;
    j["accuracy"] = accuracy;
    j["sensitivity"] = sensitivity;
    j["specificity"] = specificity;
    j["false_alarm_rate"] = false_alarm_rate ? nlohmann::json(*false_alarm_rate) : nlohmann::json(nullptr);
    return j;
  }
};

inline Metrics metrics_from_confusion(std::vector<std::vector<std::size_t>> confusion, std::vector<std::string> classes,
                                      const std::string& healthy = "healthy") {
  const std::size_t c = confusion.size();
  if (classes.size() != c) throw std::invalid_argument("class names do not match confusion size");
  Metrics m;
  m.classes = std::move(classes);
  std::size_t total = 0, correct = 0;
  for (std::size_t a = 0; a < c; ++a) {
    if (confusion[a].size() != c) throw std::invalid_argument("confusion matrix must be square");
    for (std::size_t p = 0; p < c; ++p) total += confusion[a][p];
    correct += confusion[a][a];
  }
  if (total == 0) throw std::invalid_argument("empty confusion matrix");
  m.accuracy = static_cast<double>(correct) / static_cast<double>(total);
  auto rate = [](std::size_t num, std::size_t den) { return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den); };
  for (std::size_t k = 0; k < c; ++k) {
    std::size_t tp = confusion[k][k], fn = 0, fp = 0;
    for (std::size_t j = 0; j < c; ++j) {
      if (j == k) continue;
      fn += confusion[k][j];
      fp += confusion[j][k];
    }
    const std::size_t tn = total - tp - fn - fp;
    m.sensitivity.push_back(rate(tp, tp + fn));
    m.specificity.push_back(rate(tn, tn + fp));
    if (m.classes[k] == healthy) m.false_alarm_rate = 1.0 - m.specificity.back();
  }
  m.confusion = std::move(confusion);
  return m;
}

inline Metrics metrics_from_predictions(std::span<const int> actual, std::span<const int> predicted,
                                        std::vector<std::string> classes) {
  if (actual.size() != predicted.size()) throw std::invalid_argument("prediction count mismatch");
  if (actual.empty()) throw std::invalid_argument("empty test set");
  const std::size_t c = classes.size();
  std::vector<std::vector<std::size_t>> conf(c, std::vector<std::size_t>(c, 0));
  for (std::size_t i = 0; i < actual.size(); ++i) {
    const auto a = static_cast<std::size_t>(actual[i]);
    const auto p = static_cast<std::size_t>(predicted[i]);
    if (a >= c || p >= c) throw std::invalid_argument("class index out of range");
    ++conf[a][p];
  }
  return metrics_from_confusion(std::move(conf), std::move(classes));
}

inline Metrics evaluate(const MlpModel& model, const Matrix& rows, std::span<const int> labels,
                        std::vector<std::string> classes) {
  if (rows.rows() == 0) throw std::invalid_argument("empty test set");
  std::vector<int> pred(rows.rows());
  for (std::size_t r = 0; r < rows.rows(); ++r) pred[r] = static_cast<int>(detail::argmax(model.logits(rows.row(r))));
  return metrics_from_predictions(labels, pred, std::move(classes));
}

inline Metrics evaluate(const CnnModel& model, const std::vector<Matrix>& inputs, std::span<const int> labels,
                        std::vector<std::string> classes) {
  if (inputs.empty()) throw std::invalid_argument("empty test set");
  std::vector<int> pred(inputs.size());
  for (std::size_t r = 0; r < inputs.size(); ++r) pred[r] = static_cast<int>(detail::argmax(model.logits(inputs[r])));
  return metrics_from_predictions(labels, pred, std::move(classes));
}

}  // namespace coughpoc
