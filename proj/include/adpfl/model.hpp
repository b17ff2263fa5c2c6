// Copyright 2026 The adpfl Authors
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

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "adpfl/data.hpp"
#include "adpfl/errors.hpp"
#include "adpfl/grid.hpp"
#include "adpfl/params.hpp"
#include "adpfl/rng.hpp"

namespace adpfl {

// A per-pixel classifier: 4 features -> tanh hidden layer -> sigmoid.
// Parameters are one flat vector laid out as
//   [W1 (hidden x 4, row-major by hidden unit), b1 (hidden), W2 (hidden), b2]
// so the whole model is a ParamVector like any other update.
struct ModelShape {
  static constexpr int kFeatures = 4;
  int hidden = 16;

  int param_count() const { return kFeatures * hidden + hidden + hidden + 1; }
  int w1_index(int h, int f) const { return h * kFeatures + f; }
  int b1_index(int h) const { return kFeatures * hidden + h; }
  int w2_index(int h) const { return kFeatures * hidden + hidden + h; }
  int b2_index() const { return kFeatures * hidden + hidden + hidden; }
};

// Per-pixel features: [intensity, 3x3 local mean, x/(cols-1), y/(rows-1)].
// The local mean replicates edge pixels at the border. Output is row-major,
// kFeatures values per pixel.
inline void pixel_features(const Image& img, std::vector<double>& out) {
  const int rows = img.rows;
  const int cols = img.cols;
  out.resize(static_cast<size_t>(rows) * cols * ModelShape::kFeatures);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      double sum = 0.0;
      for (int dr = -1; dr <= 1; ++dr) {
        const int rr = std::clamp(r + dr, 0, rows - 1);
        for (int dc = -1; dc <= 1; ++dc) {
          const int cc = std::clamp(c + dc, 0, cols - 1);
          sum += img(rr, cc);
        }
      }
      double* f =
          &out[(static_cast<size_t>(r) * cols + c) * ModelShape::kFeatures];
      f[0] = img(r, c);
      f[1] = sum / 9.0;
      f[2] = cols > 1 ? static_cast<double>(c) / (cols - 1) : 0.0;
      f[3] = rows > 1 ? static_cast<double>(r) / (rows - 1) : 0.0;
    }
  }
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

namespace detail {

// Forward pass over precomputed features. probs gets one value per pixel;
// z (if non-null) gets the hidden activations, hidden per pixel, for reuse
// in the backward pass.
inline void forward_core(const ModelShape& shape, const ParamVector& w,
                         const std::vector<double>& feats, int n_pixels,
                         double* probs, double* z) {
  const int H = shape.hidden;
  const double b2 = w[shape.b2_index()];
  for (int i = 0; i < n_pixels; ++i) {
    const double* f = &feats[static_cast<size_t>(i) * ModelShape::kFeatures];
    double logit = b2;
    for (int h = 0; h < H; ++h) {
      double a = w[shape.b1_index(h)];
      const double* w1 = &w[shape.w1_index(h, 0)];
      for (int k = 0; k < ModelShape::kFeatures; ++k) a += w1[k] * f[k];
      const double zh = std::tanh(a);
      if (z != nullptr) z[static_cast<size_t>(i) * H + h] = zh;
      logit += w[shape.w2_index(h)] * zh;
    }
    probs[i] = sigmoid(logit);
  }
}

}  // namespace detail

inline Image forward(const ModelShape& shape, const ParamVector& w,
                     const Image& image) {
  if (static_cast<int>(w.size()) != shape.param_count()) {
    throw DimensionError("forward: weight vector has wrong length");
  }
  std::vector<double> feats;
  pixel_features(image, feats);
  Image probs(image.rows, image.cols, 0.0);
  detail::forward_core(shape, w, feats, image.size(), probs.data.data(),
                       nullptr);
  return probs;
}

// Soft Dice loss: 1 - (2*sum(p*g) + s) / (sum(p) + sum(g) + s).
inline double soft_dice_loss(const Image& pred, const MaskGrid& target,
                             double smooth = 1.0) {
  if (pred.rows != target.rows || pred.cols != target.cols) {
    throw DimensionError("soft_dice_loss: shapes differ");
  }
  double inter = 0.0;
  double psum = 0.0;
  double gsum = 0.0;
  for (size_t i = 0; i < pred.data.size(); ++i) {
    const double p = pred.data[i];
    const double g = target.data[i] != 0 ? 1.0 : 0.0;
    inter += p * g;
    psum += p;
    gsum += g;
  }
  return 1.0 - (2.0 * inter + smooth) / (psum + gsum + smooth);
}

struct LossGrad {
  double loss = 0.0;
  ParamVector grad;
};

// Mean soft Dice loss over a batch and its analytic gradient w.r.t. every
// parameter, by backpropagation through the sigmoid, the tanh layer and the
// Dice ratio.
inline LossGrad dice_loss_gradient(
    const ModelShape& shape, const ParamVector& w,
    const std::vector<const SyntheticSample*>& batch, double smooth = 1.0) {
  if (batch.empty()) throw ConfigError("dice_loss_gradient: empty batch");
  if (static_cast<int>(w.size()) != shape.param_count()) {
    throw DimensionError("dice_loss_gradient: weight vector has wrong length");
  }
  const int H = shape.hidden;
  LossGrad out;
  out.grad.assign(w.size(), 0.0);

  std::vector<double> feats;
  std::vector<double> probs;
  std::vector<double> z;
  for (const SyntheticSample* sample : batch) {
    const Image& img = sample->image;
    const MaskGrid& mask = sample->mask;
    if (img.rows != mask.rows || img.cols != mask.cols) {
      throw DimensionError("dice_loss_gradient: image/mask shapes differ");
    }
    const int n = img.size();
    pixel_features(img, feats);
    probs.resize(n);
    z.resize(static_cast<size_t>(n) * H);
    detail::forward_core(shape, w, feats, n, probs.data(), z.data());

    double inter = 0.0;
    double psum = 0.0;
    double gsum = 0.0;
    for (int i = 0; i < n; ++i) {
      const double g = mask.data[i] != 0 ? 1.0 : 0.0;
      inter += probs[i] * g;
      psum += probs[i];
      gsum += g;
    }
    const double denom = psum + gsum + smooth;
    const double numer = 2.0 * inter + smooth;
    out.loss += 1.0 - numer / denom;

    // d(loss)/dp_i = -(2*g_i*denom - numer) / denom^2
    const double inv_d2 = 1.0 / (denom * denom);
    for (int i = 0; i < n; ++i) {
      const double g = mask.data[i] != 0 ? 1.0 : 0.0;
      const double dp = -(2.0 * g * denom - numer) * inv_d2;
      const double p = probs[i];
      const double dlogit = dp * p * (1.0 - p);
      const double* f = &feats[static_cast<size_t>(i) * ModelShape::kFeatures];
      const double* zi = &z[static_cast<size_t>(i) * H];
      out.grad[shape.b2_index()] += dlogit;
      for (int h = 0; h < H; ++h) {
        out.grad[shape.w2_index(h)] += dlogit * zi[h];
        const double da = dlogit * w[shape.w2_index(h)] * (1.0 - zi[h] * zi[h]);
        out.grad[shape.b1_index(h)] += da;
        double* gw1 = &out.grad[shape.w1_index(h, 0)];
        for (int k = 0; k < ModelShape::kFeatures; ++k) gw1[k] += da * f[k];
      }
    }
  }
  const double inv_batch = 1.0 / static_cast<double>(batch.size());
  out.loss *= inv_batch;
  for (double& g : out.grad) g *= inv_batch;
  return out;
}

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-5;  // decoupled, applied before the Adam update
};

struct OptimizerState {
  ParamVector m;
  ParamVector v;
  int64_t step = 0;

  void reset(size_t d) {
    m.assign(d, 0.0);
    v.assign(d, 0.0);
    step = 0;
  }
};

// One Adam step with bias correction. Decoupled weight decay shrinks the
// weights by lr*weight_decay before the moment update.
inline void adam_step(OptimizerState& state, ParamVector& w,
                      const ParamVector& g, double lr, const AdamConfig& cfg) {
  check_same_size(w, g, "adam_step");
  if (state.m.size() != w.size()) state.reset(w.size());
  state.step += 1;
  if (cfg.weight_decay != 0.0) {
    for (double& x : w) x -= lr * cfg.weight_decay * x;
  }
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (size_t i = 0; i < w.size(); ++i) {
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g[i];
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    w[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
}

// Cosine annealing over the round index: lr(t) = lr0 * (1 + cos(pi*t/T)) / 2.
inline double cosine_lr(int round, int total_rounds, double base_lr) {
  if (total_rounds <= 0) {
    throw ScheduleError("cosine_lr: total rounds must be positive");
  }
  if (round < 0 || round >= total_rounds) {
    throw ScheduleError("cosine_lr: round " + std::to_string(round) +
                        " outside [0," + std::to_string(total_rounds) + ")");
  }
  return base_lr * 0.5 *
         (1.0 + std::cos(kPi * static_cast<double>(round) /
                         static_cast<double>(total_rounds)));
}

// Random tanh features with a zeroed readout: W1 and b1 start spread out,
// W2 and b2 start at zero so the initial prediction is 0.5 everywhere.
inline ParamVector init_weights(const ModelShape& shape, Rng rng) {
  ParamVector w(shape.param_count(), 0.0);
  for (int h = 0; h < shape.hidden; ++h) {
    for (int f = 0; f < ModelShape::kFeatures; ++f) {
      w[shape.w1_index(h, f)] = uniform_range(rng, -1.2, 1.2);
    }
  }
  for (int h = 0; h < shape.hidden; ++h) {
    w[shape.b1_index(h)] = uniform_range(rng, -0.5, 0.5);
  }
  return w;
}

struct TrainConfig {
  AdamConfig adam;
  int batch_size = 2;
  int epochs = 1;
  double smooth = 1.0;
};

struct LocalTrainResult {
  ParamVector weights;
  double mean_loss = 0.0;                 // mean over optimization steps
  std::vector<double> epoch_mean_losses;  // one entry per epoch
};

// E epochs of mini-batch training over the site's training shard in a
// seeded shuffled order. The optimizer state belongs to the caller (one
// per client) and persists across rounds.
inline LocalTrainResult local_train(const ModelShape& shape,
                                    const ParamVector& w0,
                                    const ClientSite& site,
                                    const TrainConfig& cfg, double lr,
                                    OptimizerState& opt, Rng& shuffle_rng) {
  if (site.train.empty()) {
    throw ConfigError("local_train: site " + std::to_string(site.site_id) +
                      " has an empty training shard");
  }
  if (cfg.epochs < 1) throw ConfigError("local_train: epochs must be >= 1");
  if (cfg.batch_size < 1) {
    throw ConfigError("local_train: batch_size must be >= 1");
  }

  ParamVector w = w0;
  std::vector<uint32_t> order(site.train.size());
  std::iota(order.begin(), order.end(), 0u);

  LocalTrainResult result;
  double total_loss = 0.0;
  int total_steps = 0;
  std::vector<const SyntheticSample*> batch;
  for (int e = 0; e < cfg.epochs; ++e) {
    shuffle_in_place(order, shuffle_rng);
    double epoch_loss = 0.0;
    int epoch_steps = 0;
    for (size_t start = 0; start < order.size();
         start += static_cast<size_t>(cfg.batch_size)) {
      const size_t stop =
          std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
      batch.clear();
      for (size_t i = start; i < stop; ++i) {
        batch.push_back(&site.train[order[i]]);
      }
      const LossGrad lg = dice_loss_gradient(shape, w, batch, cfg.smooth);
      adam_step(opt, w, lg.grad, lr, cfg.adam);
      epoch_loss += lg.loss;
      ++epoch_steps;
    }
    result.epoch_mean_losses.push_back(epoch_loss / epoch_steps);
    total_loss += epoch_loss;
    total_steps += epoch_steps;
  }
  result.mean_loss = total_loss / total_steps;
  result.weights = std::move(w);
  return result;
}

}  // namespace adpfl
