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
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "adpfl/config.hpp"
#include "adpfl/data.hpp"
#include "adpfl/metrics.hpp"
#include "adpfl/model.hpp"
#include "adpfl/params.hpp"
#include "adpfl/privacy.hpp"
#include "adpfl/rng.hpp"

namespace adpfl {

// A run is declared diverged once the global weight norm passes this.
inline constexpr double kDivergenceNormLimit = 1e6;
// Non-private rounds used to calibrate the static clipping threshold.
inline constexpr int kStaticWarmupRounds = 5;

// Dual-model bookkeeping: the current global weights plus the
// best-validation snapshot seen at any completed round.
struct GlobalModelState {
  ParamVector w_current;
  int round = 0;
  ParamVector w_best;
  double best_val_dice = -1.0;  // sentinel until the first round completes
  int best_round = -1;
};

struct ClientUpdate {
  int site_id = 0;
  ParamVector delta;  // sanitized
  int sample_count = 0;
  SanitizationTrace trace;
};

struct ClientRoundStats {
  int site_id = 0;
  int sample_count = 0;
  double local_loss = 0.0;
  SanitizationTrace trace;
  double val_dice = 0.0;  // this site's validation Dice on the new model
};

struct RoundRecord {
  int round = 0;
  double lr = 0.0;
  double mean_val_dice = 0.0;
  double best_val_dice = 0.0;
  std::vector<ClientRoundStats> clients;
};

// Local model minus the broadcast global model.
inline ParamVector compute_update(const ParamVector& w_local,
                                  const ParamVector& w_global) {
  check_same_size(w_local, w_global, "compute_update");
  return sub(w_local, w_global);
}

// Data-weighted FedAvg step: w + sum_k (n_k / N) * delta_k. Updates are
// sorted by site id and accumulated with Kahan compensation, so the result
// does not depend on the order the caller collected them in.
inline ParamVector aggregate(std::vector<ClientUpdate> updates,
                             const ParamVector& w_global) {
  if (updates.empty()) throw ConfigError("aggregate: no client updates");
  std::sort(updates.begin(), updates.end(),
            [](const ClientUpdate& a, const ClientUpdate& b) {
              return a.site_id < b.site_id;
            });
  double total = 0.0;
  for (const ClientUpdate& u : updates) {
    check_same_size(u.delta, w_global, "aggregate");
    if (u.sample_count < 1) {
      throw ConfigError("aggregate: sample_count must be >= 1");
    }
    total += u.sample_count;
  }
  ParamVector out(w_global.size());
  for (size_t i = 0; i < w_global.size(); ++i) {
    double sum = 0.0;
    double comp = 0.0;
    for (const ClientUpdate& u : updates) {
      const double term = (u.sample_count / total) * u.delta[i];
      const double y = term - comp;
      const double t = sum + y;
      comp = (t - sum) - y;
      sum = t;
    }
    out[i] = w_global[i] + sum;
  }
  return out;
}

// Mean validation Dice for one site; NaN when the site has no validation
// samples.
inline double site_validation_dice(const ModelShape& shape,
                                   const ParamVector& w,
                                   const ClientSite& site) {
  if (site.val.empty()) return std::numeric_limits<double>::quiet_NaN();
  double sum = 0.0;
  for (const SyntheticSample& s : site.val) {
    sum += dice_coefficient(binarize(forward(shape, w, s.image)), s.mask);
  }
  return sum / static_cast<double>(site.val.size());
}

inline DiceReport evaluate_on_samples(const ModelShape& shape,
                                      const ParamVector& w,
                                      const std::vector<SyntheticSample>& set,
                                      bool sample_std) {
  std::vector<double> dice;
  dice.reserve(set.size());
  for (const SyntheticSample& s : set) {
    dice.push_back(
        dice_coefficient(binarize(forward(shape, w, s.image)), s.mask));
  }
  return make_dice_report(std::move(dice), sample_std);
}

// Runs communication rounds against a fixed federation. Owns the global
// model state and one optimizer state per client (persisted across rounds
// unless reset_optimizer_each_round is set).
class FederatedTrainer {
 public:
  FederatedTrainer(const Federation& fed, const ModelShape& shape,
                   ParamVector w_init, PrivacyConfig privacy,
                   TrainConfig train, double base_lr, int total_rounds,
                   uint64_t seed, bool reset_optimizer_each_round)
      : fed_(fed),
        shape_(shape),
        privacy_(std::move(privacy)),
        train_(train),
        base_lr_(base_lr),
        total_rounds_(total_rounds),
        seed_(seed),
        reset_optimizer_each_round_(reset_optimizer_each_round),
        optimizers_(fed.sites.size()) {
    state_.w_current = std::move(w_init);
    state_.w_best = state_.w_current;
    for (OptimizerState& opt : optimizers_) {
      opt.reset(state_.w_current.size());
    }
  }

  // One communication cycle: broadcast, local training, update computation,
  // sanitization, weighted aggregation, validation, dual-model update.
  // Clients are processed in site-id order so results do not depend on how
  // the federation happens to list them.
  RoundRecord run_round() {
    const int t = state_.round;
    RoundRecord record;
    record.round = t;
    record.lr = cosine_lr(t, total_rounds_, base_lr_);

    std::vector<size_t> order(fed_.sites.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
      return fed_.sites[a].site_id < fed_.sites[b].site_id;
    });

    std::vector<ClientUpdate> updates;
    for (size_t k : order) {
      const ClientSite& site = fed_.sites[k];
      if (reset_optimizer_each_round_) {
        optimizers_[k].reset(state_.w_current.size());
      }
      Rng shuffle_rng =
          make_stream(seed_, Stream::kShuffle, t, site.site_id);
      LocalTrainResult lt =
          local_train(shape_, state_.w_current, site, train_, record.lr,
                      optimizers_[k], shuffle_rng);
      if (!all_finite(lt.weights)) {
        diverged_ = true;
        return record;
      }
      ParamVector delta = compute_update(lt.weights, state_.w_current);
      Rng noise_rng =
          make_stream(privacy_.rng_seed != 0 ? privacy_.rng_seed : seed_,
                      Stream::kNoise, t, site.site_id);
      auto [sanitized, trace] = sanitize(delta, privacy_, noise_rng);

      ClientUpdate update;
      update.site_id = site.site_id;
      update.delta = std::move(sanitized);
      update.sample_count = site.sample_count();
      update.trace = trace;
      updates.push_back(std::move(update));

      ClientRoundStats stats;
      stats.site_id = site.site_id;
      stats.sample_count = site.sample_count();
      stats.local_loss = lt.mean_loss;
      stats.trace = trace;
      record.clients.push_back(stats);
    }

    ParamVector w_next = aggregate(std::move(updates), state_.w_current);
    if (!all_finite(w_next) || l2_norm(w_next) > kDivergenceNormLimit) {
      diverged_ = true;
      return record;
    }

    double dice_sum = 0.0;
    int dice_sites = 0;
    for (size_t pos = 0; pos < order.size(); ++pos) {
      const double d =
          site_validation_dice(shape_, w_next, fed_.sites[order[pos]]);
      record.clients[pos].val_dice = d;
      if (!std::isnan(d)) {
        dice_sum += d;
        ++dice_sites;
      }
    }
    // Model selection uses the unweighted mean of per-site validation Dice.
    record.mean_val_dice = dice_sites > 0 ? dice_sum / dice_sites : 0.0;

    state_.w_current = std::move(w_next);
    state_.round = t + 1;
    if (record.mean_val_dice > state_.best_val_dice) {
      state_.best_val_dice = record.mean_val_dice;
      state_.w_best = state_.w_current;
      state_.best_round = t;
    }
    record.best_val_dice = state_.best_val_dice;
    return record;
  }

  const GlobalModelState& state() const { return state_; }
  bool diverged() const { return diverged_; }

 private:
  const Federation& fed_;
  ModelShape shape_;
  PrivacyConfig privacy_;
  TrainConfig train_;
  double base_lr_;
  int total_rounds_;
  uint64_t seed_;
  bool reset_optimizer_each_round_;
  GlobalModelState state_;
  std::vector<OptimizerState> optimizers_;
  bool diverged_ = false;
};

enum class RunStatus { kOk, kDiverged };

struct ExperimentResult {
  GlobalModelState state;
  std::vector<RoundRecord> rounds;
  DiceReport test_best;    // held-out test Dice of the best-validation model
  DiceReport test_latest;  // same for the most recent model
  RunStatus status = RunStatus::kOk;
  int diverged_round = -1;
  uint64_t init_checksum = 0;
  double static_threshold = 0.0;  // C used in static mode, else 0
  uint64_t run_seed = 0;
};

// Median per-client update norm over a few non-private warm-up rounds on
// the same task; used as the frozen static-mode threshold when the config
// does not pin one.
inline double calibrate_static_threshold(const Federation& fed,
                                         const ModelShape& shape,
                                         const ParamVector& w_init,
                                         const ExperimentConfig& cfg,
                                         uint64_t run_seed) {
  PrivacyConfig warm = cfg.privacy;
  warm.mode = PrivacyMode::kNone;
  const int rounds = std::min(kStaticWarmupRounds, cfg.rounds);
  FederatedTrainer trainer(fed, shape, w_init, warm, cfg.train, cfg.base_lr,
                           cfg.rounds, run_seed,
                           cfg.reset_optimizer_each_round);
  std::vector<double> norms;
  for (int t = 0; t < rounds && !trainer.diverged(); ++t) {
    const RoundRecord rec = trainer.run_round();
    for (const ClientRoundStats& c : rec.clients) {
      norms.push_back(c.trace.pre_clip_norm);
    }
  }
  if (norms.empty()) {
    throw ConfigError("static calibration: no warm-up update norms observed");
  }
  const double c = median(norms);
  if (!(c > 0.0)) {
    throw ConfigError("static calibration: warm-up update norms were zero");
  }
  return c;
}

// Runs one full experiment: builds the federation, trains for cfg.rounds
// communication rounds, and evaluates both the best-validation and the
// latest global model on the held-out test set.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg,
                                       uint64_t run_seed) {
  cfg.validate();
  const Federation fed =
      build_federation(run_seed, cfg.client_sizes, cfg.test_samples,
                       cfg.heterogeneity, cfg.image_size);
  const ModelShape shape{cfg.hidden};
  ParamVector w0 = init_weights(shape, make_stream(run_seed, Stream::kModelInit));

  ExperimentResult result;
  result.run_seed = run_seed;
  result.init_checksum = checksum(w0);

  PrivacyConfig privacy = cfg.privacy;
  if (privacy.mode == PrivacyMode::kStatic &&
      privacy.fixed_threshold <= 0.0 && cfg.rounds > 0) {
    privacy.fixed_threshold =
        calibrate_static_threshold(fed, shape, w0, cfg, run_seed);
  }
  result.static_threshold =
      privacy.mode == PrivacyMode::kStatic ? privacy.fixed_threshold : 0.0;

  FederatedTrainer trainer(fed, shape, std::move(w0), privacy, cfg.train,
                           cfg.base_lr, cfg.rounds, run_seed,
                           cfg.reset_optimizer_each_round);
  for (int t = 0; t < cfg.rounds; ++t) {
    RoundRecord rec = trainer.run_round();
    if (trainer.diverged()) {
      result.status = RunStatus::kDiverged;
      result.diverged_round = t;
      break;
    }
    result.rounds.push_back(std::move(rec));
  }
  result.state = trainer.state();

  if (result.status == RunStatus::kOk) {
    result.test_best = evaluate_on_samples(shape, result.state.w_best,
                                           fed.test, cfg.sample_std);
    result.test_latest = evaluate_on_samples(shape, result.state.w_current,
                                             fed.test, cfg.sample_std);
  }
  return result;
}

}  // namespace adpfl
