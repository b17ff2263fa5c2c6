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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <vector>

#include "adpfl/federation.hpp"

using namespace adpfl;

namespace {

ClientUpdate make_update(int site, ParamVector delta, int n) {
  ClientUpdate u;
  u.site_id = site;
  u.delta = std::move(delta);
  u.sample_count = n;
  return u;
}

ExperimentConfig tiny_config() {
  ExperimentConfig cfg;
  cfg.rounds = 3;
  cfg.repeats = 1;
  cfg.image_size = 16;
  cfg.client_sizes = {6, 5};
  cfg.test_samples = 4;
  cfg.hidden = 4;
  cfg.base_lr = 5e-3;
  cfg.train.batch_size = 2;
  return cfg;
}

}  // namespace

TEST_CASE("compute_update subtracts the broadcast weights") {
  CHECK(compute_update({2, 3}, {1, 1}) == ParamVector{1, 2});
  CHECK(compute_update({0.5, -1}, {0.5, -1}) == ParamVector{0, 0});
  CHECK_THROWS_AS(compute_update({1}, {1, 2}), DimensionError);
}

TEST_CASE("compute_update then add recovers the local weights") {
  const ParamVector w_global = {0.5, -0.25, 2.0};
  const ParamVector w_local = {1.5, 0.75, -4.0};
  CHECK(add(w_global, compute_update(w_local, w_global)) == w_local);

  Rng rng(3);
  ParamVector g(20);
  ParamVector l(20);
  for (double& x : g) x = uniform_range(rng, -1, 1);
  for (double& x : l) x = uniform_range(rng, -1, 1);
  const ParamVector rebuilt = add(g, compute_update(l, g));
  for (size_t i = 0; i < l.size(); ++i) {
    CHECK(rebuilt[i] == doctest::Approx(l[i]).epsilon(1e-15));
  }
}

TEST_CASE("aggregate with one client adds its full delta") {
  const ParamVector w = {1, 1};
  const ParamVector out = aggregate({make_update(0, {0.5, -0.5}, 7)}, w);
  CHECK(out == ParamVector{1.5, 0.5});
}

TEST_CASE("aggregate with equal weights averages deltas") {
  const ParamVector w = {0, 0};
  const ParamVector out = aggregate(
      {make_update(0, {2, 0}, 1), make_update(1, {0, 2}, 1)}, w);
  CHECK(out[0] == doctest::Approx(1.0));
  CHECK(out[1] == doctest::Approx(1.0));
}

TEST_CASE("aggregate weights deltas by sample count") {
  const ParamVector w = {0, 0};
  const ParamVector out = aggregate(
      {make_update(0, {4, 0}, 1), make_update(1, {0, 4}, 3)}, w);
  CHECK(out[0] == doctest::Approx(1.0));
  CHECK(out[1] == doctest::Approx(3.0));
}

TEST_CASE("aggregate validates its inputs") {
  CHECK_THROWS_AS(aggregate({}, {1.0}), ConfigError);
  CHECK_THROWS_AS(aggregate({make_update(0, {1, 2}, 1)}, {1.0}),
                  DimensionError);
  CHECK_THROWS_AS(aggregate({make_update(0, {1.0}, 0)}, {1.0}), ConfigError);
}

TEST_CASE("aggregate matches the closed-form weighted mean") {
  Rng rng(13);
  for (int trial = 0; trial < 50; ++trial) {
    const size_t d = 1 + uniform_below(rng, 40);
    const int clients = 1 + static_cast<int>(uniform_below(rng, 6));
    ParamVector w(d);
    for (double& x : w) x = uniform_range(rng, -1, 1);
    std::vector<ClientUpdate> updates;
    double total = 0.0;
    for (int k = 0; k < clients; ++k) {
      ParamVector delta(d);
      for (double& x : delta) x = uniform_range(rng, -1, 1);
      const int n = 1 + static_cast<int>(uniform_below(rng, 50));
      total += n;
      updates.push_back(make_update(k, std::move(delta), n));
    }
    const ParamVector out = aggregate(updates, w);
    for (size_t i = 0; i < d; ++i) {
      double expected = w[i];
      for (const ClientUpdate& u : updates) {
        expected += u.sample_count / total * u.delta[i];
      }
      CHECK(out[i] == doctest::Approx(expected).epsilon(1e-12));
    }
  }
}

TEST_CASE("aggregate is exactly invariant to client order") {
  Rng rng(17);
  const size_t d = 33;
  ParamVector w(d);
  for (double& x : w) x = uniform_range(rng, -1, 1);
  std::vector<ClientUpdate> updates;
  for (int k = 0; k < 5; ++k) {
    ParamVector delta(d);
    for (double& x : delta) x = uniform_range(rng, -1, 1);
    updates.push_back(make_update(k, std::move(delta), k + 1));
  }
  const ParamVector sorted_result = aggregate(updates, w);
  std::reverse(updates.begin(), updates.end());
  CHECK(aggregate(updates, w) == sorted_result);
  std::swap(updates[0], updates[3]);
  CHECK(aggregate(updates, w) == sorted_result);
}

TEST_CASE("aggregate of all-zero deltas returns the global weights exactly") {
  const ParamVector w = {0.123456789, -0.987654321, 1e-9};
  const ParamVector out = aggregate(
      {make_update(0, {0, 0, 0}, 3), make_update(1, {0, 0, 0}, 4)}, w);
  CHECK(out == w);
}

TEST_CASE("one round in mode none matches the composed pipeline") {
  const Federation fed = build_federation(3, {1}, 1, 0.0, 12);
  const ModelShape shape{4};
  const ParamVector w0 = init_weights(shape, make_stream(3, Stream::kModelInit));

  PrivacyConfig privacy;
  privacy.mode = PrivacyMode::kNone;
  TrainConfig train;
  train.batch_size = 1;

  FederatedTrainer trainer(fed, shape, w0, privacy, train, 1e-3, 1, 3, false);
  trainer.run_round();

  // Replay the same pipeline by hand: local_train -> compute_update ->
  // aggregate, with the trainer's derived shuffle stream.
  OptimizerState opt;
  opt.reset(w0.size());
  Rng shuffle = make_stream(3, Stream::kShuffle, 0, 0);
  const double lr = cosine_lr(0, 1, 1e-3);
  const LocalTrainResult lt =
      local_train(shape, w0, fed.sites[0], train, lr, opt, shuffle);
  const ParamVector expected =
      aggregate({make_update(0, compute_update(lt.weights, w0),
                             fed.sites[0].sample_count())},
                w0);
  CHECK(trainer.state().w_current == expected);
  CHECK(trainer.state().w_current == lt.weights);
}

TEST_CASE("zero learning rate keeps the global model fixed in every mode") {
  const Federation fed = build_federation(5, {4, 3}, 2, 0.5, 12);
  const ModelShape shape{4};
  const ParamVector w0 = init_weights(shape, make_stream(5, Stream::kModelInit));
  for (PrivacyMode mode :
       {PrivacyMode::kNone, PrivacyMode::kStatic, PrivacyMode::kAdaptive}) {
    PrivacyConfig privacy;
    privacy.mode = mode;
    privacy.fixed_threshold = 1.0;
    FederatedTrainer trainer(fed, shape, w0, privacy, TrainConfig{}, 0.0, 2, 5,
                             false);
    trainer.run_round();
    trainer.run_round();
    CHECK(trainer.state().w_current == w0);
    CHECK_FALSE(trainer.diverged());
  }
}

TEST_CASE("mode none ignores the privacy parameters") {
  const Federation fed = build_federation(7, {5, 4}, 2, 0.5, 12);
  const ModelShape shape{4};
  const ParamVector w0 = init_weights(shape, make_stream(7, Stream::kModelInit));

  auto run = [&](double p, double eps, double sigma, double q) {
    PrivacyConfig privacy;
    privacy.mode = PrivacyMode::kNone;
    privacy.p = p;
    privacy.epsilon = eps;
    privacy.sigma = sigma;
    privacy.q = q;
    FederatedTrainer trainer(fed, shape, w0, privacy, TrainConfig{}, 1e-3, 2,
                             7, false);
    trainer.run_round();
    trainer.run_round();
    return trainer.state().w_current;
  };
  const ParamVector a = run(95.0, 0.001, 1.0, 1.0);
  const ParamVector b = run(50.0, 100.0, 7.0, 1.0);
  CHECK(a == b);
}

TEST_CASE("round execution is invariant to the site ordering") {
  Federation fed = build_federation(11, {4, 3, 5}, 2, 0.8, 12);
  Federation permuted = fed;
  std::swap(permuted.sites[0], permuted.sites[2]);

  const ModelShape shape{4};
  const ParamVector w0 =
      init_weights(shape, make_stream(11, Stream::kModelInit));
  PrivacyConfig privacy;
  privacy.mode = PrivacyMode::kAdaptive;

  FederatedTrainer a(fed, shape, w0, privacy, TrainConfig{}, 1e-3, 2, 11, false);
  FederatedTrainer b(permuted, shape, w0, privacy, TrainConfig{}, 1e-3, 2, 11,
                     false);
  const RoundRecord ra = a.run_round();
  const RoundRecord rb = b.run_round();
  CHECK(a.state().w_current == b.state().w_current);
  CHECK(ra.mean_val_dice == rb.mean_val_dice);
  REQUIRE(ra.clients.size() == rb.clients.size());
  for (size_t i = 0; i < ra.clients.size(); ++i) {
    CHECK(ra.clients[i].site_id == rb.clients[i].site_id);
  }
}

TEST_CASE("run_experiment with zero rounds returns the initial model") {
  ExperimentConfig cfg = tiny_config();
  cfg.rounds = 0;
  const ExperimentResult r = run_experiment(cfg, cfg.seed);
  CHECK(r.rounds.empty());
  CHECK(r.state.round == 0);
  CHECK(r.state.w_current == r.state.w_best);
  CHECK(r.status == RunStatus::kOk);
  CHECK(r.test_best.per_sample.size() == 4);
}

TEST_CASE("a five-round toy run finishes quickly with five records") {
  ExperimentConfig cfg = tiny_config();
  cfg.rounds = 5;
  const auto start = std::chrono::steady_clock::now();
  const ExperimentResult r = run_experiment(cfg, 2);
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();
  CHECK(r.rounds.size() == 5);
  CHECK(r.status == RunStatus::kOk);
  CHECK(seconds < 10.0);
}

TEST_CASE("run_experiment emits one record per round and is deterministic") {
  const ExperimentConfig cfg = tiny_config();
  const ExperimentResult a = run_experiment(cfg, cfg.seed);
  const ExperimentResult b = run_experiment(cfg, cfg.seed);
  CHECK(a.rounds.size() == 3);
  CHECK(a.state.w_current == b.state.w_current);
  CHECK(a.state.w_best == b.state.w_best);
  CHECK(a.test_best.per_sample == b.test_best.per_sample);
  CHECK(a.init_checksum == b.init_checksum);
  for (size_t t = 0; t < a.rounds.size(); ++t) {
    CHECK(a.rounds[t].mean_val_dice == b.rounds[t].mean_val_dice);
  }
}

TEST_CASE("best validation dice is non-decreasing across rounds") {
  ExperimentConfig cfg = tiny_config();
  cfg.rounds = 6;
  const ExperimentResult r = run_experiment(cfg, 9);
  REQUIRE(r.rounds.size() == 6);
  double prev = -1.0;
  double running_max = -1.0;
  for (const RoundRecord& rec : r.rounds) {
    CHECK(rec.best_val_dice >= prev);
    prev = rec.best_val_dice;
    running_max = std::max(running_max, rec.mean_val_dice);
    CHECK(rec.best_val_dice == doctest::Approx(running_max));
  }
  CHECK(r.state.best_round >= 0);
}

TEST_CASE("static mode calibrates C from non-private warm-up rounds") {
  ExperimentConfig cfg = tiny_config();
  cfg.privacy.mode = PrivacyMode::kStatic;
  cfg.privacy.fixed_threshold = 0.0;
  const ExperimentResult r = run_experiment(cfg, cfg.seed);
  CHECK(r.static_threshold > 0.0);

  // Independent replay: the median per-client update norm over the warm-up
  // rounds of the equivalent non-private run.
  ExperimentConfig warm_cfg = cfg;
  warm_cfg.privacy.mode = PrivacyMode::kNone;
  const ExperimentResult warm = run_experiment(warm_cfg, cfg.seed);
  std::vector<double> norms;
  for (int t = 0; t < kStaticWarmupRounds && t < (int)warm.rounds.size(); ++t) {
    for (const ClientRoundStats& c : warm.rounds[t].clients) {
      norms.push_back(c.trace.pre_clip_norm);
    }
  }
  CHECK(r.static_threshold == doctest::Approx(median(norms)));
}

TEST_CASE("every sanitized update respects the clip bound") {
  ExperimentConfig cfg = tiny_config();
  cfg.privacy.mode = PrivacyMode::kAdaptive;
  const ExperimentResult r = run_experiment(cfg, 31);
  int checked = 0;
  for (const RoundRecord& rec : r.rounds) {
    for (const ClientRoundStats& c : rec.clients) {
      if (!c.trace.degenerate) {
        CHECK(c.trace.post_clip_norm <= c.trace.gamma + 1e-9);
        ++checked;
      }
    }
  }
  CHECK(checked > 0);
}

TEST_CASE("run_experiment reports divergence instead of crashing") {
  ExperimentConfig cfg = tiny_config();
  cfg.base_lr = 1e6;
  cfg.privacy.mode = PrivacyMode::kNone;
  const ExperimentResult r = run_experiment(cfg, 1);
  CHECK(r.status == RunStatus::kDiverged);
  CHECK(r.diverged_round >= 0);
}

TEST_CASE("optimizer state persistence is observable across rounds") {
  // With per-round resets the second round repeats the bias-correction
  // warm-up, so trajectories must differ from the persistent default.
  ExperimentConfig cfg = tiny_config();
  const ExperimentResult persistent = run_experiment(cfg, 4);
  cfg.reset_optimizer_each_round = true;
  const ExperimentResult reset = run_experiment(cfg, 4);
  CHECK(persistent.state.w_current != reset.state.w_current);
}
