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
#include <utility>
#include <vector>

#include "adpfl/errors.hpp"
#include "adpfl/params.hpp"
#include "adpfl/rng.hpp"

namespace adpfl {

// none      - forward the update untouched (NP-FL baseline)
// static    - sparsify, clip to a fixed threshold C, add Laplace(sigma*C/eps)
// adaptive  - sparsify, clip to a per-round magnitude percentile gamma,
//             add Laplace(sigma*gamma/eps)
enum class PrivacyMode { kNone, kStatic, kAdaptive };

inline const char* to_string(PrivacyMode m) {
  switch (m) {
    case PrivacyMode::kNone:
      return "none";
    case PrivacyMode::kStatic:
      return "static";
    case PrivacyMode::kAdaptive:
      return "adaptive";
  }
  return "?";
}

inline PrivacyMode privacy_mode_from_string(const std::string& s) {
  if (s == "none") return PrivacyMode::kNone;
  if (s == "static") return PrivacyMode::kStatic;
  if (s == "adaptive") return PrivacyMode::kAdaptive;
  throw ConfigError("privacy.mode must be none, static or adaptive (got '" +
                    s + "')");
}

struct PrivacyConfig {
  PrivacyMode mode = PrivacyMode::kAdaptive;
  double q = 0.9;                // retention fraction, (0,1]
  double p = 95.0;               // clipping percentile, (0,100]
  double fixed_threshold = 0.0;  // static-mode bound C; must be > 0 there
  double epsilon = 0.001;        // privacy budget
  double sigma = 1.0;            // interference scale
  uint64_t rng_seed = 0;         // 0: noise streams derive from the run seed

  // The percentile is normally taken over the retained nonzero components
  // only; this flag includes the structurally zeroed ones for comparison.
  bool percentile_include_zeros = false;
  // Restrict noise to the retained support instead of the full vector.
  bool noise_on_support_only = false;

  void validate() const {
    if (!(q > 0.0 && q <= 1.0)) throw ConfigError("privacy.q must lie in (0,1]");
    if (!(p > 0.0 && p <= 100.0)) {
      throw ConfigError("privacy.p must lie in (0,100]");
    }
    if (!(epsilon > 0.0) || !std::isfinite(epsilon)) {
      throw ConfigError("privacy.epsilon must be positive");
    }
    if (!(sigma > 0.0) || !std::isfinite(sigma)) {
      throw ConfigError("privacy.sigma must be positive");
    }
    if (mode == PrivacyMode::kStatic && !(fixed_threshold > 0.0)) {
      throw ConfigError(
          "privacy.fixed_threshold must be positive in static mode");
    }
  }
};

// Per-update log of what the sanitizer did. gamma is the bound actually
// applied: the adaptive percentile, or C in static mode, 0 when degenerate.
struct SanitizationTrace {
  double pre_clip_norm = 0.0;
  double gamma = 0.0;
  double clip_factor = 1.0;
  double post_clip_norm = 0.0;
  double noise_scale_b = 0.0;
  int retained_count = 0;
  bool degenerate = false;
};

// Number of components kept by top-q sparsification: ceil(q*d). The small
// epsilon guards against q*d landing a hair above an exact integer.
inline size_t top_q_count(double q, size_t d) {
  if (!(q > 0.0 && q <= 1.0)) throw ConfigError("q must lie in (0,1]");
  const auto k = static_cast<size_t>(
      std::ceil(q * static_cast<double>(d) - 1e-9));
  return std::clamp<size_t>(k, 1, d);
}

// Keep the ceil(q*d) components with the largest absolute values, zero the
// rest. Ties break toward the lower index. Retained components keep their
// signed values and positions.
inline ParamVector sparsify_top_q(const ParamVector& delta, double q) {
  const size_t d = delta.size();
  if (d == 0) {
    top_q_count(q, 1);  // still validate q
    return {};
  }
  const size_t k = top_q_count(q, d);
  if (k >= d) return delta;
  std::vector<uint32_t> idx(d);
  std::iota(idx.begin(), idx.end(), 0u);
  std::sort(idx.begin(), idx.end(), [&](uint32_t a, uint32_t b) {
    const double ma = std::fabs(delta[a]);
    const double mb = std::fabs(delta[b]);
    if (ma != mb) return ma > mb;
    return a < b;
  });
  ParamVector out(d, 0.0);
  for (size_t i = 0; i < k; ++i) out[idx[i]] = delta[idx[i]];
  return out;
}

// p-th percentile of the absolute values, linear interpolation between
// closest ranks: r = (p/100)*(m-1) over the m sorted magnitudes. Zero
// components are excluded unless include_zeros is set.
inline double percentile_abs(const ParamVector& delta, double p,
                             bool include_zeros = false) {
  if (!(p > 0.0 && p <= 100.0)) throw ConfigError("p must lie in (0,100]");
  std::vector<double> mags;
  mags.reserve(delta.size());
  for (double x : delta) {
    const double m = std::fabs(x);
    if (include_zeros || m != 0.0) mags.push_back(m);
  }
  if (mags.empty()) {
    throw DegenerateUpdateError("percentile_abs: no retained components");
  }
  std::sort(mags.begin(), mags.end());
  const double r = (p / 100.0) * static_cast<double>(mags.size() - 1);
  const auto lo = static_cast<size_t>(r);
  const size_t hi = std::min(lo + 1, mags.size() - 1);
  const double frac = r - static_cast<double>(lo);
  return mags[lo] + frac * (mags[hi] - mags[lo]);
}

// Project onto the L2 ball of radius gamma: delta / max(1, |delta|/gamma).
// Returns the scaled vector and the factor applied (1 when inside the ball).
inline std::pair<ParamVector, double> clip_l2(const ParamVector& delta,
                                              double gamma) {
  if (!(gamma > 0.0)) throw ConfigError("clip_l2: gamma must be positive");
  const double norm = l2_norm(delta);
  const double factor = 1.0 / std::max(1.0, norm / gamma);
  return {scale(delta, factor), factor};
}

// One Laplace(0, b) draw via inverse CDF from u in (-0.5, 0.5):
// x = -b * sign(u) * ln(1 - 2|u|).
inline double laplace_sample(double b, Rng& rng) {
  const double u = uniform_open01(rng) - 0.5;
  const double s = static_cast<double>(u > 0.0) - static_cast<double>(u < 0.0);
  return -b * s * std::log1p(-2.0 * std::fabs(u));
}

// Adds i.i.d. Laplace(0, b) noise to every component.
inline ParamVector laplace_noise(const ParamVector& delta, double b,
                                 Rng& rng) {
  if (!(b >= 0.0) || !std::isfinite(b)) {
    throw ConfigError("laplace_noise: scale must be finite and >= 0");
  }
  ParamVector out(delta.size());
  for (size_t i = 0; i < delta.size(); ++i) {
    out[i] = delta[i] + laplace_sample(b, rng);
  }
  return out;
}

// The full sanitization pipeline for one client update:
//   none:     identity; the trace records norms only.
//   adaptive: sparsify -> gamma = percentile of retained magnitudes ->
//             clip to gamma -> Laplace noise with b = sigma*gamma/epsilon.
//   static:   sparsify -> clip to C -> Laplace noise with b = sigma*C/epsilon.
// An update that is all zeros after sparsification (or whose bound is zero)
// skips clipping and noise and comes back as zeros, flagged degenerate.
inline std::pair<ParamVector, SanitizationTrace> sanitize(
    const ParamVector& delta, const PrivacyConfig& cfg, Rng& rng) {
  cfg.validate();
  if (!all_finite(delta)) throw Error("sanitize: non-finite update");

  SanitizationTrace trace;
  trace.pre_clip_norm = l2_norm(delta);

  if (cfg.mode == PrivacyMode::kNone) {
    trace.post_clip_norm = trace.pre_clip_norm;
    trace.retained_count = static_cast<int>(delta.size());
    return {delta, trace};
  }

  ParamVector sparse = sparsify_top_q(delta, cfg.q);
  trace.retained_count = static_cast<int>(top_q_count(cfg.q, delta.size()));

  const bool all_zero = std::all_of(sparse.begin(), sparse.end(),
                                    [](double x) { return x == 0.0; });
  double bound = 0.0;
  if (!all_zero) {
    bound = cfg.mode == PrivacyMode::kStatic
                ? cfg.fixed_threshold
                : percentile_abs(sparse, cfg.p, cfg.percentile_include_zeros);
  }
  if (all_zero || !(bound > 0.0)) {
    trace.degenerate = true;
    trace.gamma = 0.0;
    trace.noise_scale_b = 0.0;
    trace.clip_factor = 1.0;
    trace.post_clip_norm = 0.0;
    return {ParamVector(delta.size(), 0.0), trace};
  }

  trace.gamma = bound;
  auto [clipped, factor] = clip_l2(sparse, bound);
  trace.clip_factor = factor;
  trace.post_clip_norm = l2_norm(clipped);
  if (trace.post_clip_norm > bound * (1.0 + 1e-12) + 1e-12) {
    throw Error("sanitize: clip bound violated");
  }

  trace.noise_scale_b = cfg.sigma * bound / cfg.epsilon;
  ParamVector noised;
  if (cfg.noise_on_support_only) {
    noised = clipped;
    for (size_t i = 0; i < noised.size(); ++i) {
      if (sparse[i] != 0.0) {
        noised[i] += laplace_sample(trace.noise_scale_b, rng);
      }
    }
  } else {
    noised = laplace_noise(clipped, trace.noise_scale_b, rng);
  }
  return {std::move(noised), trace};
}

}  // namespace adpfl
