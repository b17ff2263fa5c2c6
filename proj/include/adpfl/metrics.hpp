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
#include <vector>

#include "adpfl/errors.hpp"
#include "adpfl/grid.hpp"

namespace adpfl {

// Overlap between two binary masks: 2|P∩G| / (|P|+|G|).
// Both masks empty counts as perfect agreement (1.0).
inline double dice_coefficient(const MaskGrid& pred, const MaskGrid& target) {
  if (!pred.same_shape(target)) {
    throw DimensionError("dice_coefficient: mask shapes differ");
  }
  long intersection = 0;
  long total = 0;
  for (size_t i = 0; i < pred.data.size(); ++i) {
    const bool p = pred.data[i] != 0;
    const bool g = target.data[i] != 0;
    intersection += (p && g);
    total += p;
    total += g;
  }
  if (total == 0) return 1.0;
  return 2.0 * static_cast<double>(intersection) / static_cast<double>(total);
}

// Probability mask -> binary mask at a strict threshold.
inline MaskGrid binarize(const Image& probs, double threshold = 0.5) {
  MaskGrid out(probs.rows, probs.cols, 0);
  for (size_t i = 0; i < probs.data.size(); ++i) {
    out.data[i] = probs.data[i] > threshold ? 1 : 0;
  }
  return out;
}

struct MeanStd {
  double mean = 0.0;
  double stddev = 0.0;
};

// Mean and standard deviation. Population formula (divisor n) by default;
// sample_std switches to divisor n-1 (0 for a single value).
inline MeanStd mean_std(const std::vector<double>& values,
                        bool sample_std = false) {
  if (values.empty()) throw ConfigError("mean_std: empty value list");
  double sum = 0.0;
  for (double v : values) sum += v;
  const double mean = sum / values.size();
  double sq = 0.0;
  for (double v : values) sq += (v - mean) * (v - mean);
  const size_t div = sample_std ? values.size() - 1 : values.size();
  const double var = div == 0 ? 0.0 : sq / div;
  return {mean, std::sqrt(var)};
}

// Across-run statistics for repeated experiments.
inline MeanStd summarize_runs(const std::vector<double>& final_means,
                              bool sample_std = false) {
  return mean_std(final_means, sample_std);
}

inline double median(std::vector<double> values) {
  if (values.empty()) throw ConfigError("median: empty value list");
  std::sort(values.begin(), values.end());
  const size_t n = values.size();
  if (n % 2 == 1) return values[n / 2];
  return 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

// Per-sample Dice values plus their across-sample statistics.
struct DiceReport {
  std::vector<double> per_sample;
  double mean = 0.0;
  double stddev = 0.0;
};

inline DiceReport make_dice_report(std::vector<double> per_sample,
                                   bool sample_std = false) {
  DiceReport report;
  const MeanStd ms = mean_std(per_sample, sample_std);
  report.per_sample = std::move(per_sample);
  report.mean = ms.mean;
  report.stddev = ms.stddev;
  return report;
}

}  // namespace adpfl
