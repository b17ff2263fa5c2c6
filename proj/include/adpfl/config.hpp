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

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "adpfl/errors.hpp"
#include "adpfl/model.hpp"
#include "adpfl/privacy.hpp"

namespace adpfl {

namespace detail {

// Shortest decimal string that parses back to exactly the same double.
// Integral values print without an exponent.
inline std::string format_double(double v) {
  if (v == std::floor(v) && std::fabs(v) < 1e15) {
    return std::to_string(static_cast<long long>(v));
  }
  char buf[64];
  for (int prec = 1; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

inline std::string trim(const std::string& s) {
  const size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

inline double parse_double(const std::string& key, const std::string& value) {
  char* end = nullptr;
  const double v = std::strtod(value.c_str(), &end);
  if (end == value.c_str() || *end != '\0') {
    throw ConfigError(key + ": expected a number, got '" + value + "'");
  }
  return v;
}

inline long long parse_int(const std::string& key, const std::string& value) {
  char* end = nullptr;
  const long long v = std::strtoll(value.c_str(), &end, 10);
  if (end == value.c_str() || *end != '\0') {
    throw ConfigError(key + ": expected an integer, got '" + value + "'");
  }
  return v;
}

inline uint64_t parse_uint(const std::string& key, const std::string& value) {
  char* end = nullptr;
  const unsigned long long v = std::strtoull(value.c_str(), &end, 10);
  if (end == value.c_str() || *end != '\0') {
    throw ConfigError(key + ": expected an unsigned integer, got '" + value +
                      "'");
  }
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError(key + ": expected true/false, got '" + value + "'");
}

template <typename T, typename Parse>
std::vector<T> parse_list(const std::string& key, const std::string& value,
                          Parse parse) {
  std::vector<T> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) throw ConfigError(key + ": empty list element");
    out.push_back(parse(key, item));
  }
  if (out.empty()) throw ConfigError(key + ": empty list");
  return out;
}

template <typename T, typename Fmt>
std::string join(const std::vector<T>& v, Fmt fmt) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i > 0) out += ',';
    out += fmt(v[i]);
  }
  return out;
}

}  // namespace detail

// Full description of one experiment. Files and CLI flags use the same flat
// key=value names (see key_values()).
struct ExperimentConfig {
  uint64_t seed = 1;
  int rounds = 100;
  int repeats = 3;
  double heterogeneity = 0.5;
  int image_size = 32;
  std::vector<int> client_sizes = {113, 105, 97, 82, 78};
  int test_samples = 60;
  std::string out_dir = "out";

  int hidden = 16;

  double base_lr = 1e-4;
  TrainConfig train;
  bool reset_optimizer_each_round = false;

  PrivacyConfig privacy;

  bool sample_std = false;
  std::vector<double> sweep_percentiles = {70, 75, 80, 85, 90, 95};

  void apply(const std::string& key, const std::string& value);
  void load_file(const std::string& path);
  void validate() const;
  std::vector<std::pair<std::string, std::string>> key_values() const;
  std::string resolved_text() const;
};

inline void ExperimentConfig::apply(const std::string& key,
                                    const std::string& value) {
  using namespace detail;
  if (key == "seed") {
    seed = parse_uint(key, value);
  } else if (key == "rounds") {
    rounds = static_cast<int>(parse_int(key, value));
  } else if (key == "repeats") {
    repeats = static_cast<int>(parse_int(key, value));
  } else if (key == "heterogeneity") {
    heterogeneity = parse_double(key, value);
  } else if (key == "image_size") {
    image_size = static_cast<int>(parse_int(key, value));
  } else if (key == "client_sizes") {
    client_sizes = parse_list<int>(key, value, [](const std::string& k,
                                                  const std::string& v) {
      return static_cast<int>(parse_int(k, v));
    });
  } else if (key == "test_samples") {
    test_samples = static_cast<int>(parse_int(key, value));
  } else if (key == "out_dir") {
    out_dir = value;
  } else if (key == "model.hidden") {
    hidden = static_cast<int>(parse_int(key, value));
  } else if (key == "opt.lr") {
    base_lr = parse_double(key, value);
  } else if (key == "opt.weight_decay") {
    train.adam.weight_decay = parse_double(key, value);
  } else if (key == "opt.beta1") {
    train.adam.beta1 = parse_double(key, value);
  } else if (key == "opt.beta2") {
    train.adam.beta2 = parse_double(key, value);
  } else if (key == "opt.eps") {
    train.adam.eps = parse_double(key, value);
  } else if (key == "opt.batch_size") {
    train.batch_size = static_cast<int>(parse_int(key, value));
  } else if (key == "opt.epochs") {
    train.epochs = static_cast<int>(parse_int(key, value));
  } else if (key == "opt.reset_state_each_round") {
    reset_optimizer_each_round = parse_bool(key, value);
  } else if (key == "privacy.mode") {
    privacy.mode = privacy_mode_from_string(value);
  } else if (key == "privacy.q") {
    privacy.q = parse_double(key, value);
  } else if (key == "privacy.p") {
    privacy.p = parse_double(key, value);
  } else if (key == "privacy.fixed_threshold") {
    privacy.fixed_threshold = parse_double(key, value);
  } else if (key == "privacy.epsilon") {
    privacy.epsilon = parse_double(key, value);
  } else if (key == "privacy.sigma") {
    privacy.sigma = parse_double(key, value);
  } else if (key == "privacy.rng_seed") {
    privacy.rng_seed = parse_uint(key, value);
  } else if (key == "privacy.percentile_include_zeros") {
    privacy.percentile_include_zeros = parse_bool(key, value);
  } else if (key == "privacy.noise_on_support_only") {
    privacy.noise_on_support_only = parse_bool(key, value);
  } else if (key == "metrics.sample_std") {
    sample_std = parse_bool(key, value);
  } else if (key == "sweep.percentiles") {
    sweep_percentiles =
        parse_list<double>(key, value, [](const std::string& k,
                                          const std::string& v) {
          return parse_double(k, v);
        });
  } else {
    throw ConfigError("unknown config key '" + key + "'");
  }
}

inline void ExperimentConfig::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config file not found: " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path + ":" + std::to_string(lineno) +
                        ": expected key=value");
    }
    apply(detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
  }
}

inline void ExperimentConfig::validate() const {
  if (rounds < 0) throw ConfigError("rounds must be >= 0");
  if (repeats < 1) throw ConfigError("repeats must be >= 1");
  if (!(heterogeneity >= 0.0 && heterogeneity <= 1.0)) {
    throw ConfigError("heterogeneity must lie in [0,1]");
  }
  if (image_size < 10) throw ConfigError("image_size must be >= 10");
  if (client_sizes.empty()) throw ConfigError("client_sizes must be nonempty");
  for (int n : client_sizes) {
    if (n < 1) throw ConfigError("client_sizes entries must be >= 1");
  }
  if (test_samples < 1) throw ConfigError("test_samples must be >= 1");
  if (hidden < 1) throw ConfigError("model.hidden must be >= 1");
  if (!(base_lr > 0.0) || !std::isfinite(base_lr)) {
    throw ConfigError("opt.lr must be positive");
  }
  if (train.adam.weight_decay < 0.0) {
    throw ConfigError("opt.weight_decay must be >= 0");
  }
  if (!(train.adam.beta1 >= 0.0 && train.adam.beta1 < 1.0) ||
      !(train.adam.beta2 >= 0.0 && train.adam.beta2 < 1.0)) {
    throw ConfigError("opt.beta1/opt.beta2 must lie in [0,1)");
  }
  if (!(train.adam.eps > 0.0)) throw ConfigError("opt.eps must be positive");
  if (train.batch_size < 1) throw ConfigError("opt.batch_size must be >= 1");
  if (train.epochs < 1) throw ConfigError("opt.epochs must be >= 1");

  // At the experiment level a zero static threshold means "calibrate on
  // warm-up rounds"; the mechanism-level positivity check happens after.
  if (privacy.fixed_threshold < 0.0) {
    throw ConfigError("privacy.fixed_threshold must be >= 0");
  }
  PrivacyConfig relaxed = privacy;
  if (relaxed.mode == PrivacyMode::kStatic && relaxed.fixed_threshold == 0.0) {
    relaxed.fixed_threshold = 1.0;
  }
  relaxed.validate();

  if (sweep_percentiles.empty()) {
    throw ConfigError("sweep.percentiles must be nonempty");
  }
  std::set<double> seen;
  for (double p : sweep_percentiles) {
    if (!(p > 0.0 && p <= 100.0)) {
      throw ConfigError("sweep.percentiles entries must lie in (0,100]");
    }
    if (!seen.insert(p).second) {
      throw ConfigError("sweep.percentiles contains duplicate values");
    }
  }
}

inline std::vector<std::pair<std::string, std::string>>
ExperimentConfig::key_values() const {
  using namespace detail;
  const auto fd = [](double v) { return format_double(v); };
  const auto fi = [](int v) { return std::to_string(v); };
  const auto fb = [](bool v) { return std::string(v ? "true" : "false"); };
  return {
      {"seed", std::to_string(seed)},
      {"rounds", fi(rounds)},
      {"repeats", fi(repeats)},
      {"heterogeneity", fd(heterogeneity)},
      {"image_size", fi(image_size)},
      {"client_sizes", join(client_sizes, fi)},
      {"test_samples", fi(test_samples)},
      {"out_dir", out_dir},
      {"model.hidden", fi(hidden)},
      {"opt.lr", fd(base_lr)},
      {"opt.weight_decay", fd(train.adam.weight_decay)},
      {"opt.beta1", fd(train.adam.beta1)},
      {"opt.beta2", fd(train.adam.beta2)},
      {"opt.eps", fd(train.adam.eps)},
      {"opt.batch_size", fi(train.batch_size)},
      {"opt.epochs", fi(train.epochs)},
      {"opt.reset_state_each_round", fb(reset_optimizer_each_round)},
      {"privacy.mode", to_string(privacy.mode)},
      {"privacy.q", fd(privacy.q)},
      {"privacy.p", fd(privacy.p)},
      {"privacy.fixed_threshold", fd(privacy.fixed_threshold)},
      {"privacy.epsilon", fd(privacy.epsilon)},
      {"privacy.sigma", fd(privacy.sigma)},
      {"privacy.rng_seed", std::to_string(privacy.rng_seed)},
      {"privacy.percentile_include_zeros",
       fb(privacy.percentile_include_zeros)},
      {"privacy.noise_on_support_only", fb(privacy.noise_on_support_only)},
      {"metrics.sample_std", fb(sample_std)},
      {"sweep.percentiles", join(sweep_percentiles, fd)},
  };
}

inline std::string ExperimentConfig::resolved_text() const {
  std::string out;
  for (const auto& [key, value] : key_values()) {
    out += key;
    out += " = ";
    out += value;
    out += '\n';
  }
  return out;
}

}  // namespace adpfl
