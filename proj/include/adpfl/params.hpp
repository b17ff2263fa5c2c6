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
#include <cstring>
#include <string>
#include <vector>

#include "adpfl/errors.hpp"

namespace adpfl {

// Flat vector of model parameters or a parameter delta. All layers of a
// model live in one vector; layer boundaries are the model's business.
using ParamVector = std::vector<double>;

inline void check_same_size(const ParamVector& a, const ParamVector& b,
                            const char* op) {
  if (a.size() != b.size()) {
    throw DimensionError(std::string(op) + ": length mismatch (" +
                         std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()) + ")");
  }
}

inline ParamVector add(const ParamVector& a, const ParamVector& b) {
  check_same_size(a, b, "add");
  ParamVector out(a.size());
  for (size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

inline ParamVector sub(const ParamVector& a, const ParamVector& b) {
  check_same_size(a, b, "sub");
  ParamVector out(a.size());
  for (size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

inline ParamVector scale(const ParamVector& a, double c) {
  if (!std::isfinite(c)) throw ConfigError("scale: non-finite factor");
  ParamVector out(a.size());
  for (size_t i = 0; i < a.size(); ++i) out[i] = a[i] * c;
  return out;
}

inline double l2_norm(const ParamVector& a) {
  double s = 0.0;
  for (double x : a) s += x * x;
  return std::sqrt(s);
}

inline bool all_finite(const ParamVector& a) {
  for (double x : a) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

// FNV-1a over the raw byte image. Used to tag runs that share a model
// initialization.
inline uint64_t checksum(const ParamVector& a) {
  uint64_t h = 1469598103934665603ull;
  for (double x : a) {
    uint64_t bits = 0;
    std::memcpy(&bits, &x, sizeof bits);
    for (int i = 0; i < 8; ++i) {
      h ^= (bits >> (8 * i)) & 0xffu;
      h *= 1099511628211ull;
    }
  }
  return h;
}

}  // namespace adpfl
