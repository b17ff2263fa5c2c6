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

#include <stdexcept>

namespace adpfl {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Vector lengths disagree between operands.
struct DimensionError : Error {
  using Error::Error;
};

// Invalid configuration value or combination.
struct ConfigError : Error {
  using Error::Error;
};

// Learning-rate schedule queried outside [0, total_rounds).
struct ScheduleError : Error {
  using Error::Error;
};

// A client update collapsed to all zeros before sanitization.
struct DegenerateUpdateError : Error {
  using Error::Error;
};

// Filesystem failure while writing artifacts.
struct IoError : Error {
  using Error::Error;
};

}  // namespace adpfl
