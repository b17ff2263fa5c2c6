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

#include <cstdint>
#include <vector>

namespace adpfl {

// Dense row-major 2D grid.
template <typename T>
struct Grid {
  int rows = 0;
  int cols = 0;
  std::vector<T> data;

  Grid() = default;
  Grid(int r, int c, T fill = T{})
      : rows(r), cols(c), data(static_cast<size_t>(r) * c, fill) {}

  T& operator()(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
  const T& operator()(int r, int c) const {
    return data[static_cast<size_t>(r) * cols + c];
  }

  int size() const { return rows * cols; }
  bool same_shape(const Grid& other) const {
    return rows == other.rows && cols == other.cols;
  }
};

using Image = Grid<double>;
using MaskGrid = Grid<uint8_t>;

inline int foreground_count(const MaskGrid& m) {
  int n = 0;
  for (uint8_t v : m.data) n += (v != 0);
  return n;
}

inline double foreground_fraction(const MaskGrid& m) {
  return m.size() == 0 ? 0.0
                       : static_cast<double>(foreground_count(m)) / m.size();
}

}  // namespace adpfl
