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
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "adpfl/errors.hpp"
#include "adpfl/grid.hpp"
#include "adpfl/metrics.hpp"
#include "adpfl/rng.hpp"

namespace adpfl {

// The mask is wherever the noiseless blob field exceeds this value.
inline constexpr double kMaskThreshold = 0.3;
// Blob peak intensity before the per-site offset.
inline constexpr double kBasePeak = 0.6;
// Two-blob samples whose mask would cover more of the image than this fall
// back to the first blob alone, keeping foreground fractions bounded.
inline constexpr double kMaxForeground = 0.45;

struct SyntheticSample {
  uint64_t id = 0;
  Image image;     // intensities in [0,1]
  MaskGrid mask;   // 1 = lesion
};

// Per-site generative shift: this is what makes the federation non-IID.
struct SiteShift {
  double intensity_offset = 0.0;
  double radius_lo = 0.0;  // pixels
  double radius_hi = 0.0;
  double noise_level = 0.0;
};

// Baseline (unshifted) generator parameters, scaled to the image so blobs
// always fit inside the 30%-70% center placement band.
inline SiteShift default_shift(int image_size) {
  SiteShift s;
  s.radius_lo = 0.19 * image_size;
  s.radius_hi = 0.31 * image_size;
  s.noise_level = 0.04;
  return s;
}

struct Blob {
  double cx = 0.0;
  double cy = 0.0;
  double radius = 0.0;
  double peak = 0.0;
};

// Smooth radial field: sum of Gaussian bumps, sigma = radius/2.
inline Image blob_field(int size, const std::vector<Blob>& blobs) {
  Image field(size, size, 0.0);
  for (const Blob& b : blobs) {
    const double sigma = b.radius / 2.0;
    const double inv = 1.0 / (2.0 * sigma * sigma);
    for (int r = 0; r < size; ++r) {
      for (int c = 0; c < size; ++c) {
        const double dx = c - b.cx;
        const double dy = r - b.cy;
        field(r, c) += b.peak * std::exp(-(dx * dx + dy * dy) * inv);
      }
    }
  }
  return field;
}

// Threshold the noiseless field for the mask, then add background Gaussian
// noise and clamp intensities to [0,1] for the image.
inline SyntheticSample render_sample(uint64_t id, const Image& field,
                                     double noise_level, Rng& rng) {
  SyntheticSample s;
  s.id = id;
  s.mask = MaskGrid(field.rows, field.cols, 0);
  s.image = Image(field.rows, field.cols, 0.0);
  for (size_t i = 0; i < field.data.size(); ++i) {
    s.mask.data[i] = field.data[i] > kMaskThreshold ? 1 : 0;
    const double v = field.data[i] + noise_level * gaussian(rng);
    s.image.data[i] = std::clamp(v, 0.0, 1.0);
  }
  return s;
}

inline SyntheticSample generate_sample(uint64_t id, int size,
                                       const SiteShift& shift, Rng& rng) {
  const int blob_count = 1 + static_cast<int>(uniform_below(rng, 2));
  std::vector<Blob> blobs;
  for (int i = 0; i < blob_count; ++i) {
    Blob b;
    b.cx = uniform_range(rng, 0.3, 0.7) * (size - 1);
    b.cy = uniform_range(rng, 0.3, 0.7) * (size - 1);
    b.radius = uniform_range(rng, shift.radius_lo, shift.radius_hi);
    b.peak = kBasePeak + shift.intensity_offset;
    blobs.push_back(b);
  }
  Image field = blob_field(size, blobs);
  if (blobs.size() == 2) {
    MaskGrid mask(size, size, 0);
    for (size_t i = 0; i < field.data.size(); ++i) {
      mask.data[i] = field.data[i] > kMaskThreshold ? 1 : 0;
    }
    if (foreground_fraction(mask) > kMaxForeground) {
      blobs.pop_back();
      field = blob_field(size, blobs);
    }
  }
  SyntheticSample s = render_sample(id, field, shift.noise_level, rng);
  const double frac = foreground_fraction(s.mask);
  if (!(frac > 0.0 && frac < 0.6)) {
    throw Error("generate_sample: foreground fraction " +
                std::to_string(frac) + " outside (0, 0.6)");
  }
  return s;
}

// One simulated institution. n_k (the aggregation weight) is the size of
// the training shard.
struct ClientSite {
  int site_id = 0;
  SiteShift shift;
  std::vector<SyntheticSample> train;
  std::vector<SyntheticSample> val;

  int sample_count() const { return static_cast<int>(train.size()); }
};

struct Federation {
  std::vector<ClientSite> sites;
  std::vector<SyntheticSample> test;  // mixture of all site distributions
  int image_size = 0;
};

// Builds K sites with site-specific generative shifts scaled by the
// heterogeneity level h (h = 0 makes all sites IID), a per-site 75/25
// train/validation split (train count rounded up, minimum 1), and a
// held-out test set drawn from the uniform mixture of the site
// distributions.
inline Federation build_federation(uint64_t seed,
                                   const std::vector<int>& site_sizes,
                                   int test_samples, double heterogeneity,
                                   int image_size) {
  if (site_sizes.empty()) throw ConfigError("client_sizes must be nonempty");
  for (int n : site_sizes) {
    if (n < 1) throw ConfigError("client_sizes entries must be >= 1");
  }
  if (test_samples < 1) throw ConfigError("test_samples must be >= 1");
  if (!(heterogeneity >= 0.0 && heterogeneity <= 1.0)) {
    throw ConfigError("heterogeneity must lie in [0,1]");
  }
  if (image_size < 10) throw ConfigError("image_size must be >= 10");

  Federation fed;
  fed.image_size = image_size;
  const int K = static_cast<int>(site_sizes.size());
  for (int k = 0; k < K; ++k) {
    Rng shift_rng = make_stream(seed, Stream::kSiteShift, k);
    SiteShift shift = default_shift(image_size);
    shift.intensity_offset =
        heterogeneity * uniform_range(shift_rng, -0.05, 0.25);
    const double radius_scale =
        1.0 + heterogeneity * uniform_range(shift_rng, -0.1, 0.1);
    shift.radius_lo *= radius_scale;
    shift.radius_hi *= radius_scale;
    shift.noise_level *= 1.0 + heterogeneity * uniform_range(shift_rng, 0.0, 1.5);

    ClientSite site;
    site.site_id = k;
    site.shift = shift;
    Rng data_rng = make_stream(seed, Stream::kSiteData, k);
    const int n = site_sizes[k];
    const int train_n =
        std::max(1, static_cast<int>(std::ceil(0.75 * n - 1e-9)));
    for (int i = 0; i < n; ++i) {
      const uint64_t id = (static_cast<uint64_t>(k) << 32) | i;
      SyntheticSample s = generate_sample(id, image_size, shift, data_rng);
      if (i < train_n) {
        site.train.push_back(std::move(s));
      } else {
        site.val.push_back(std::move(s));
      }
    }
    fed.sites.push_back(std::move(site));
  }

  Rng test_rng = make_stream(seed, Stream::kTestData);
  for (int i = 0; i < test_samples; ++i) {
    const int k = static_cast<int>(uniform_below(test_rng, K));
    const uint64_t id = (0xFFFFFFFFull << 32) | i;
    fed.test.push_back(
        generate_sample(id, image_size, fed.sites[k].shift, test_rng));
  }
  return fed;
}

namespace detail {

inline void write_sample_files(const std::filesystem::path& dir,
                               const SyntheticSample& s) {
  const std::string stem = "sample_" + std::to_string(s.id);
  std::ofstream img(dir / (stem + ".image.bin"), std::ios::binary);
  img.write(reinterpret_cast<const char*>(s.image.data.data()),
            static_cast<std::streamsize>(s.image.data.size() * sizeof(double)));
  std::ofstream msk(dir / (stem + ".mask.bin"), std::ios::binary);
  msk.write(reinterpret_cast<const char*>(s.mask.data.data()),
            static_cast<std::streamsize>(s.mask.data.size()));
  if (!img || !msk) {
    throw IoError("export: failed writing sample files under " + dir.string());
  }
}

}  // namespace detail

// Dumps a federation as flat binary grids (row-major float64 images, byte
// masks) plus a plain-text manifest: one "id,site,split,rows,cols" record
// per sample. Test samples carry site -1.
inline void export_federation(const Federation& fed,
                              const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("export: cannot create directory " + dir.string());
  std::ofstream manifest(dir / "manifest.txt");
  if (!manifest) {
    throw IoError("export: cannot open manifest under " + dir.string());
  }
  manifest << "id,site,split,rows,cols\n";
  auto record = [&](const SyntheticSample& s, int site, const char* split) {
    manifest << s.id << ',' << site << ',' << split << ',' << s.image.rows
             << ',' << s.image.cols << '\n';
    detail::write_sample_files(dir, s);
  };
  for (const ClientSite& site : fed.sites) {
    for (const SyntheticSample& s : site.train) record(s, site.site_id, "train");
    for (const SyntheticSample& s : site.val) record(s, site.site_id, "val");
  }
  for (const SyntheticSample& s : fed.test) record(s, -1, "test");
  manifest.flush();
  if (!manifest) throw IoError("export: manifest write failed");
}

}  // namespace adpfl
