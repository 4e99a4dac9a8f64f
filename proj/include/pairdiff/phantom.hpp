// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "pairdiff/volume.hpp"

namespace pairdiff {

/// Procedural thorax-like volumes: a body ellipse (class 0), two tapering
/// lungs (class 1) and one to three organ ellipsoids (class 2, or classes
/// 2..7 when n_classes = 8). With n_classes = 2 lungs and organs share class 1.
struct PhantomSpec {
  int height = 32;
  int width = 32;
  int depth_min = 16;
  int depth_max = 48;
  int n_classes = 3;
  std::uint64_t seed = 0;
  double noise_level = 0.02;  // σ of additive Gaussian noise, clipped at ±2σ

  void validate() const;
};

/// Noiseless intensities of each structure.
inline constexpr float kBodyIntensity = 0.40f;
inline constexpr float kLungIntensity = 0.15f;
inline constexpr float kOrganIntensity = 0.72f;
/// Organ intensity for class c when n_classes = 8 (c in 2..7).
float organ_intensity(int n_classes, int cls);

struct Phantom {
  Volume volume;
  MaskVolume masks;
  std::string report;
};

Phantom generate_phantom(const PhantomSpec& spec, int index);

/// Half-open intensity interval [lo, hi) mapped to `label`.
struct IntensityBand {
  float lo = 0.0f;
  float hi = 0.0f;
  std::uint8_t label = 0;
};

/// Bands matching the generator: lungs [0.08, 0.3), organs >= 0.6.
std::vector<IntensityBand> default_bands(int n_classes);

/// Labels each voxel by band (unmatched voxels become 0), then relabels
/// isolated specks: a voxel whose band holds at most 4 of its 3×3×3
/// neighbourhood takes the most frequent label there. Ties keep the centre
/// label, then favour the smallest.
/// Clean phantom volumes come back unchanged.
/// Overlapping or unordered bands are a ConfigError.
MaskVolume resegment(const Volume& vol, const std::vector<IntensityBand>& bands, int n_classes);

/// Seeded partition of ids 0..count-1 into (train, test), each sorted.
std::pair<std::vector<int>, std::vector<int>> split(int count, double train_frac, std::uint64_t seed);

}  // namespace pairdiff
