// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pairdiff/pairing.hpp"
#include "pairdiff/volume.hpp"

namespace pairdiff {

/// Binary H×W×D mask, same layout as Volume.
struct BinaryVolume {
  int height = 0;
  int width = 0;
  int depth = 0;
  std::vector<std::uint8_t> voxels;  // 0 or 1

  std::size_t index(int z, int y, int x) const {
    return (static_cast<std::size_t>(z) * height + y) * width + x;
  }
  std::size_t count() const;
};

BinaryVolume class_mask(const MaskVolume& masks, int label);

/// 2|A∩B| / (|A| + |B|); 1.0 when both are empty.
double dice(const BinaryVolume& a, const BinaryVolume& b);
/// |A∩B| / |A∪B|; 1.0 when both are empty.
double jaccard(const BinaryVolume& a, const BinaryVolume& b);

/// Surface voxels: foreground with a 6-neighbour that is background or
/// outside the grid.
BinaryVolume surface(const BinaryVolume& m);

/// Symmetric 95th-percentile surface distance in mm. Percentiles interpolate
/// linearly between order statistics. Spacing is (x, y, z).
/// An empty mask is a DefinedValueError.
double hd95(const BinaryVolume& a, const BinaryVolume& b, const Spacing& spacing);

/// Linear-interpolation percentile (q in [0, 100]) of a non-empty sample.
double percentile(std::vector<double> values, double q);

/// Mean over pairs of Σ (frame_i − frame_j)².
double t_coherence(const std::vector<Image>& frames, const std::vector<FramePairIndex>& pairs);
/// Mean over consecutive frames of the mean absolute difference.
double flicker(const std::vector<Image>& frames);

std::vector<Image> volume_frames(const Volume& vol);

/// Per-slice handcrafted features: mean, variance, 8-bin histogram over
/// [0, 1], mean gradient magnitude, fraction above 0.3.
inline constexpr int kFeatureCount = 12;
std::vector<double> slice_features(const Image& slice);

struct FeatureSummary {
  std::vector<double> mu;     // k
  std::vector<double> sigma;  // k×k row-major, unbiased
  int k() const { return static_cast<int>(mu.size()); }
};

FeatureSummary feature_summary(const Volume& vol);
/// Summary over the slices of several volumes pooled together.
FeatureSummary feature_summary(const std::vector<const Volume*>& vols);
FeatureSummary summarize_features(const std::vector<std::vector<double>>& rows);

/// ||μp − μq||² + Tr(Σp + Σq − 2(Σp Σq)^{1/2}), clamped at 0. The square-root
/// trace is taken from the eigenvalues of √Σp Σq √Σp with negatives clamped.
double frechet_distance(const FeatureSummary& p, const FeatureSummary& q);

struct ClassScores {
  int label = 0;
  double dice = 0.0;
  double jaccard = 0.0;
  double hd95 = 0.0;
};

/// Fidelity of a generated mask volume against a reference one, over the
/// foreground classes. When exactly one side of a class is empty its hd95 is
/// the grid diagonal in mm.
struct FidelityReport {
  std::vector<ClassScores> classes;
  double macro_dice = 0.0;
  double macro_jaccard = 0.0;
  double macro_hd95 = 0.0;
};

FidelityReport fidelity(const MaskVolume& generated, const MaskVolume& reference);

}  // namespace pairdiff
