// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "pairdiff/conditioning.hpp"
#include "pairdiff/denoiser.hpp"
#include "pairdiff/schedule.hpp"
#include "pairdiff/volume.hpp"

namespace pairdiff {

struct OFGConfig {
  int ddim_steps = 25;
  double gamma = 1.5;
  double blur_sigma = 1.5;
  std::uint64_t seed = 0;
  /// Independent mask-only pairs, each overwriting the frames it shares.
  bool markovian_baseline = false;
  /// Builds G(n+1) from the provisional x̃(n) instead of x̃(n+1).
  bool literal_guidance = false;
  /// false generates every frame on its own from (M(n), M(n)).
  bool paired_frames = true;
  /// false zeroes the mask channels and drops the report, for models trained
  /// without anatomical guidance.
  bool anatomical_guidance = true;
  /// Clamp the x0 estimate to the data range at every DDIM step.
  bool clip_x0 = true;
  double lambda = 1.0;  // positional-encoding frequency scale

  void validate() const;
};

struct FramePair {
  Image a;
  Image b;
};

/// Full σ = 0 DDIM chain for one pair. Noise is drawn from `noise_seed`; the
/// frames come back in [0,1]. `pos` is E(r_a) ‖ E(r_b); an empty `text` vector
/// drops the report conditioning.
FramePair sample_pair(const NoisePredictor& net, const Image& cond_a, const Image& cond_b,
                      const std::vector<float>& pos, const TextEmbedding& text, const NoiseSchedule& sched,
                      const OFGConfig& cfg, std::uint64_t noise_seed);

struct GenerationStats {
  int ddim_chains = 0;
};

/// Generates one frame per mask. Pair n (frames n, n+1) draws its noise from
/// derive_seed(cfg.seed, n) in every mode.
Volume generate_volume(const NoisePredictor& net, const std::vector<AnatomicalMask>& masks, std::string_view report,
                       const NoiseSchedule& sched, const OFGConfig& cfg, GenerationStats* stats = nullptr);

/// Depth-stacked volume with values clamped to [0,1].
Volume reassemble(const std::vector<Image>& frames, const Spacing& spacing);

std::vector<AnatomicalMask> mask_slices(const MaskVolume& masks, int count);

}  // namespace pairdiff
