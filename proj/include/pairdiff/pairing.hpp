// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string_view>
#include <vector>

#include "pairdiff/conditioning.hpp"
#include "pairdiff/tensor.hpp"
#include "pairdiff/volume.hpp"

namespace pairdiff {

/// Training pair (i, j = i + k) drawn with skip interval k.
struct FramePairIndex {
  int i = 0;
  int j = 0;
  int k = 1;

  friend bool operator==(const FramePairIndex&, const FramePairIndex&) = default;
};

/// All (i, i+k) with i mod k = 0 and i + k < depth, for k in `skips`,
/// sorted by (k, i). Duplicate skip values are ignored.
std::vector<FramePairIndex> enumerate_pairs(int depth, const std::vector<int>& skips);

/// (i − f0)/(fN − f0)
double relative_position(int i, int f0, int fn);

/// E[2k] = sin(r / 10000^(λ·2k/d)), E[2k+1] = cos(r / 10000^(λ·2k/d)).
std::vector<double> positional_encoding(double r, int d, double lambda);

/// E(r_i) ‖ E(r_j) as floats, positions normalized over [f0, fN].
std::vector<float> pair_position(int i, int j, int f0, int fn, int d_pos, double lambda);

struct PackOptions {
  int d_pos = 64;
  double lambda = 1.0;
  int d_text = 64;
  double flow_alpha = 10.0;
  int flow_iters = 100;
};

/// One training example. `frames` and `cond_maps` are 2×h×w (frame i, frame j).
struct PairSample {
  FramePairIndex index;
  Tensor frames;
  Tensor cond_maps;
  FlowField flow;
  TextEmbedding text;
  std::vector<float> pos;
};

PairSample pack_pair(const Volume& vol, const MaskVolume& masks, const FramePairIndex& idx,
                     std::string_view report, const PackOptions& opts);

}  // namespace pairdiff
