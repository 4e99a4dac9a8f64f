// SPDX-License-Identifier: Apache-2.0
#include "pairdiff/pairing.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

#include "pairdiff/error.hpp"

namespace pairdiff {

std::vector<FramePairIndex> enumerate_pairs(int depth, const std::vector<int>& skips) {
  if (depth < 2) throw ContractError("enumerate_pairs: depth must be >= 2");
  if (skips.empty()) throw ContractError("enumerate_pairs: empty skip set");
  const std::set<int> unique(skips.begin(), skips.end());
  if (*unique.begin() < 1) throw ContractError("enumerate_pairs: skips must be >= 1");
  std::vector<FramePairIndex> out;
  for (int k : unique) {
    for (int i = 0; i + k <= depth - 1; i += k) out.push_back({i, i + k, k});
  }
  return out;
}

double relative_position(int i, int f0, int fn) {
  if (fn <= f0) throw ContractError("relative_position: need f0 < fN");
  if (i < f0 || i > fn) {
    throw ContractError("relative_position: frame " + std::to_string(i) + " outside [" +
                        std::to_string(f0) + ", " + std::to_string(fn) + "]");
  }
  return static_cast<double>(i - f0) / static_cast<double>(fn - f0);
}

std::vector<double> positional_encoding(double r, int d, double lambda) {
  if (d <= 0 || d % 2 != 0) throw ConfigError("positional_encoding: d must be positive and even");
  if (!(lambda > 0.0)) throw ConfigError("positional_encoding: lambda must be > 0");
  std::vector<double> e(static_cast<std::size_t>(d));
  for (int k = 0; k < d / 2; ++k) {
    const double denom = std::pow(10000.0, lambda * 2.0 * k / d);
    e[2 * k] = std::sin(r / denom);
    e[2 * k + 1] = std::cos(r / denom);
  }
  return e;
}

std::vector<float> pair_position(int i, int j, int f0, int fn, int d_pos, double lambda) {
  const auto ei = positional_encoding(relative_position(i, f0, fn), d_pos, lambda);
  const auto ej = positional_encoding(relative_position(j, f0, fn), d_pos, lambda);
  std::vector<float> out;
  out.reserve(ei.size() + ej.size());
  for (double v : ei) out.push_back(static_cast<float>(v));
  for (double v : ej) out.push_back(static_cast<float>(v));
  return out;
}

PairSample pack_pair(const Volume& vol, const MaskVolume& masks, const FramePairIndex& idx,
                     std::string_view report, const PackOptions& opts) {
  if (vol.height != masks.height || vol.width != masks.width || vol.depth != masks.depth) {
    throw DimensionError("pack_pair: volume and mask dims differ");
  }
  if (idx.i < 0 || idx.j >= vol.depth || idx.i >= idx.j) {
    throw ContractError("pack_pair: pair (" + std::to_string(idx.i) + ", " + std::to_string(idx.j) +
                        ") invalid for depth " + std::to_string(vol.depth));
  }
  const Image a = vol.slice(idx.i), b = vol.slice(idx.j);
  const Image ma = normalize_mask(masks.slice(idx.i)), mb = normalize_mask(masks.slice(idx.j));
  const Shape shape{2, vol.height, vol.width};

  PairSample s;
  s.index = idx;
  std::vector<float> frames(a.pixels);
  frames.insert(frames.end(), b.pixels.begin(), b.pixels.end());
  s.frames = Tensor(shape, std::move(frames));
  std::vector<float> cond(ma.pixels);
  cond.insert(cond.end(), mb.pixels.begin(), mb.pixels.end());
  s.cond_maps = Tensor(shape, std::move(cond));
  s.flow = horn_schunck_flow(a, b, opts.flow_alpha, opts.flow_iters);
  s.text = text_embed(report, opts.d_text);
  s.pos = pair_position(idx.i, idx.j, 0, vol.depth - 1, opts.d_pos, opts.lambda);
  return s;
}

}  // namespace pairdiff
