// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string_view>
#include <vector>

#include "pairdiff/ops.hpp"
#include "pairdiff/tensor.hpp"
#include "pairdiff/volume.hpp"

namespace pairdiff {

/// Inference-time conditioning channel with values in [0,1].
using GuidanceMap = Image;

/// Dense displacement field from frame a to frame b, in pixels.
struct FlowField {
  int height = 0;
  int width = 0;
  std::vector<float> u;  // x displacement
  std::vector<float> v;  // y displacement
};

/// Unit-norm (or all-zero, for empty text) report embedding.
struct TextEmbedding {
  std::vector<float> vec;
};

/// label / (n_classes − 1), so background maps to 0 and the last class to 1.
Image normalize_mask(const AnatomicalMask& mask);

/// Separable Gaussian blur, kernel truncated at 3σ, reflected borders.
/// sigma = 0 returns the input unchanged.
Image gaussian_blur(const Image& img, double sigma);

/// Min-max normalization to [0,1]; a constant image maps to all zeros.
Image minmax_normalize(const Image& img);

/// Blends the normalized mask (foreground) with a transformed copy of the
/// frame (background):
///   x̂ = minmax(blur(frame^γ)),  G = mask where label > 0, x̂ elsewhere.
/// Output is clamped to [0,1].
GuidanceMap guidance_map(const Image& frame, const AnatomicalMask& mask, double gamma,
                         double blur_sigma);

/// Frames are in [0,1]; intensities are rescaled to the 8-bit range before
/// derivatives are taken, so `alpha` carries its conventional magnitude.
inline constexpr double kFlowIntensityScale = 255.0;

/// Horn–Schunck optical flow from `a` to `b`, solved by Gauss–Seidel sweeps in
/// raster order. Each pixel update is the exact minimizer of the energy below
/// with its neighbours held fixed, so the energy never increases.
FlowField horn_schunck_flow(const Image& a, const Image& b, double alpha, int iters);

/// Σ (Ix·u + Iy·v + It)² + α² Σ_{4-neighbour edges} (Δu² + Δv²)
double horn_schunck_energy(const Image& a, const Image& b, const FlowField& flow, double alpha);

/// Signed feature hashing of lowercase alphanumeric tokens, L2-normalized.
TextEmbedding text_embed(std::string_view report, int d_text);

/// Two-layer text adapter: v' = silu(W2·silu(W1·v + b1) + b2).
template <typename T>
struct TextAdapterWeights {
  BasicTensor<T> w1;  // d_text × d_hidden
  BasicTensor<T> b1;  // d_hidden
  BasicTensor<T> w2;  // d_hidden × d_model
  BasicTensor<T> b2;  // d_model
};

/// Flow adapter: 3×3 conv (2 → c_f), silu, 3×3 stride-2 conv (c_f → c_f).
template <typename T>
struct FlowAdapterWeights {
  BasicTensor<T> k1;
  BasicTensor<T> b1;
  BasicTensor<T> k2;
  BasicTensor<T> b2;
};

/// `text` is N×d_text; returns N×d_model.
template <typename T>
BasicTensor<T> adapt_text(const BasicTensor<T>& text, const TextAdapterWeights<T>& w) {
  auto hidden = ops::silu(ops::linear(text, w.w1, w.b1));
  return ops::silu(ops::linear(hidden, w.w2, w.b2));
}

/// `flow` is N×2×h×w; returns N×c_f×(h/2)×(w/2).
template <typename T>
BasicTensor<T> adapt_flow(const BasicTensor<T>& flow, const FlowAdapterWeights<T>& w) {
  auto hidden = ops::silu(ops::conv2d(flow, w.k1, w.b1, 1, 1));
  return ops::conv2d(hidden, w.k2, w.b2, 2, 1);
}

/// Stacks flow fields into an N×2×h×w tensor (u channel, then v).
Tensor flow_batch(const std::vector<const FlowField*>& flows);

/// Stacks embeddings into an N×d_text tensor.
Tensor text_batch(const std::vector<const TextEmbedding*>& texts);

}  // namespace pairdiff
