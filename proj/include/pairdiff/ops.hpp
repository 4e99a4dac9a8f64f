// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "pairdiff/tensor.hpp"

// The op set the denoiser needs. Every op records a backward rule on the active
// tape when at least one input requires a gradient.
//
// Broadcasting is limited to the patterns the network uses:
//   add/mul/mse        identical shapes only
//   add_channelwise    N×C×H×W + N×C      (per-sample, per-channel offset)
//   linear             N×F · F×G + G      (bias repeated over rows)
//   conv2d bias        O                  (repeated over batch and space)
//   group_norm affine  C                  (repeated over batch and space)
// Anything else raises DimensionError.

namespace pairdiff::ops {

/// 2-D cross-correlation over NCHW input with an O×C×K×K kernel. `bias` may be
/// undefined. Output spatial size is floor((H + 2·pad − K)/stride) + 1.
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& kernel,
                      const BasicTensor<T>& bias, int stride, int pad);

/// Nearest-neighbour 2× upsampling of an NCHW tensor.
template <typename T>
BasicTensor<T> upsample_nearest2x(const BasicTensor<T>& input);

/// input (N×F) · weight (F×G) + bias (G).
template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias);

template <typename T>
BasicTensor<T> group_norm(const BasicTensor<T>& input, int groups, const BasicTensor<T>& gamma,
                          const BasicTensor<T>& beta, double eps);

/// x · sigmoid(x)
template <typename T>
BasicTensor<T> silu(const BasicTensor<T>& input);

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, double factor);

template <typename T>
BasicTensor<T> add_channelwise(const BasicTensor<T>& x, const BasicTensor<T>& per_channel);

/// Concatenates two NCHW tensors along C.
template <typename T>
BasicTensor<T> concat_channels(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// Channels [begin, begin + count) of an NCHW tensor.
template <typename T>
BasicTensor<T> slice_channels(const BasicTensor<T>& x, std::int64_t begin, std::int64_t count);

/// Multiplies sample s (axis 0) by factors[s].
template <typename T>
BasicTensor<T> scale_samples(const BasicTensor<T>& x, const std::vector<double>& factors);

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x);

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& x);

/// mean((a − b)²)
template <typename T>
BasicTensor<T> mse(const BasicTensor<T>& a, const BasicTensor<T>& b);

}  // namespace pairdiff::ops
