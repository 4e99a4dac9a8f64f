// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <span>
#include <vector>

#include "pairdiff/tensor.hpp"

namespace pairdiff {

/// Variance schedule over timesteps 1..T. Query methods take the 1-based
/// timestep; alpha_bar(0) is defined as 1 so that t = 0 means "clean data".
class NoiseSchedule {
 public:
  NoiseSchedule() = default;
  explicit NoiseSchedule(std::vector<double> betas);

  int steps() const { return static_cast<int>(betas_.size()); }
  double beta(int t) const;
  double alpha(int t) const;
  double alpha_bar(int t) const;

  std::span<const double> betas() const { return betas_; }
  std::span<const double> alpha_bars() const { return alpha_bars_; }

 private:
  void check_t(int t, int lo) const;
  std::vector<double> betas_;
  std::vector<double> alpha_bars_;  // alpha_bars_[t-1] = prod_{s<=t} (1 - beta_s)
};

/// β linearly interpolated from beta_start (t = 1) to beta_end (t = T).
NoiseSchedule make_linear_schedule(int steps, double beta_start, double beta_end);

/// √ᾱ_t·x0 + √(1−ᾱ_t)·eps. Differentiable in x0 and eps.
template <typename T>
BasicTensor<T> forward_noise(const BasicTensor<T>& x0, int t, const BasicTensor<T>& eps,
                             const NoiseSchedule& sched);

/// Per-sample version: axis 0 of x0 and eps indexes `t`.
template <typename T>
BasicTensor<T> forward_noise_batch(const BasicTensor<T>& x0, std::span<const int> t,
                                   const BasicTensor<T>& eps, const NoiseSchedule& sched);

/// One DDIM update from t to t_prev < t:
///   x0_pred = (x_t − √(1−ᾱ_t)·eps_pred)/√ᾱ_t
///   x_prev  = √ᾱ_prev·x0_pred + √(1−ᾱ_prev−σ²)·eps_pred + σ·z
/// `z` is only read when sigma > 0.
Tensor ddim_step(const Tensor& x_t, int t, int t_prev, const Tensor& eps_pred,
                 const NoiseSchedule& sched, double sigma = 0.0, const Tensor* z = nullptr);

/// `count` timesteps spaced uniformly over [1, T], in descending order.
std::vector<int> ddim_timesteps(int steps, int count);

/// ε-prediction network as seen by the loss: maps the packed input
/// (N × (frames + 2) × h × w) and per-sample timesteps to an ε estimate with
/// the frame-channel count.
template <typename T>
using EpsFn = std::function<BasicTensor<T>(const BasicTensor<T>& packed, std::span<const int> t)>;

/// Mask-conditioned denoising loss: mse(eps, ε_θ(concat(noised x0, cond), t)).
/// `x0` is N×2c×h×w and `cond` N×2×h×w; a missing or wrongly shaped `cond` is a
/// contract violation.
template <typename T>
BasicTensor<T> ddpm_loss(const EpsFn<T>& predict, const BasicTensor<T>& x0,
                         const BasicTensor<T>& cond, std::span<const int> t,
                         const BasicTensor<T>& eps, const NoiseSchedule& sched);

}  // namespace pairdiff
