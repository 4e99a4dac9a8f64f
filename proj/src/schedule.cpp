// SPDX-License-Identifier: Apache-2.0
#include "pairdiff/schedule.hpp"

#include <cmath>
#include <string>

#include "pairdiff/error.hpp"
#include "pairdiff/ops.hpp"

namespace pairdiff {

NoiseSchedule::NoiseSchedule(std::vector<double> betas) : betas_(std::move(betas)) {
  double prod = 1.0;
  alpha_bars_.reserve(betas_.size());
  for (double b : betas_) {
    if (!(b > 0.0 && b < 1.0)) throw ConfigError("noise schedule: beta must lie in (0, 1)");
    prod *= 1.0 - b;
    alpha_bars_.push_back(prod);
  }
}

void NoiseSchedule::check_t(int t, int lo) const {
  if (t < lo || t > steps()) {
    throw ContractError("timestep " + std::to_string(t) + " outside [" + std::to_string(lo) +
                        ", " + std::to_string(steps()) + "]");
  }
}

double NoiseSchedule::beta(int t) const {
  check_t(t, 1);
  return betas_[t - 1];
}

double NoiseSchedule::alpha(int t) const { return 1.0 - beta(t); }

double NoiseSchedule::alpha_bar(int t) const {
  check_t(t, 0);
  return t == 0 ? 1.0 : alpha_bars_[t - 1];
}

NoiseSchedule make_linear_schedule(int steps, double beta_start, double beta_end) {
  if (steps < 2) throw ConfigError("schedule.T must be >= 2");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw ConfigError("schedule betas must satisfy 0 < beta_start <= beta_end < 1");
  }
  std::vector<double> betas(static_cast<std::size_t>(steps));
  for (int i = 0; i < steps; ++i) {
    const double f = static_cast<double>(i) / (steps - 1);
    betas[i] = beta_start + f * (beta_end - beta_start);
  }
  betas.back() = beta_end;
  return NoiseSchedule(std::move(betas));
}

template <typename T>
BasicTensor<T> forward_noise(const BasicTensor<T>& x0, int t, const BasicTensor<T>& eps,
                             const NoiseSchedule& sched) {
  if (x0.shape() != eps.shape()) {
    throw DimensionError("forward_noise: eps " + shape_str(eps.shape()) + " vs x0 " +
                         shape_str(x0.shape()));
  }
  const double ab = sched.alpha_bar(t);
  if (t == 0) return x0;
  return ops::add(ops::scale(x0, std::sqrt(ab)), ops::scale(eps, std::sqrt(1.0 - ab)));
}

template <typename T>
BasicTensor<T> forward_noise_batch(const BasicTensor<T>& x0, std::span<const int> t,
                                   const BasicTensor<T>& eps, const NoiseSchedule& sched) {
  if (x0.shape() != eps.shape()) {
    throw DimensionError("forward_noise: eps " + shape_str(eps.shape()) + " vs x0 " +
                         shape_str(x0.shape()));
  }
  if (x0.rank() < 1 || static_cast<std::int64_t>(t.size()) != x0.dim(0)) {
    throw DimensionError("forward_noise: " + std::to_string(t.size()) +
                         " timesteps for batch axis 0 of " + shape_str(x0.shape()));
  }
  const auto per = x0.numel() / x0.dim(0);
  std::vector<T> a(static_cast<std::size_t>(x0.numel())), b(a.size());
  for (std::size_t s = 0; s < t.size(); ++s) {
    const double ab = sched.alpha_bar(t[s]);
    std::fill_n(a.begin() + static_cast<std::ptrdiff_t>(s * per), per, static_cast<T>(std::sqrt(ab)));
    std::fill_n(b.begin() + static_cast<std::ptrdiff_t>(s * per), per,
                static_cast<T>(std::sqrt(1.0 - ab)));
  }
  BasicTensor<T> ca(x0.shape(), std::move(a)), cb(x0.shape(), std::move(b));
  return ops::add(ops::mul(x0, ca), ops::mul(eps, cb));
}

Tensor ddim_step(const Tensor& x_t, int t, int t_prev, const Tensor& eps_pred,
                 const NoiseSchedule& sched, double sigma, const Tensor* z) {
  if (x_t.shape() != eps_pred.shape()) {
    throw DimensionError("ddim_step: eps_pred " + shape_str(eps_pred.shape()) + " vs x_t " +
                         shape_str(x_t.shape()));
  }
  if (!(t_prev < t) || t_prev < 0) {
    throw ContractError("ddim_step: need 0 <= t_prev < t, got t=" + std::to_string(t) +
                        " t_prev=" + std::to_string(t_prev));
  }
  if (sigma < 0.0) throw ContractError("ddim_step: sigma must be >= 0");
  const double ab = sched.alpha_bar(t);
  const double ab_prev = sched.alpha_bar(t_prev);
  const double dir2 = 1.0 - ab_prev - sigma * sigma;
  if (dir2 < 0.0) {
    throw ContractError("ddim_step: 1 - alpha_bar(t_prev) - sigma^2 is negative");
  }
  if (sigma > 0.0 && (z == nullptr || z->shape() != x_t.shape())) {
    throw ContractError("ddim_step: sigma > 0 needs a noise tensor shaped like x_t");
  }
  const double sa = std::sqrt(ab), sn = std::sqrt(1.0 - ab);
  const double sa_prev = std::sqrt(ab_prev), dir = std::sqrt(dir2);
  std::vector<float> out(x_t.data().size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double e = eps_pred.data()[i];
    const double x0 = (x_t.data()[i] - sn * e) / sa;
    double v = sa_prev * x0 + dir * e;
    if (sigma > 0.0) v += sigma * z->data()[i];
    out[i] = static_cast<float>(v);
  }
  return Tensor(x_t.shape(), std::move(out));
}

std::vector<int> ddim_timesteps(int steps, int count) {
  if (count < 1 || count > steps) {
    throw ConfigError("ddim step count must lie in [1, T]");
  }
  std::vector<int> ts;
  if (count == 1) return {steps};
  for (int i = count - 1; i >= 0; --i) {
    ts.push_back(1 + static_cast<int>(std::lround(static_cast<double>(i) * (steps - 1) / (count - 1))));
  }
  return ts;
}

template <typename T>
BasicTensor<T> ddpm_loss(const EpsFn<T>& predict, const BasicTensor<T>& x0,
                         const BasicTensor<T>& cond, std::span<const int> t,
                         const BasicTensor<T>& eps, const NoiseSchedule& sched) {
  if (!cond.defined() || cond.rank() != 4 || x0.rank() != 4 || cond.dim(1) != 2 ||
      cond.dim(0) != x0.dim(0) || cond.dim(2) != x0.dim(2) || cond.dim(3) != x0.dim(3)) {
    throw ContractError("ddpm_loss: conditioning must be N x 2 x h x w matching x0 " +
                        shape_str(x0.shape()) + ", got " + shape_str(cond.shape()));
  }
  auto noised = forward_noise_batch(x0, t, eps, sched);
  auto packed = ops::concat_channels(noised, cond);
  auto pred = predict(packed, t);
  return ops::mse(pred, eps);
}

template BasicTensor<float> forward_noise(const BasicTensor<float>&, int, const BasicTensor<float>&,
                                          const NoiseSchedule&);
template BasicTensor<double> forward_noise(const BasicTensor<double>&, int,
                                           const BasicTensor<double>&, const NoiseSchedule&);
template BasicTensor<float> forward_noise_batch(const BasicTensor<float>&, std::span<const int>,
                                                const BasicTensor<float>&, const NoiseSchedule&);
template BasicTensor<double> forward_noise_batch(const BasicTensor<double>&, std::span<const int>,
                                                 const BasicTensor<double>&, const NoiseSchedule&);
template BasicTensor<float> ddpm_loss(const EpsFn<float>&, const BasicTensor<float>&,
                                      const BasicTensor<float>&, std::span<const int>,
                                      const BasicTensor<float>&, const NoiseSchedule&);
template BasicTensor<double> ddpm_loss(const EpsFn<double>&, const BasicTensor<double>&,
                                       const BasicTensor<double>&, std::span<const int>,
                                       const BasicTensor<double>&, const NoiseSchedule&);

}  // namespace pairdiff
