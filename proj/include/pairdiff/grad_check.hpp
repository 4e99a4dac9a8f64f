// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <vector>

#include "pairdiff/error.hpp"
#include "pairdiff/tensor.hpp"

namespace pairdiff {

template <typename T>
using ScalarFn = std::function<BasicTensor<T>(const BasicTensor<T>&)>;

/// Compares the tape gradient of scalar-valued `f` at `x` with central
/// differences and returns the largest
///   |analytic − fd| / max(|analytic|, |fd|, 1e-8)
/// over the checked coordinates. `max_coords` > 0 checks a seeded random subset.
///
/// The difference quotient divides by the perturbation actually realised in T,
/// so representation error of x ± h does not leak into the estimate. Use
/// T = double when tight tolerances matter: in float the quotient carries
/// roughly ulp(f)/h of rounding noise.
template <typename T>
double grad_check(const ScalarFn<T>& f, const BasicTensor<T>& x, double h,
                  std::size_t max_coords = 0, std::uint64_t seed = 0) {
  if (!(h > 0.0 && h < 0.1)) throw ContractError("grad_check: h must lie in (0, 0.1)");

  auto leaf = x.clone(true);
  {
    Tape tape;
    TapeScope scope(tape);
    auto loss = f(leaf);
    backward(loss);
  }
  std::vector<T> analytic(static_cast<std::size_t>(x.numel()), T(0));
  if (leaf.has_grad()) std::copy(leaf.grad().begin(), leaf.grad().end(), analytic.begin());

  std::vector<std::size_t> coords(analytic.size());
  std::iota(coords.begin(), coords.end(), std::size_t{0});
  if (max_coords > 0 && max_coords < coords.size()) {
    std::mt19937_64 rng(seed);
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(max_coords);
  }

  NoGradScope no_grad;
  double worst = 0.0;
  for (const auto i : coords) {
    auto plus = x.clone();
    auto minus = x.clone();
    plus.mutable_data()[i] = static_cast<T>(x.data()[i] + h);
    minus.mutable_data()[i] = static_cast<T>(x.data()[i] - h);
    const double step = static_cast<double>(plus.data()[i]) - static_cast<double>(minus.data()[i]);
    const double fd =
        (static_cast<double>(f(plus).item()) - static_cast<double>(f(minus).item())) / step;
    const double a = analytic[i];
    const double denom = std::max({std::abs(a), std::abs(fd), 1e-8});
    worst = std::max(worst, std::abs(a - fd) / denom);
  }
  return worst;
}

}  // namespace pairdiff
