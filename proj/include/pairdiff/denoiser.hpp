// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pairdiff/checkpoint.hpp"
#include "pairdiff/conditioning.hpp"
#include "pairdiff/schedule.hpp"
#include "pairdiff/tensor.hpp"

namespace pairdiff {

/// Shape of the conditional ε-network: a small U-Net whose level ℓ runs at
/// (h/2^(ℓ+1)) × (w/2^(ℓ+1)) with base_width·2^ℓ channels, behind a full
/// resolution stem.
struct DenoiserConfig {
  int channels = 1;       // image channels per frame (c)
  int base_width = 16;
  int depth = 2;          // U-Net levels, 2 or 3
  int d_model = 32;       // bottleneck width; must equal base_width·2^(depth−1)
  int d_pos = 64;
  int c_f = 16;           // flow feature channels; must equal base_width
  int n_classes = 3;
  int d_text = 64;
  int text_hidden = 64;
  int time_dim = 32;
  int embed_hidden = 64;
  int groups = 4;

  void validate() const;
  int level_width(int level) const { return base_width << level; }
  int in_channels() const { return 2 * channels + 2; }
  int out_channels() const { return 2 * channels; }
};

/// Named, ordered parameter collection. Names are unique.
template <typename T>
class BasicParameterSet {
 public:
  void add(std::string name, BasicTensor<T> tensor);
  bool contains(std::string_view name) const { return index_.find(name) != index_.end(); }
  const BasicTensor<T>& operator[](std::string_view name) const;
  BasicTensor<T>& at(std::string_view name);

  std::size_t size() const { return tensors_.size(); }
  bool empty() const { return tensors_.empty(); }
  const std::vector<std::string>& names() const { return names_; }
  std::vector<BasicTensor<T>>& tensors() { return tensors_; }
  const std::vector<BasicTensor<T>>& tensors() const { return tensors_; }

  void set_requires_grad(bool value);
  void zero_grad();

  /// Deep copy in another precision.
  template <typename U>
  BasicParameterSet<U> cast() const {
    BasicParameterSet<U> out;
    for (std::size_t i = 0; i < size(); ++i) out.add(names_[i], tensors_[i].template cast<U>());
    return out;
  }
  BasicParameterSet clone() const { return cast<T>(); }

 private:
  std::vector<std::string> names_;
  std::vector<BasicTensor<T>> tensors_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

using DenoiserWeights = BasicParameterSet<float>;

/// Every parameter of the network with its shape, in creation order.
std::vector<std::pair<std::string, Shape>> parameter_shapes(const DenoiserConfig& cfg);

/// Fan-in scaled uniform init, U(−1/√fan_in, 1/√fan_in); norm gains 1, shifts 0.
DenoiserWeights init_weights(const DenoiserConfig& cfg, std::uint64_t seed);

template <typename T>
std::int64_t count_params(const BasicParameterSet<T>& weights) {
  std::int64_t n = 0;
  for (const auto& t : weights.tensors()) n += t.numel();
  return n;
}

std::vector<NamedTensor> to_named(const DenoiserWeights& weights);
DenoiserWeights from_named(const std::vector<NamedTensor>& tensors);

/// Checks names and shapes against `cfg`; throws ConfigError on mismatch.
void check_weights(const DenoiserConfig& cfg, const DenoiserWeights& weights);

/// Conditioning other than the mask channels carried inside `packed`.
template <typename T>
struct DenoiserExtras {
  BasicTensor<T> pos;   // N × 2·d_pos
  BasicTensor<T> flow;  // N × 2 × h × w, undefined when absent
  BasicTensor<T> text;  // N × d_text, undefined when absent
  /// Per-sample keep flags for conditioning dropout; empty keeps everything.
  std::vector<std::uint8_t> flow_keep;
  std::vector<std::uint8_t> text_keep;
};

/// ε prediction for both frames: (N × (2c+2) × h × w) → (N × 2c × h × w).
/// Packed channel order is [frame_i, frame_j, cond_i, cond_j].
template <typename T>
BasicTensor<T> denoiser_forward(const DenoiserConfig& cfg, const BasicParameterSet<T>& weights,
                                const BasicTensor<T>& packed, std::span<const int> t,
                                const DenoiserExtras<T>& extras, const NoiseSchedule& sched);

/// Inference-side view of an ε-network. Flow conditioning is never available
/// while sampling, so it is not part of this interface.
class NoisePredictor {
 public:
  virtual ~NoisePredictor() = default;
  /// `packed` is 1 × (2c+2) × h × w; `pos` and `text` are 1 × k rows.
  virtual Tensor predict(const Tensor& packed, int t, const Tensor& pos, const Tensor& text) const = 0;
  virtual int pos_dim() const = 0;   // d_pos per frame
  virtual int text_dim() const = 0;  // d_text
};

class Denoiser final : public NoisePredictor {
 public:
  Denoiser(DenoiserConfig cfg, DenoiserWeights weights, NoiseSchedule sched);

  Tensor predict(const Tensor& packed, int t, const Tensor& pos, const Tensor& text) const override;
  int pos_dim() const override { return cfg_.d_pos; }
  int text_dim() const override { return cfg_.d_text; }

  const DenoiserConfig& config() const { return cfg_; }
  const DenoiserWeights& weights() const { return weights_; }
  const NoiseSchedule& schedule() const { return sched_; }

 private:
  DenoiserConfig cfg_;
  DenoiserWeights weights_;
  NoiseSchedule sched_;
};

}  // namespace pairdiff
