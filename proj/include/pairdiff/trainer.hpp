// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "pairdiff/denoiser.hpp"
#include "pairdiff/pairing.hpp"
#include "pairdiff/phantom.hpp"
#include "pairdiff/schedule.hpp"

namespace pairdiff {

struct TrainConfig {
  int epochs = 50;
  int batch_size = 16;
  double lr_init = 2e-4;
  double lr_min = 1e-6;
  int warmup_steps = 200;
  double weight_decay = 0.01;
  std::vector<int> skip_set{1, 2, 4};
  double dropout_p = 0.1;  // flow and text, independently
  std::uint64_t seed = 0;

  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip = 1.0;  // global L2 norm; 0 disables

  // Probability that a mask channel is replaced by the guidance map of its own
  // ground-truth frame, so inference-time guidance maps are in-distribution.
  double guidance_p = 0.5;
  double guidance_gamma = 1.5;
  double guidance_blur = 1.5;

  // false trains the unconditional ablation: mask channels and text zeroed.
  bool anatomical_guidance = true;
  // false trains on (i, i) pairs only, i.e. without paired-frame modelling.
  bool paired_frames = true;

  int checkpoint_every = 0;  // steps; 0 disables periodic checkpoints

  void validate() const;
};

struct OptimizerState {
  std::vector<std::vector<float>> m;
  std::vector<std::vector<float>> v;
  std::int64_t step = 0;
};

struct AdamWParams {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

OptimizerState make_optimizer_state(const DenoiserWeights& weights);

/// Decoupled weight decay, then the bias-corrected Adam update. Gradients are
/// read from the weights; a tensor without a gradient counts as zero.
void adamw_step(DenoiserWeights& weights, OptimizerState& state, double lr, const AdamWParams& p);

/// Scales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before scaling.
double clip_grad_norm(DenoiserWeights& weights, double max_norm);

/// Linear warmup 0 → lr_init over warmup_steps, then cosine decay to lr_min at
/// total_steps.
double lr_at(std::int64_t step, const TrainConfig& cfg, std::int64_t total_steps);

struct LossRecord {
  std::int64_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
};

struct TrainState {
  DenoiserWeights weights;
  OptimizerState optimizer;
  std::vector<LossRecord> history;
};

struct TrainHooks {
  std::function<void(const LossRecord&)> on_step;
  std::function<void(const TrainState&)> on_checkpoint;
};

/// Pairs of every volume, in dataset order, tagged with their volume index.
struct DatasetPair {
  int volume = 0;
  FramePairIndex index;
};
std::vector<DatasetPair> dataset_pairs(const std::vector<Phantom>& data, const TrainConfig& cfg);

/// Visiting order of the pairs in one epoch; a permutation of 0..n−1.
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::int64_t epoch);

std::int64_t steps_per_epoch(std::size_t n_pairs, int batch_size);

/// Runs the remaining steps of cfg.epochs. `resume` continues from its
/// optimizer step; without it the weights are initialized from cfg.seed.
TrainState train(const std::vector<Phantom>& data, const TrainConfig& cfg, const DenoiserConfig& dcfg,
                 const NoiseSchedule& sched, const TrainHooks& hooks = {}, const TrainState* resume = nullptr);

/// Weights plus optimizer buffers under "opt.m/", "opt.v/" and "opt.step".
std::vector<NamedTensor> state_to_named(const TrainState& state);
/// Inverse of state_to_named; a weights-only checkpoint yields a fresh optimizer.
TrainState state_from_named(const std::vector<NamedTensor>& tensors);

void write_loss_csv(const std::string& path, const std::vector<LossRecord>& history);
std::vector<LossRecord> read_loss_csv(const std::string& path);

}  // namespace pairdiff
