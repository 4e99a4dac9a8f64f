// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <string_view>

#include "pairdiff/denoiser.hpp"
#include "pairdiff/ofg.hpp"
#include "pairdiff/phantom.hpp"
#include "pairdiff/schedule.hpp"
#include "pairdiff/trainer.hpp"

namespace pairdiff {

struct ScheduleConfig {
  int steps = 100;
  double beta_start = 1e-3;
  double beta_end = 0.2;

  void validate() const;
  NoiseSchedule make() const { return make_linear_schedule(steps, beta_start, beta_end); }
};

/// Every module's settings plus run-level fields. Text form is one
/// `section.key = value` per line; `#` starts a comment.
struct RunConfig {
  ScheduleConfig schedule;
  DenoiserConfig denoiser;
  TrainConfig trainer;
  OFGConfig ofg;
  PhantomSpec phantom;
  double train_frac = 0.8;  // phantom.train_frac
  std::uint64_t seed = 0;   // default for trainer.seed, ofg.seed, phantom.seed

  /// Per-module checks, then cross-module consistency. Messages name both
  /// fields of a conflicting pair.
  void validate() const;
};

/// Unknown keys, malformed values and duplicate keys are ConfigErrors that
/// carry `source` and the line number.
RunConfig parse_config(std::string_view text, const std::string& source = "config");
RunConfig load_config(const std::string& path);

/// Sets one key on an already parsed config.
void apply_setting(RunConfig& cfg, std::string_view key, std::string_view value);

/// Overrides the run seed and every per-module seed.
void set_seed(RunConfig& cfg, std::uint64_t seed);

/// Canonical text form; parse_config(format_config(c)) reproduces c.
std::string format_config(const RunConfig& cfg);

}  // namespace pairdiff
