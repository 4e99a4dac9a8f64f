// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "pairdiff/config.hpp"
#include "pairdiff/metrics.hpp"
#include "pairdiff/phantom.hpp"
#include "pairdiff/trainer.hpp"

namespace pairdiff {

namespace fs = std::filesystem;

/// One line of a phantom directory's manifest.tsv.
struct ManifestEntry {
  int index = 0;
  std::string volume;  // file name relative to the data directory
  std::string masks;
  int depth = 0;
  std::string report;
};

struct DataSplit {
  std::vector<int> train;
  std::vector<int> test;
};

/// Run directory layout: config.cfg, checkpoints/, samples/, eval/, logs/.
struct RunDir {
  fs::path root;

  fs::path config() const { return root / "config.cfg"; }
  fs::path checkpoints() const { return root / "checkpoints"; }
  fs::path samples() const { return root / "samples"; }
  fs::path eval() const { return root / "eval"; }
  fs::path logs() const { return root / "logs"; }
  fs::path final_checkpoint() const { return checkpoints() / "final.ckpt"; }
  fs::path loss_csv() const { return logs() / "loss.csv"; }
};

/// Creates the subdirectories and writes the config snapshot.
RunDir prepare_run_dir(const fs::path& root, const RunConfig& cfg);

/// Writes `count` phantoms as phantom_NNNN.vol/.msk, manifest.tsv and split.txt.
void cmd_phantom(const RunConfig& cfg, const fs::path& out_dir, int count);

std::vector<ManifestEntry> read_manifest(const fs::path& data_dir);
DataSplit read_split(const fs::path& data_dir);

/// Loads the manifest entries with the given indices.
std::vector<Phantom> load_phantoms(const fs::path& data_dir, const std::vector<int>& indices);

/// Trains on the train split. With `resume` set, training continues from that
/// checkpoint and the loss history up to its step is kept.
TrainState cmd_train(const RunConfig& cfg, const fs::path& data_dir, const fs::path& run_dir,
                     const fs::path& resume = {});

/// Generates the first `length` slices of the mask file and writes a VOL1 file.
Volume cmd_sample(const RunConfig& cfg, const fs::path& checkpoint, const fs::path& masks_path,
                  std::string_view report, const fs::path& out_path, int length);

struct EvalSummary {
  FidelityReport fidelity;
  double flicker = 0.0;
  double t_coherence = 0.0;  // over k=1 pairs
  double frechet = 0.0;      // against the reference volume set
};

struct MetricRow {
  std::string metric;
  std::string cls;  // class label or "all"
  double value = 0.0;
};

std::vector<MetricRow> metric_rows(const EvalSummary& s);
void write_metrics_csv(const fs::path& path, const std::vector<MetricRow>& rows);
std::vector<MetricRow> read_metrics_csv(const fs::path& path);

/// Resegments and scores a generated volume in memory.
EvalSummary evaluate(const Volume& generated, const MaskVolume& reference_masks,
                     const std::vector<Volume>& reference_vols);

/// Resegments `generated` and scores it. Writes metrics.csv and summary.json to out_dir.
EvalSummary cmd_eval(const RunConfig& cfg, const fs::path& generated, const fs::path& reference_masks,
                     const std::vector<fs::path>& reference_vols, const fs::path& out_dir);

struct AblationRow {
  std::string variant;
  double macro_dice = 0.0;
  double macro_jaccard = 0.0;
  double macro_hd95 = 0.0;
  double flicker = 0.0;
  double t_coherence = 0.0;
};

/// Trains the full model and the variants without paired frames, without
/// anatomical guidance and with skip set {1}, then scores OFG and markovian
/// generation on the test split. Writes eval/ablation.csv.
std::vector<AblationRow> cmd_ablate(const RunConfig& cfg, const fs::path& data_dir, const fs::path& run_dir);

}  // namespace pairdiff
