// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <iterator>

#include <json.hpp>

#include "pairdiff/error.hpp"
#include "pairdiff/pipeline.hpp"
#include "pairdiff/volume_io.hpp"

using namespace pairdiff;

namespace {

RunConfig tiny_run() {
  RunConfig c;
  c.denoiser.base_width = 8;
  c.denoiser.d_model = 16;
  c.denoiser.c_f = 8;
  c.denoiser.groups = 2;
  c.denoiser.d_pos = 4;
  c.denoiser.d_text = 8;
  c.denoiser.text_hidden = 8;
  c.denoiser.time_dim = 8;
  c.denoiser.embed_hidden = 8;
  c.phantom.height = c.phantom.width = 16;
  c.phantom.depth_min = 8;
  c.phantom.depth_max = 10;
  c.trainer.epochs = 1;
  c.trainer.batch_size = 8;
  c.trainer.warmup_steps = 2;
  c.trainer.checkpoint_every = 2;
  c.ofg.ddim_steps = 4;
  set_seed(c, 5);
  return c;
}

class TempDir {
 public:
  explicit TempDir(const std::string& name) : path_(fs::temp_directory_path() / ("pairdiff_" + name)) {
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::size_t line_count(const fs::path& p) {
  const auto s = slurp(p);
  return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

}  // namespace

TEST(CmdPhantom, WritesFilesManifestAndSplit) {
  TempDir dir("phantom");
  const auto cfg = tiny_run();
  cmd_phantom(cfg, dir.path() / "a", 4);
  cmd_phantom(cfg, dir.path() / "b", 4);
  EXPECT_EQ(line_count(dir.path() / "a" / "manifest.tsv"), 4u);
  const auto manifest = read_manifest(dir.path() / "a");
  ASSERT_EQ(manifest.size(), 4u);
  for (const auto& e : manifest) {
    EXPECT_EQ(read_volume((dir.path() / "a" / e.volume).string()).depth, e.depth);
    EXPECT_EQ(read_masks((dir.path() / "a" / e.masks).string()).depth, e.depth);
    EXPECT_EQ(slurp(dir.path() / "a" / e.volume), slurp(dir.path() / "b" / e.volume));
    EXPECT_EQ(slurp(dir.path() / "a" / e.masks), slurp(dir.path() / "b" / e.masks));
    EXPECT_FALSE(e.report.empty());
  }
  EXPECT_EQ(slurp(dir.path() / "a" / "manifest.tsv"), slurp(dir.path() / "b" / "manifest.tsv"));
  const auto s = read_split(dir.path() / "a");
  EXPECT_EQ(s.train.size() + s.test.size(), 4u);

  cmd_phantom(cfg, dir.path() / "empty", 0);
  EXPECT_EQ(line_count(dir.path() / "empty" / "manifest.tsv"), 0u);
  EXPECT_TRUE(read_manifest(dir.path() / "empty").empty());
  EXPECT_THROW(cmd_phantom(cfg, dir.path() / "neg", -1), ContractError);
}

TEST(CmdPhantom, MalformedManifestAndSplit) {
  TempDir dir("manifest");
  std::ofstream(dir.path() / "manifest.tsv") << "0\tphantom_0000.vol\tphantom_0000.msk\n";
  try {
    read_manifest(dir.path());
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("manifest.tsv:1"), std::string::npos);
  }
  std::ofstream(dir.path() / "split.txt") << "train: 0 x\ntest: 1\n";
  EXPECT_THROW(read_split(dir.path()), FormatError);
  std::ofstream(dir.path() / "split.txt") << "train: 0 1\n";
  EXPECT_THROW(read_split(dir.path()), FormatError);
  EXPECT_THROW(read_split(dir.path() / "missing"), FormatError);
}

TEST(CmdTrain, SmokeCsvAndResume) {
  TempDir dir("train");
  auto cfg = tiny_run();
  cfg.train_frac = 0.5;
  cmd_phantom(cfg, dir.path() / "data", 2);
  const auto state = cmd_train(cfg, dir.path() / "data", dir.path() / "run");
  const RunDir run{dir.path() / "run"};
  EXPECT_TRUE(fs::exists(run.final_checkpoint()));
  EXPECT_TRUE(fs::exists(run.config()));
  for (const auto& d : {run.samples(), run.eval(), run.logs()}) EXPECT_TRUE(fs::is_directory(d));
  const auto csv = read_loss_csv(run.loss_csv().string());
  ASSERT_EQ(csv.size(), state.history.size());
  EXPECT_EQ(static_cast<std::int64_t>(csv.size()), state.optimizer.step);
  EXPECT_EQ(format_config(load_config(run.config().string())), format_config(cfg));

  // resume from the first periodic checkpoint into a new run directory
  const auto resumed = cmd_train(cfg, dir.path() / "data", dir.path() / "run2", run.checkpoints() / "step_000002.ckpt");
  const auto csv2 = read_loss_csv(RunDir{dir.path() / "run2"}.loss_csv().string());
  ASSERT_EQ(csv2.size(), csv.size());
  for (std::size_t i = 0; i < csv.size(); ++i) {
    EXPECT_EQ(csv2[i].step, static_cast<std::int64_t>(i));
    EXPECT_EQ(csv2[i].loss, csv[i].loss) << i;
  }
  EXPECT_EQ(slurp(run.final_checkpoint()), slurp(RunDir{dir.path() / "run2"}.final_checkpoint()));

  EXPECT_THROW(cmd_train(cfg, dir.path() / "nothing", dir.path() / "run3"), FormatError);
}

TEST(CmdSampleEval, LengthsDeterminismAndScores) {
  TempDir dir("sample");
  auto cfg = tiny_run();
  cfg.phantom.depth_min = cfg.phantom.depth_max = 24;
  cmd_phantom(cfg, dir.path() / "data", 2);
  cmd_train(cfg, dir.path() / "data", dir.path() / "run");
  const RunDir run{dir.path() / "run"};
  const auto entry = read_manifest(dir.path() / "data").front();
  const auto masks = dir.path() / "data" / entry.masks;
  const auto gt = dir.path() / "data" / entry.volume;

  EXPECT_EQ(cmd_sample(cfg, run.final_checkpoint(), masks, entry.report, run.samples() / "two.vol", 2).depth, 2);
  for (int len : {8, 24}) {
    const auto out = run.samples() / ("len" + std::to_string(len) + ".vol");
    cmd_sample(cfg, run.final_checkpoint(), masks, entry.report, out, len);
    const auto v = read_volume(out.string());
    EXPECT_EQ(v.depth, len);
    EXPECT_NO_THROW(resegment(v, default_bands(3), 3));
  }
  cmd_sample(cfg, run.final_checkpoint(), masks, entry.report, run.samples() / "again.vol", 8);
  EXPECT_EQ(slurp(run.samples() / "again.vol"), slurp(run.samples() / "len8.vol"));
  EXPECT_THROW(cmd_sample(cfg, run.final_checkpoint(), masks, entry.report, run.samples() / "x.vol", 25), ContractError);
  EXPECT_THROW(cmd_sample(cfg, run.final_checkpoint(), masks, entry.report, run.samples() / "x.vol", 1), ContractError);

  // ground truth against itself
  const auto s = cmd_eval(cfg, gt, masks, {gt}, run.eval() / "gt");
  EXPECT_EQ(s.fidelity.macro_dice, 1.0);
  EXPECT_EQ(s.fidelity.macro_jaccard, 1.0);
  EXPECT_EQ(s.fidelity.macro_hd95, 0.0);
  EXPECT_LE(s.frechet, 1e-6);
  const auto rows = read_metrics_csv(run.eval() / "gt" / "metrics.csv");
  const auto expect = metric_rows(s);
  ASSERT_EQ(rows.size(), expect.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(rows[i].metric, expect[i].metric);
    EXPECT_EQ(rows[i].cls, expect[i].cls);
    EXPECT_EQ(rows[i].value, expect[i].value);
  }
  const auto summary = nlohmann::json::parse(slurp(run.eval() / "gt" / "summary.json"));
  EXPECT_EQ(summary["macro_dice"].get<double>(), 1.0);

  // an all-zero volume scores zero on every foreground class
  auto zero = read_volume(gt.string());
  std::fill(zero.voxels.begin(), zero.voxels.end(), 0.0f);
  write_volume(zero, (run.samples() / "zero.vol").string());
  const auto z = cmd_eval(cfg, run.samples() / "zero.vol", masks, {gt}, run.eval() / "zero");
  for (const auto& c : z.fidelity.classes) EXPECT_EQ(c.dice, 0.0) << c.label;

  EXPECT_THROW(cmd_eval(cfg, run.samples() / "len8.vol", masks, {gt}, run.eval() / "bad"), ContractError);
  auto eight = cfg;
  eight.phantom.n_classes = eight.denoiser.n_classes = 8;
  EXPECT_THROW(cmd_eval(eight, gt, masks, {gt}, run.eval() / "bad"), ContractError);
}

TEST(MetricsCsv, RejectsMalformedFiles) {
  TempDir dir("csv");
  std::ofstream(dir.path() / "a.csv") << "metric,value\n";
  EXPECT_THROW(read_metrics_csv(dir.path() / "a.csv"), FormatError);
  std::ofstream(dir.path() / "b.csv") << "metric,class,value\ndice,1\n";
  EXPECT_THROW(read_metrics_csv(dir.path() / "b.csv"), FormatError);
  std::ofstream(dir.path() / "c.csv") << "metric,class,value\ndice,1,abc\n";
  EXPECT_THROW(read_metrics_csv(dir.path() / "c.csv"), FormatError);
}
