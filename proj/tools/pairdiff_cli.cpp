// SPDX-License-Identifier: Apache-2.0
// Command-line front end: phantom | train | sample | eval | ablate.
#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

#include "pairdiff/config.hpp"
#include "pairdiff/error.hpp"
#include "pairdiff/pipeline.hpp"
#include "pairdiff/volume_io.hpp"

namespace {

using namespace pairdiff;

enum ExitCode : int { kOk = 0, kConfig = 2, kData = 3, kNumerical = 4 };

struct Globals {
  std::string config;
  std::uint64_t seed = 0;
  bool deterministic = false;
  std::string out;
  std::vector<std::string> settings;
};

RunConfig resolve_config(const Globals& g, const CLI::App& app) {
  RunConfig cfg = g.config.empty() ? RunConfig{} : load_config(g.config);
  for (const auto& kv : g.settings) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    apply_setting(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (app.count("--seed") > 0) set_seed(cfg, g.seed);
  cfg.validate();
  return cfg;
}

void require_out(const Globals& g, const char* command) {
  if (g.out.empty()) throw ConfigError(std::string(command) + ": --out is required");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Paired-frame diffusion for volumetric phantoms"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "key = value config file");
  app.add_option("--seed", g.seed, "overrides every seed in the config");
  app.add_flag("--deterministic", g.deterministic,
               "single-threaded, fixed-seed execution (the only mode this build implements)");
  app.add_option("--out", g.out, "output directory, or output file for sample");
  app.add_option("--set", g.settings, "config override, key=value; repeatable");

  auto* phantom = app.add_subcommand("phantom", "write synthetic phantoms, manifest and split");
  int count = 20;
  phantom->add_option("--count", count, "number of phantoms")->check(CLI::NonNegativeNumber);

  auto* train = app.add_subcommand("train", "train the denoiser on a phantom directory");
  std::string data_dir, resume;
  train->add_option("--data", data_dir, "phantom directory")->required();
  train->add_option("--resume", resume, "checkpoint to continue from");

  auto* sample = app.add_subcommand("sample", "generate a volume from a mask sequence");
  std::string checkpoint, masks_path, report;
  int length = 0;
  sample->add_option("--checkpoint", checkpoint)->required();
  sample->add_option("--masks", masks_path, "MSK1 file")->required();
  sample->add_option("--report", report, "report text");
  sample->add_option("--length", length, "number of slices; defaults to the mask depth");

  auto* eval = app.add_subcommand("eval", "score a generated volume");
  std::string generated, reference_masks;
  std::vector<std::string> reference_vols;
  eval->add_option("--generated", generated, "VOL1 file")->required();
  eval->add_option("--masks", reference_masks, "reference MSK1 file")->required();
  eval->add_option("--reference", reference_vols, "reference VOL1 files for the Frechet distance")->required();

  auto* ablate = app.add_subcommand("ablate", "train and score the ablation variants");
  ablate->add_option("--data", data_dir, "phantom directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    const auto cfg = resolve_config(g, app);
    if (*phantom) {
      require_out(g, "phantom");
      cmd_phantom(cfg, g.out, count);
      std::cout << "wrote " << count << " phantoms to " << g.out << '\n';
    } else if (*train) {
      require_out(g, "train");
      const auto state = cmd_train(cfg, data_dir, g.out, resume);
      std::printf("trained %zu steps, final loss %.6f\n", state.history.size(),
                  state.history.empty() ? 0.0 : state.history.back().loss);
    } else if (*sample) {
      require_out(g, "sample");
      if (length == 0) length = read_masks(masks_path).depth;
      const auto vol = cmd_sample(cfg, checkpoint, masks_path, report, g.out, length);
      std::cout << "wrote " << vol.height << "x" << vol.width << "x" << vol.depth << " volume to " << g.out << '\n';
    } else if (*eval) {
      require_out(g, "eval");
      std::vector<fs::path> refs(reference_vols.begin(), reference_vols.end());
      const auto s = cmd_eval(cfg, generated, reference_masks, refs, g.out);
      std::printf("dice %.4f jaccard %.4f hd95 %.3f flicker %.5f t_coherence %.4f frechet %.6g\n",
                  s.fidelity.macro_dice, s.fidelity.macro_jaccard, s.fidelity.macro_hd95, s.flicker,
                  s.t_coherence, s.frechet);
    } else if (*ablate) {
      require_out(g, "ablate");
      for (const auto& r : cmd_ablate(cfg, data_dir, g.out)) {
        std::printf("%-18s dice %.4f jaccard %.4f hd95 %.3f flicker %.5f t_coherence %.4f\n", r.variant.c_str(),
                    r.macro_dice, r.macro_jaccard, r.macro_hd95, r.flicker, r.t_coherence);
      }
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  }
  return kOk;
}
