// SPDX-License-Identifier: Apache-2.0
#include "pairdiff/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "pairdiff/checkpoint.hpp"
#include "pairdiff/error.hpp"
#include "pairdiff/ofg.hpp"
#include "pairdiff/pairing.hpp"
#include "pairdiff/volume_io.hpp"

namespace pairdiff {

namespace {

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  return out;
}

std::ifstream open_in(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return in;
}

void make_dirs(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw FormatError("cannot create directory " + dir.string() + ": " + ec.message());
}

std::string phantom_stem(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "phantom_%04d", index);
  return buf;
}

std::string join(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? " " : "") + std::to_string(v[i]);
  return s;
}

std::vector<int> parse_ints(const std::string& text, const fs::path& where) {
  std::istringstream ss(text);
  std::vector<int> out;
  std::string tok;
  while (ss >> tok) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::logic_error&) {
      throw FormatError(where.string() + ": bad index '" + tok + "'");
    }
  }
  return out;
}

Denoiser load_denoiser(const RunConfig& cfg, const fs::path& checkpoint) {
  auto state = state_from_named(load_checkpoint(checkpoint.string()));
  return Denoiser(cfg.denoiser, std::move(state.weights), cfg.schedule.make());
}

std::string format_double(double v) {
  std::ostringstream ss;
  ss << std::setprecision(17) << v;
  return ss.str();
}

}  // namespace

RunDir prepare_run_dir(const fs::path& root, const RunConfig& cfg) {
  RunDir run{root};
  for (const auto& d : {run.checkpoints(), run.samples(), run.eval(), run.logs()}) make_dirs(d);
  open_out(run.config()) << format_config(cfg);
  return run;
}

void cmd_phantom(const RunConfig& cfg, const fs::path& out_dir, int count) {
  if (count < 0) throw ContractError("phantom: count must be >= 0, got " + std::to_string(count));
  cfg.phantom.validate();
  make_dirs(out_dir);
  auto manifest = open_out(out_dir / "manifest.tsv");
  for (int i = 0; i < count; ++i) {
    const auto p = generate_phantom(cfg.phantom, i);
    const auto stem = phantom_stem(i);
    write_volume(p.volume, (out_dir / (stem + ".vol")).string());
    write_masks(p.masks, (out_dir / (stem + ".msk")).string());
    manifest << i << '\t' << stem << ".vol\t" << stem << ".msk\t" << p.volume.depth << '\t' << p.report << '\n';
  }
  const auto [train, test] = count > 0 ? split(count, cfg.train_frac, cfg.phantom.seed)
                                       : std::pair<std::vector<int>, std::vector<int>>{};
  open_out(out_dir / "split.txt") << "train: " << join(train) << "\ntest: " << join(test) << '\n';
}

std::vector<ManifestEntry> read_manifest(const fs::path& data_dir) {
  const auto path = data_dir / "manifest.tsv";
  auto in = open_in(path);
  std::vector<ManifestEntry> out;
  std::string line;
  for (int lineno = 1; std::getline(in, line); ++lineno) {
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::istringstream ss(line);
    for (std::string c; std::getline(ss, c, '\t');) cols.push_back(c);
    if (cols.size() != 5) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected 5 tab-separated columns, found " +
                        std::to_string(cols.size()));
    }
    ManifestEntry e;
    try {
      e.index = std::stoi(cols[0]);
      e.depth = std::stoi(cols[3]);
    } catch (const std::logic_error&) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": bad index or depth");
    }
    e.volume = cols[1];
    e.masks = cols[2];
    e.report = cols[4];
    out.push_back(std::move(e));
  }
  return out;
}

DataSplit read_split(const fs::path& data_dir) {
  const auto path = data_dir / "split.txt";
  auto in = open_in(path);
  DataSplit s;
  bool seen_train = false, seen_test = false;
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("train:", 0) == 0) {
      s.train = parse_ints(line.substr(6), path);
      seen_train = true;
    } else if (line.rfind("test:", 0) == 0) {
      s.test = parse_ints(line.substr(5), path);
      seen_test = true;
    }
  }
  if (!seen_train || !seen_test) throw FormatError(path.string() + ": missing train: or test: line");
  return s;
}

std::vector<Phantom> load_phantoms(const fs::path& data_dir, const std::vector<int>& indices) {
  const auto manifest = read_manifest(data_dir);
  std::vector<Phantom> out;
  for (int idx : indices) {
    const auto it = std::find_if(manifest.begin(), manifest.end(), [&](const auto& e) { return e.index == idx; });
    if (it == manifest.end()) throw FormatError("manifest in " + data_dir.string() + " has no entry " + std::to_string(idx));
    Phantom p;
    p.volume = read_volume((data_dir / it->volume).string());
    p.masks = read_masks((data_dir / it->masks).string());
    p.report = it->report;
    if (p.volume.depth != it->depth || p.masks.depth != it->depth) {
      throw FormatError(it->volume + ": depth disagrees with manifest (" + std::to_string(it->depth) + ")");
    }
    out.push_back(std::move(p));
  }
  return out;
}

TrainState cmd_train(const RunConfig& cfg, const fs::path& data_dir, const fs::path& run_dir, const fs::path& resume) {
  cfg.validate();
  if (!fs::exists(data_dir / "manifest.tsv")) {
    throw FormatError("train: no manifest.tsv in " + data_dir.string() + "; run the phantom command first");
  }
  const auto split = read_split(data_dir);
  if (split.train.empty()) throw ContractError("train: the train split in " + data_dir.string() + " is empty");
  const auto data = load_phantoms(data_dir, split.train);
  const auto run = prepare_run_dir(run_dir, cfg);

  TrainState start;
  const TrainState* resume_state = nullptr;
  if (!resume.empty()) {
    start = state_from_named(load_checkpoint(resume.string()));
    const auto csv = resume.parent_path().parent_path() / "logs" / "loss.csv";
    if (fs::exists(csv)) {
      for (const auto& r : read_loss_csv(csv.string()))
        if (r.step < start.optimizer.step) start.history.push_back(r);
    }
    resume_state = &start;
  }

  std::ofstream log(run.logs() / "train.log", resume.empty() ? std::ios::trunc : std::ios::app);
  TrainHooks hooks;
  hooks.on_step = [&](const LossRecord& r) {
    if (r.step % 50 == 0) log << "step " << r.step << " lr " << r.lr << " loss " << r.loss << '\n' << std::flush;
  };
  hooks.on_checkpoint = [&](const TrainState& s) {
    char name[48];
    std::snprintf(name, sizeof name, "step_%06lld.ckpt", static_cast<long long>(s.optimizer.step));
    save_checkpoint((run.checkpoints() / name).string(), state_to_named(s));
    write_loss_csv(run.loss_csv().string(), s.history);
  };
  auto state = train(data, cfg.trainer, cfg.denoiser, cfg.schedule.make(), hooks, resume_state);
  save_checkpoint(run.final_checkpoint().string(), state_to_named(state));
  write_loss_csv(run.loss_csv().string(), state.history);
  return state;
}

Volume cmd_sample(const RunConfig& cfg, const fs::path& checkpoint, const fs::path& masks_path,
                  std::string_view report, const fs::path& out_path, int length) {
  cfg.validate();
  const auto masks = read_masks(masks_path.string());
  if (length < 2 || length > masks.depth) {
    throw ContractError("sample: length " + std::to_string(length) + " needs 2 <= length <= " +
                        std::to_string(masks.depth) + " (mask depth of " + masks_path.string() + ")");
  }
  const auto net = load_denoiser(cfg, checkpoint);
  auto vol = generate_volume(net, mask_slices(masks, length), report, cfg.schedule.make(), cfg.ofg);
  vol.spacing = masks.spacing;
  if (out_path.has_parent_path()) make_dirs(out_path.parent_path());
  write_volume(vol, out_path.string());
  return vol;
}

std::vector<MetricRow> metric_rows(const EvalSummary& s) {
  std::vector<MetricRow> rows;
  for (const auto& c : s.fidelity.classes) {
    const auto cls = std::to_string(c.label);
    rows.push_back({"dice", cls, c.dice});
    rows.push_back({"jaccard", cls, c.jaccard});
    rows.push_back({"hd95", cls, c.hd95});
  }
  rows.push_back({"dice", "all", s.fidelity.macro_dice});
  rows.push_back({"jaccard", "all", s.fidelity.macro_jaccard});
  rows.push_back({"hd95", "all", s.fidelity.macro_hd95});
  rows.push_back({"flicker", "all", s.flicker});
  rows.push_back({"t_coherence", "all", s.t_coherence});
  rows.push_back({"frechet", "all", s.frechet});
  return rows;
}

void write_metrics_csv(const fs::path& path, const std::vector<MetricRow>& rows) {
  auto out = open_out(path);
  out << "metric,class,value\n";
  for (const auto& r : rows) out << r.metric << ',' << r.cls << ',' << format_double(r.value) << '\n';
}

std::vector<MetricRow> read_metrics_csv(const fs::path& path) {
  auto in = open_in(path);
  std::string line;
  if (!std::getline(in, line) || line != "metric,class,value") {
    throw FormatError(path.string() + ": expected header metric,class,value");
  }
  std::vector<MetricRow> rows;
  for (int lineno = 2; std::getline(in, line); ++lineno) {
    if (line.empty()) continue;
    const auto a = line.find(','), b = line.find(',', a == std::string::npos ? a : a + 1);
    if (a == std::string::npos || b == std::string::npos) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected 3 columns");
    }
    MetricRow r{line.substr(0, a), line.substr(a + 1, b - a - 1), 0.0};
    try {
      r.value = std::stod(line.substr(b + 1));
    } catch (const std::logic_error&) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": bad value");
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

EvalSummary evaluate(const Volume& generated, const MaskVolume& reference_masks,
                     const std::vector<Volume>& reference_vols) {
  if (generated.height != reference_masks.height || generated.width != reference_masks.width ||
      generated.depth != reference_masks.depth) {
    throw ContractError("eval: generated volume is " + std::to_string(generated.height) + "x" +
                        std::to_string(generated.width) + "x" + std::to_string(generated.depth) +
                        ", reference masks are " + std::to_string(reference_masks.height) + "x" +
                        std::to_string(reference_masks.width) + "x" + std::to_string(reference_masks.depth));
  }
  if (reference_vols.empty()) throw ContractError("eval: no reference volumes for the Frechet distance");
  EvalSummary s;
  auto seg = resegment(generated, default_bands(reference_masks.n_classes), reference_masks.n_classes);
  seg.spacing = reference_masks.spacing;
  s.fidelity = fidelity(seg, reference_masks);
  const auto frames = volume_frames(generated);
  s.flicker = flicker(frames);
  s.t_coherence = t_coherence(frames, enumerate_pairs(generated.depth, {1}));
  std::vector<const Volume*> refs;
  for (const auto& v : reference_vols) refs.push_back(&v);
  s.frechet = frechet_distance(feature_summary(generated), feature_summary(refs));
  return s;
}

EvalSummary cmd_eval(const RunConfig& cfg, const fs::path& generated, const fs::path& reference_masks,
                     const std::vector<fs::path>& reference_vols, const fs::path& out_dir) {
  const auto gen = read_volume(generated.string());
  const auto masks = read_masks(reference_masks.string());
  if (masks.n_classes != cfg.phantom.n_classes) {
    throw ContractError("eval: " + reference_masks.string() + " has " + std::to_string(masks.n_classes) +
                        " classes, phantom.n_classes is " + std::to_string(cfg.phantom.n_classes));
  }
  std::vector<Volume> refs;
  for (const auto& p : reference_vols) refs.push_back(read_volume(p.string()));
  const auto s = evaluate(gen, masks, refs);

  make_dirs(out_dir);
  write_metrics_csv(out_dir / "metrics.csv", metric_rows(s));
  nlohmann::json j;
  j["generated"] = generated.string();
  j["reference_masks"] = reference_masks.string();
  j["reference_volumes"] = reference_vols.size();
  j["macro_dice"] = s.fidelity.macro_dice;
  j["macro_jaccard"] = s.fidelity.macro_jaccard;
  j["macro_hd95"] = s.fidelity.macro_hd95;
  j["flicker"] = s.flicker;
  j["t_coherence"] = s.t_coherence;
  j["frechet"] = s.frechet;
  for (const auto& c : s.fidelity.classes) {
    j["classes"].push_back({{"label", c.label}, {"dice", c.dice}, {"jaccard", c.jaccard}, {"hd95", c.hd95}});
  }
  open_out(out_dir / "summary.json") << j.dump(2) << '\n';
  return s;
}

std::vector<AblationRow> cmd_ablate(const RunConfig& cfg, const fs::path& data_dir, const fs::path& run_dir) {
  cfg.validate();
  const auto split = read_split(data_dir);
  if (split.test.empty()) throw ContractError("ablate: the test split in " + data_dir.string() + " is empty");
  const auto train_set = load_phantoms(data_dir, split.train);
  const auto test_set = load_phantoms(data_dir, split.test);
  const auto run = prepare_run_dir(run_dir, cfg);
  const auto sched = cfg.schedule.make();

  struct Model {
    std::string name;
    TrainConfig tc;
  };
  std::vector<Model> models{{"full", cfg.trainer}, {"no_pfm", cfg.trainer}, {"no_dag", cfg.trainer},
                            {"skip_1", cfg.trainer}};
  models[1].tc.paired_frames = false;
  models[2].tc.anatomical_guidance = false;
  models[3].tc.skip_set = {1};

  struct Variant {
    std::string name;
    std::size_t model;
    OFGConfig ofg;
  };
  std::vector<Variant> variants;
  auto add = [&](std::string name, std::size_t model, auto tweak) {
    OFGConfig o = cfg.ofg;
    tweak(o);
    variants.push_back({std::move(name), model, o});
  };
  add("full_ofg", 0, [](OFGConfig&) {});
  add("full_markovian", 0, [](OFGConfig& o) { o.markovian_baseline = true; });
  add("full_ofg_literal", 0, [](OFGConfig& o) { o.literal_guidance = true; });
  add("no_pfm", 1, [](OFGConfig& o) { o.paired_frames = false; });
  add("no_dag_ofg", 2, [](OFGConfig& o) { o.anatomical_guidance = false; });
  add("no_dag_markovian", 2, [](OFGConfig& o) {
    o.anatomical_guidance = false;
    o.markovian_baseline = true;
  });
  add("skip_1_ofg", 3, [](OFGConfig&) {});

  std::vector<Volume> reference_vols;
  for (const auto& p : test_set) reference_vols.push_back(p.volume);

  std::vector<Denoiser> nets;
  for (const auto& m : models) {
    const auto path = run.checkpoints() / (m.name + ".ckpt");
    auto state = train(train_set, m.tc, cfg.denoiser, sched);
    save_checkpoint(path.string(), state_to_named(state));
    write_loss_csv((run.logs() / ("loss_" + m.name + ".csv")).string(), state.history);
    nets.emplace_back(cfg.denoiser, std::move(state.weights), sched);
  }

  std::vector<AblationRow> rows;
  for (const auto& v : variants) {
    AblationRow row{v.name};
    for (std::size_t k = 0; k < test_set.size(); ++k) {
      const auto& p = test_set[k];
      auto vol = generate_volume(nets[v.model], mask_slices(p.masks, p.masks.depth), p.report, sched, v.ofg);
      vol.spacing = p.masks.spacing;
      write_volume(vol, (run.samples() / (v.name + "_" + std::to_string(split.test[k]) + ".vol")).string());
      const auto s = evaluate(vol, p.masks, reference_vols);
      row.macro_dice += s.fidelity.macro_dice;
      row.macro_jaccard += s.fidelity.macro_jaccard;
      row.macro_hd95 += s.fidelity.macro_hd95;
      row.flicker += s.flicker;
      row.t_coherence += s.t_coherence;
    }
    const auto n = static_cast<double>(test_set.size());
    row.macro_dice /= n;
    row.macro_jaccard /= n;
    row.macro_hd95 /= n;
    row.flicker /= n;
    row.t_coherence /= n;
    rows.push_back(row);
  }

  auto out = open_out(run.eval() / "ablation.csv");
  out << "variant,macro_dice,macro_jaccard,macro_hd95,flicker,t_coherence\n";
  for (const auto& r : rows) {
    out << r.variant << ',' << format_double(r.macro_dice) << ',' << format_double(r.macro_jaccard) << ','
        << format_double(r.macro_hd95) << ',' << format_double(r.flicker) << ',' << format_double(r.t_coherence)
        << '\n';
  }
  return rows;
}

}  // namespace pairdiff
