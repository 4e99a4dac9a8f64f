// SPDX-License-Identifier: Apache-2.0
// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
//
//   pairdiff_acceptance [--work DIR] [--keep] [--only N ...]
#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "pairdiff/conditioning.hpp"
#include "pairdiff/denoiser.hpp"
#include "pairdiff/grad_check.hpp"
#include "pairdiff/metrics.hpp"
#include "pairdiff/ops.hpp"
#include "pairdiff/pairing.hpp"
#include "pairdiff/pipeline.hpp"
#include "pairdiff/schedule.hpp"
#include "pairdiff/volume_io.hpp"
#include "test_util.hpp"

using namespace pairdiff;
using pairdiff::testing::random_tensor;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

// Collects failed sub-checks; the criterion passes when none were recorded.
class Checks {
 public:
  void expect(bool ok, const std::string& what) {
    ++total_;
    if (!ok && failures_.size() < 5) failures_.push_back(what);
    failed_ += !ok;
  }
  void near(double got, double want, double tol, const std::string& what) {
    std::ostringstream s;
    s << what << ": got " << got << " want " << want << " tol " << tol;
    expect(std::abs(got - want) <= tol, s.str());
  }
  bool ok() const { return failed_ == 0; }
  std::string summary() const {
    std::ostringstream s;
    s << total_ - failed_ << "/" << total_ << " checks";
    for (const auto& f : failures_) s << "\n      " << f;
    return s.str();
  }

 private:
  std::vector<std::string> failures_;
  long total_ = 0;
  long failed_ = 0;
};

struct Outcome {
  bool pass = false;
  std::string detail;
};

Outcome from_checks(const Checks& c, const std::string& extra = {}) {
  return {c.ok(), c.summary() + (extra.empty() ? "" : "; " + extra)};
}

std::string fmt(const char* format, auto... args) {
  char buf[256];
  std::snprintf(buf, sizeof buf, format, args...);
  return buf;
}

// ---------------------------------------------------------------------------
// 1. Autodiff

DenoiserConfig tiny_denoiser() {
  DenoiserConfig cfg;
  cfg.base_width = 8;
  cfg.d_model = 16;
  cfg.c_f = 8;
  cfg.groups = 2;
  cfg.d_pos = 4;
  cfg.d_text = 8;
  cfg.text_hidden = 8;
  cfg.time_dim = 8;
  cfg.embed_hidden = 8;
  return cfg;
}

template <typename T>
DenoiserExtras<T> random_extras(const DenoiserConfig& cfg, std::int64_t n, std::int64_t h, std::uint64_t seed) {
  DenoiserExtras<T> e;
  e.pos = random_tensor<T>({n, 2 * cfg.d_pos}, seed);
  e.flow = random_tensor<T>({n, 2, h, h}, seed + 1);
  e.text = random_tensor<T>({n, cfg.d_text}, seed + 2, 0.3);
  return e;
}

Outcome autodiff() {
  const auto t0 = Clock::now();
  Checks c;
  double worst = 0;
  auto record = [&](const std::string& name, double err) {
    worst = std::max(worst, err);
    c.expect(err <= 1e-3, name + fmt(" relative error %.3g", err));
  };

  auto a = random_tensor<double>({2, 4, 4, 4}, 40);
  auto b = random_tensor<double>({2, 4, 4, 4}, 41);
  auto v = random_tensor<double>({2, 4}, 42);
  auto g = random_tensor<double>({4}, 43);
  auto be = random_tensor<double>({4}, 44);
  auto w = random_tensor<double>({4, 3}, 45);
  auto lb = random_tensor<double>({3}, 46);
  auto m = random_tensor<double>({5, 4}, 47);
  auto k = random_tensor<double>({3, 4, 3, 3}, 48, 0.5);
  auto kb = random_tensor<double>({3}, 49, 0.1);
  auto r = random_tensor<double>({2, 4, 4, 4}, 50);
  auto rc = random_tensor<double>({2, 3, 2, 2}, 51);
  auto readout = [&](const TensorD& y) { return ops::sum(ops::mul(y, r)); };
  auto conv_readout = [&](const TensorD& y) { return ops::sum(ops::mul(y, rc)); };
  using Fn = ScalarFn<double>;
  const std::vector<std::tuple<std::string, Fn, TensorD>> cases = {
      {"conv2d.input", [&](const TensorD& t) { return conv_readout(ops::conv2d(t, k, kb, 2, 1)); }, a},
      {"conv2d.kernel", [&](const TensorD& t) { return conv_readout(ops::conv2d(a, t, kb, 2, 1)); }, k},
      {"conv2d.bias", [&](const TensorD& t) { return conv_readout(ops::conv2d(a, k, t, 2, 1)); }, kb},
      {"upsample_nearest2x", [&](const TensorD& t) { auto y = ops::upsample_nearest2x(t); return ops::sum(ops::mul(y, y)); }, a},
      {"linear.input", [&](const TensorD& t) { return ops::sum(ops::silu(ops::linear(t, w, lb))); }, m},
      {"linear.weight", [&](const TensorD& t) { return ops::sum(ops::silu(ops::linear(m, t, lb))); }, w},
      {"linear.bias", [&](const TensorD& t) { return ops::sum(ops::silu(ops::linear(m, w, t))); }, lb},
      {"group_norm.input", [&](const TensorD& t) { return readout(ops::group_norm(t, 2, g, be, 1e-5)); }, a},
      {"group_norm.gamma", [&](const TensorD& t) { return readout(ops::group_norm(a, 2, t, be, 1e-5)); }, g},
      {"group_norm.beta", [&](const TensorD& t) { return readout(ops::group_norm(a, 2, g, t, 1e-5)); }, be},
      {"silu", [&](const TensorD& t) { return readout(ops::silu(t)); }, a},
      {"add", [&](const TensorD& t) { return readout(ops::silu(ops::add(t, b))); }, a},
      {"mul", [&](const TensorD& t) { return readout(ops::mul(t, b)); }, a},
      {"scale", [&](const TensorD& t) { return readout(ops::silu(ops::scale(t, -1.7))); }, a},
      {"add_channelwise.input", [&](const TensorD& t) { return readout(ops::silu(ops::add_channelwise(t, v))); }, a},
      {"add_channelwise.vector", [&](const TensorD& t) { return readout(ops::silu(ops::add_channelwise(a, t))); }, v},
      {"concat_channels", [&](const TensorD& t) { auto y = ops::concat_channels(t, b); return ops::sum(ops::mul(y, y)); }, a},
      {"slice_channels", [&](const TensorD& t) { auto y = ops::slice_channels(t, 1, 2); return ops::sum(ops::mul(y, y)); }, a},
      {"scale_samples", [&](const TensorD& t) { return readout(ops::silu(ops::scale_samples(t, {0.5, -1.5}))); }, a},
      {"sum", [&](const TensorD& t) { return ops::sum(ops::silu(t)); }, a},
      {"mean", [&](const TensorD& t) { return ops::mean(ops::silu(t)); }, a},
      {"mse", [&](const TensorD& t) { return ops::mse(t, b); }, a},
  };
  for (const auto& [name, f, x] : cases) record(name, grad_check(f, x, 1e-3));

  // the full training loss through every denoiser parameter tensor
  const auto cfg = tiny_denoiser();
  const auto sched = make_linear_schedule(100, 1e-3, 0.2);
  const auto weights = init_weights(cfg, 20).cast<double>();
  const auto x0 = random_tensor<double>({2, 2, 16, 16}, 21, 0.5);
  const auto cond = random_tensor<double>({2, 2, 16, 16}, 22, 0.5);
  const auto eps = random_tensor<double>({2, 2, 16, 16}, 23);
  const auto extras = random_extras<double>(cfg, 2, 16, 24);
  const std::vector<int> t = {12, 77};
  for (std::size_t p = 0; p < weights.size(); ++p) {
    Fn f = [&](const TensorD& leaf) {
      auto ws = weights;
      ws.tensors()[p] = leaf;
      EpsFn<double> net = [&](const TensorD& packed, std::span<const int> ts) {
        return denoiser_forward(cfg, ws, packed, ts, extras, sched);
      };
      return ddpm_loss(net, x0, cond, t, eps, sched);
    };
    record("loss/" + weights.names()[p], grad_check(f, weights.tensors()[p], 1e-5, 6, p));
  }
  const double secs = seconds_since(t0);
  c.expect(secs < 60, fmt("runtime %.1f s >= 60 s", secs));
  return from_checks(c, fmt("%zu ops + %zu parameter tensors, worst %.2e, %.1f s", cases.size(), weights.size(),
                            worst, secs));
}

// ---------------------------------------------------------------------------
// 2. Diffusion math

Outcome diffusion_math() {
  const auto t0 = Clock::now();
  Checks c;
  const int steps = 100;
  const auto s = make_linear_schedule(steps, 1e-3, 0.2);

  // closed-form marginal and step-by-step chain against the analytic moments
  const int n = 10000;
  const float x0_value = 0.6f;
  std::mt19937_64 rng(17);
  std::normal_distribution<double> nd;
  auto moments = [&](const std::vector<double>& xs) {
    double mean = 0, var = 0;
    for (double x : xs) mean += x;
    mean /= xs.size();
    for (double x : xs) var += (x - mean) * (x - mean);
    return std::pair{mean, var / (xs.size() - 1)};
  };
  for (int t : {1, steps / 2, steps}) {
    std::vector<float> e(n);
    for (auto& x : e) x = static_cast<float>(nd(rng));
    const auto xt = forward_noise(Tensor::full({n}, x0_value), t, Tensor({n}, e), s);
    std::vector<double> closed(xt.data().begin(), xt.data().end());
    std::vector<double> chain(n, x0_value);
    for (int k = 1; k <= t; ++k)
      for (auto& x : chain) x = std::sqrt(s.alpha(k)) * x + std::sqrt(s.beta(k)) * nd(rng);
    const double var = 1.0 - s.alpha_bar(t), mean = std::sqrt(s.alpha_bar(t)) * x0_value;
    const double se_mean = std::sqrt(var / n), se_var = var * std::sqrt(2.0 / (n - 1));
    for (const auto& [label, xs] : {std::pair{"closed", &closed}, std::pair{"chain", &chain}}) {
      const auto [m, v] = moments(*xs);
      c.near(m, mean, 3 * se_mean, fmt("%s mean t=%d", label, t));
      c.near(v, var, 3 * se_var, fmt("%s variance t=%d", label, t));
    }
  }

  // σ=0 chain driven by an untrained denoiser, run twice
  const auto cfg = tiny_denoiser();
  const Denoiser net(cfg, init_weights(cfg, 3), s);
  const auto cond = random_tensor<float>({1, 2, 16, 16}, 4, 0.5);
  const auto pos = random_tensor<float>({1, 2 * cfg.d_pos}, 5);
  const auto text = random_tensor<float>({1, cfg.d_text}, 6, 0.3);
  auto run_chain = [&] {
    auto x = random_tensor<float>({1, 2, 16, 16}, 7);
    const auto ts = ddim_timesteps(steps, 25);
    for (std::size_t k = 0; k < ts.size(); ++k) {
      const auto e = net.predict(ops::concat_channels(x, cond), ts[k], pos, text);
      x = ddim_step(x, ts[k], k + 1 < ts.size() ? ts[k + 1] : 0, e, s);
    }
    return pairdiff::testing::values(x);
  };
  const auto first = run_chain(), second = run_chain();
  c.expect(std::memcmp(first.data(), second.data(), first.size() * sizeof(float)) == 0,
           "sigma=0 chain differs between runs");

  // with the true noise as prediction, DDIM walks back to x0
  const auto x0 = random_tensor<float>({2, 2, 8, 8}, 10, 0.5);
  const auto eps = random_tensor<float>({2, 2, 8, 8}, 11);
  double worst = 0;
  std::vector<std::vector<int>> chains = {{1}, {10}, {50}, {steps}};
  for (int count : {3, 10, 25}) chains.push_back(ddim_timesteps(steps, count));
  for (const auto& ts : chains) {
    auto x = forward_noise(x0, ts.front(), eps, s);
    for (std::size_t k = 0; k < ts.size(); ++k) x = ddim_step(x, ts[k], k + 1 < ts.size() ? ts[k + 1] : 0, eps, s);
    for (std::int64_t i = 0; i < x0.numel(); ++i) worst = std::max(worst, std::abs(double(x.data()[i]) - x0.data()[i]));
  }
  c.expect(worst <= 1e-4, fmt("oracle inversion error %.3g", worst));
  const double secs = seconds_since(t0);
  c.expect(secs < 60, fmt("runtime %.1f s >= 60 s", secs));
  return from_checks(c, fmt("inversion error %.2e, %.1f s", worst, secs));
}

// ---------------------------------------------------------------------------
// 3. Pairing

Outcome pairing() {
  Checks c;
  const std::vector<int> pool = {1, 2, 3, 4, 8};
  int compared = 0;
  for (int mask = 1; mask < (1 << pool.size()); ++mask) {
    std::vector<int> skips;
    for (std::size_t b = 0; b < pool.size(); ++b)
      if (mask & (1 << b)) skips.push_back(pool[b]);
    for (int depth = 2; depth <= 128; ++depth, ++compared)
      c.expect(enumerate_pairs(depth, skips) == oracle::pairs(depth, skips), fmt("depth %d subset %d", depth, mask));
  }
  const auto eight = enumerate_pairs(8, {1, 2, 4});
  c.expect(eight.size() == 11, fmt("D=8 {1,2,4} gives %zu pairs", eight.size()));
  return from_checks(c, fmt("%d (depth, subset) cases", compared));
}

// ---------------------------------------------------------------------------
// 4. Metrics

Outcome metrics() {
  Checks c;
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> dim(1, 12);
  std::uniform_real_distribution<double> dens(0.05, 0.6);
  std::uniform_real_distribution<float> spc(0.5f, 2.5f);
  int overlap = 0, surface = 0, temporal = 0;
  while (surface < 200) {
    const int h = dim(rng), w = dim(rng), d = dim(rng);
    const auto a = oracle::random_volume(h, w, d, dens(rng), rng);
    const auto b = oracle::random_volume(h, w, d, dens(rng), rng);
    const double dc = dice(a, b), ji = jaccard(a, b);
    c.near(dc, oracle::dice(a, b), 1e-9, "dice");
    c.near(ji, oracle::jaccard(a, b), 1e-9, "jaccard");
    c.near(ji, dc / (2 - dc), 1e-9, "JI = DC/(2-DC)");
    ++overlap;
    if (a.count() == 0 || b.count() == 0) continue;
    const Spacing sp = surface % 2 ? Spacing{1, 1, 1} : Spacing{spc(rng), spc(rng), spc(rng)};
    c.near(hd95(a, b, sp), oracle::hd95(a, b, sp), 1e-9, fmt("hd95 %dx%dx%d", h, w, d));
    ++surface;
  }
  for (; temporal < 200; ++temporal) {
    const int h = dim(rng), w = dim(rng), depth = 2 + dim(rng) % 11;
    std::vector<Image> frames;
    for (int z = 0; z < depth; ++z) frames.push_back(oracle::random_image(h, w, rng));
    const auto ps = enumerate_pairs(depth, {1, 2, 4});
    c.near(t_coherence(frames, ps), oracle::t_coherence(frames, ps), 1e-9, "t_coherence");
    c.near(flicker(frames), oracle::flicker(frames), 1e-9, "flicker");
  }

  // Fréchet closed forms
  const int k = 4;
  auto diagonal = [&](std::vector<double> mu, std::vector<double> diag) {
    FeatureSummary f{std::move(mu), std::vector<double>(k * k, 0.0)};
    for (int i = 0; i < k; ++i) f.sigma[i * k + i] = diag[i];
    return f;
  };
  auto p = diagonal({0.1, 0.2, 0.3, 0.4}, {1, 2, 1, 0.5});
  p.sigma[1] = p.sigma[4] = 0.3;
  c.near(frechet_distance(p, p), 0.0, 1e-6, "frechet identical");
  const auto eye = diagonal({0, 0, 0, 0}, {1, 1, 1, 1});
  const auto shifted = diagonal({1.0, -2.0, 0.5, 0.0}, {1, 1, 1, 1});
  c.near(frechet_distance(eye, shifted), 5.25, 1e-6, "frechet shifted mean");
  const std::vector<double> da = {0.5, 2.0, 1.0, 3.0}, db = {1.5, 0.25, 1.0, 0.1};
  double expected = 0;
  for (int i = 0; i < k; ++i) expected += std::pow(std::sqrt(da[i]) - std::sqrt(db[i]), 2);
  c.near(frechet_distance(diagonal({0, 0, 0, 0}, da), diagonal({0, 0, 0, 0}, db)), expected, 1e-6, "frechet diagonal");
  return from_checks(c, fmt("%d overlap, %d hd95, %d temporal instances", overlap, surface, temporal));
}

// ---------------------------------------------------------------------------
// 5. Guidance map

Outcome guidance() {
  Checks c;
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> gam(0.2, 3.0), sig(0.0, 3.0);
  std::uniform_int_distribution<int> dim(1, 16);
  for (int trial = 0; trial < 300; ++trial) {
    const int h = dim(rng), w = dim(rng), n_classes = 2 + trial % 7;
    AnatomicalMask mask;
    mask.height = h;
    mask.width = w;
    mask.n_classes = n_classes;
    std::uniform_int_distribution<int> lab(0, n_classes - 1);
    for (int i = 0; i < h * w; ++i) mask.labels.push_back(static_cast<std::uint8_t>(lab(rng)));
    auto frame = oracle::random_image(h, w, rng);
    if (trial % 5 == 0) std::fill(frame.pixels.begin(), frame.pixels.end(), 0.3f);
    const auto g = guidance_map(frame, mask, gam(rng), sig(rng));
    const auto norm = normalize_mask(mask);
    for (std::size_t i = 0; i < g.size(); ++i) {
      c.expect(g.pixels[i] >= 0.0f && g.pixels[i] <= 1.0f, fmt("trial %d out of range", trial));
      if (mask.labels[i] > 0) c.expect(g.pixels[i] == norm.pixels[i], fmt("trial %d foreground", trial));
    }

    // γ=1, σ=0 on an already normalized frame leaves the background untouched
    auto unit = oracle::random_image(h, w, rng);
    unit.pixels[0] = 0.0f;
    if (unit.pixels.size() > 1) unit.pixels[1] = 1.0f;
    const auto id = guidance_map(unit, mask, 1.0, 0.0);
    for (std::size_t i = 0; i < id.size(); ++i)
      c.expect(id.pixels[i] == (mask.labels[i] > 0 ? norm.pixels[i] : unit.pixels[i]), fmt("trial %d identity", trial));
  }
  return from_checks(c, "300 random masks and frames");
}

// ---------------------------------------------------------------------------
// 6-10. End to end on phantoms

struct Experiment {
  fs::path work;
  RunConfig cfg;
  fs::path data() const { return work / "data"; }
  RunDir full() const { return {work / "full"}; }
  RunDir no_dag() const { return {work / "no_dag"}; }

  RunConfig no_dag_config() const {
    auto c = cfg;
    c.trainer.anatomical_guidance = false;
    c.ofg.anatomical_guidance = false;
    c.ofg.markovian_baseline = true;
    return c;
  }

  std::optional<TrainState> full_state;
  double full_seconds = 0;
  bool no_dag_trained = false;

  void ensure_data() {
    if (!fs::exists(data() / "manifest.tsv")) cmd_phantom(cfg, data(), 25);
  }
  const TrainState& train_full() {
    ensure_data();
    if (!full_state) {
      const auto t0 = Clock::now();
      full_state = cmd_train(cfg, data(), full().root);
      full_seconds = seconds_since(t0);
    }
    return *full_state;
  }
  void train_no_dag() {
    ensure_data();
    if (!no_dag_trained) cmd_train(no_dag_config(), data(), no_dag().root);
    no_dag_trained = true;
  }
};

RunConfig experiment_config() {
  RunConfig cfg;
  set_seed(cfg, 7);
  cfg.trainer.lr_init = 1e-3;
  return cfg;
}

Outcome training_progress(Experiment& ex) {
  const auto& st = ex.train_full();
  Checks c;
  const auto split = read_split(ex.data());
  c.expect(split.train.size() == 20, fmt("%zu training phantoms", split.train.size()));
  c.expect(st.history.size() >= 20, "fewer than 20 steps");
  double first = 0, last = 0;
  for (std::size_t i = 0; i < 10; ++i) {
    first += st.history[i].loss / 10;
    last += st.history[st.history.size() - 1 - i].loss / 10;
  }
  c.expect(last <= 0.7 * first, fmt("last/first %.3f > 0.7", last / first));
  return from_checks(c, fmt("%zu steps, first-10 mean %.4f, last-10 mean %.4f, ratio %.3f, %.0f s", st.history.size(),
                            first, last, last / first, ex.full_seconds));
}

struct TestScores {
  int id = 0;
  EvalSummary ofg, markovian, unconditional;
};

const std::vector<TestScores>& test_scores(Experiment& ex) {
  static std::vector<TestScores> scores;
  if (!scores.empty()) return scores;
  ex.train_full();
  ex.train_no_dag();
  auto markovian = ex.cfg;
  markovian.ofg.markovian_baseline = true;
  const auto manifest = read_manifest(ex.data());
  for (int id : read_split(ex.data()).test) {
    const auto& e = manifest.at(static_cast<std::size_t>(id));
    const auto masks_path = ex.data() / e.masks;
    const auto masks = read_masks(masks_path.string());
    const std::vector<Volume> gt = {read_volume((ex.data() / e.volume).string())};
    auto run = [&](const RunConfig& cfg, const RunDir& dir, const std::string& tag) {
      const auto out = dir.samples() / fmt("%s_%04d.vol", tag.c_str(), id);
      cmd_sample(cfg, dir.final_checkpoint(), masks_path, e.report, out, masks.depth);
      return evaluate(read_volume(out.string()), masks, gt);
    };
    TestScores s;
    s.id = id;
    s.ofg = run(ex.cfg, ex.full(), "ofg");
    s.markovian = run(markovian, ex.full(), "markovian");
    s.unconditional = run(ex.no_dag_config(), ex.no_dag(), "unconditional");
    std::printf("    sequence %2d depth %2d | dice ofg %.3f markovian %.3f unconditional %.3f | flicker %.4f %.4f | "
                "t_coherence %.3f %.3f\n",
                id, masks.depth, s.ofg.fidelity.macro_dice, s.markovian.fidelity.macro_dice,
                s.unconditional.fidelity.macro_dice, s.ofg.flicker, s.markovian.flicker, s.ofg.t_coherence,
                s.markovian.t_coherence);
    scores.push_back(s);
  }
  return scores;
}

Outcome fidelity_ordering(Experiment& ex) {
  const auto& scores = test_scores(ex);
  Checks c;
  c.expect(scores.size() == 5, fmt("%zu held-out sequences", scores.size()));
  double ofg = 0, mark = 0, unc = 0;
  for (const auto& s : scores) {
    ofg += 100 * s.ofg.fidelity.macro_dice / scores.size();
    mark += 100 * s.markovian.fidelity.macro_dice / scores.size();
    unc += 100 * s.unconditional.fidelity.macro_dice / scores.size();
  }
  c.expect(ofg - mark >= 3, fmt("full - markovian = %.2f points < 3", ofg - mark));
  c.expect(mark - unc >= 3, fmt("markovian - unconditional = %.2f points < 3", mark - unc));
  return from_checks(c, fmt("macro-Dice full %.2f, markovian %.2f, unconditional %.2f", ofg, mark, unc));
}

Outcome coherence(Experiment& ex) {
  const auto& scores = test_scores(ex);
  int wins = 0;
  for (const auto& s : scores) wins += s.ofg.flicker < s.markovian.flicker && s.ofg.t_coherence < s.markovian.t_coherence;
  return {wins >= 4, fmt("OFG lower on both metrics for %d/%zu sequences", wins, scores.size())};
}

Outcome flexible_length(Experiment& ex) {
  ex.train_full();
  Checks c;
  auto spec = ex.cfg.phantom;
  spec.depth_min = spec.depth_max = 48;
  const auto p = generate_phantom(spec, 0);
  const auto masks_path = ex.full().samples() / "depth48.msk";
  write_masks(p.masks, masks_path.string());
  for (int len : {8, 24, 48}) {
    const auto out = ex.full().samples() / fmt("length_%02d.vol", len);
    cmd_sample(ex.cfg, ex.full().final_checkpoint(), masks_path, p.report, out, len);
    const auto vol = read_volume(out.string());
    c.expect(vol.depth == len && vol.height == spec.height && vol.width == spec.width, fmt("length %d dims", len));
    const auto seg = resegment(vol, default_bands(spec.n_classes), spec.n_classes);
    c.expect(seg.depth == len, fmt("length %d resegment depth", len));
    for (auto l : seg.labels) c.expect(l < spec.n_classes, fmt("length %d label %d", len, int(l)));
  }
  return from_checks(c, "depths 8, 24, 48 from " + ex.full().final_checkpoint().filename().string());
}

Outcome gt_self_eval(Experiment& ex) {
  ex.ensure_data();
  Checks c;
  const auto e = read_manifest(ex.data()).front();
  const auto vol = ex.data() / e.volume;
  const auto s = cmd_eval(ex.cfg, vol, ex.data() / e.masks, {vol}, ex.work / "gt_eval");
  c.expect(s.fidelity.macro_dice == 1.0, fmt("DC %.17g", s.fidelity.macro_dice));
  c.expect(s.fidelity.macro_jaccard == 1.0, fmt("JI %.17g", s.fidelity.macro_jaccard));
  c.expect(s.fidelity.macro_hd95 == 0.0, fmt("95HD %.17g", s.fidelity.macro_hd95));
  c.expect(s.frechet <= 1e-6, fmt("FD %.3g", s.frechet));
  return from_checks(c, fmt("DC %.4f JI %.4f 95HD %.2f FD %.2e", s.fidelity.macro_dice, s.fidelity.macro_jaccard,
                            s.fidelity.macro_hd95, s.frechet));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::string work = (fs::temp_directory_path() / "pairdiff_acceptance").string();
  bool keep = false;
  std::vector<int> only;
  app.add_option("--work", work, "scratch directory for phantoms, runs and samples");
  app.add_flag("--keep", keep, "keep the scratch directory");
  app.add_option("--only", only, "criteria to run")->check(CLI::Range(1, 10));
  CLI11_PARSE(app, argc, argv);

  Experiment ex{work, experiment_config()};
  fs::remove_all(ex.work);
  fs::create_directories(ex.work);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"autodiff gradients", autodiff},
      {"diffusion math", diffusion_math},
      {"pair enumeration", pairing},
      {"metric oracles", metrics},
      {"guidance map", guidance},
      {"training progress", [&] { return training_progress(ex); }},
      {"fidelity ordering", [&] { return fidelity_ordering(ex); }},
      {"coherence", [&] { return coherence(ex); }},
      {"flexible length", [&] { return flexible_length(ex); }},
      {"ground-truth self-evaluation", [&] { return gt_self_eval(ex); }},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    const auto t0 = Clock::now();
    Outcome r;
    try {
      r = criteria[i].second();
    } catch (const std::exception& e) {
      r = {false, std::string("exception: ") + e.what()};
    }
    failed += !r.pass;
    std::printf("criterion %2d %s  %s (%.1f s): %s\n", id, r.pass ? "PASS" : "FAIL", criteria[i].first.c_str(),
                seconds_since(t0), r.detail.c_str());
    std::fflush(stdout);
  }
  if (!keep) fs::remove_all(ex.work);
  return failed == 0 ? 0 : 1;
}
