// SPDX-License-Identifier: Apache-2.0
#include "pairdiff/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "pairdiff/conditioning.hpp"
#include "pairdiff/error.hpp"
#include "pairdiff/seed.hpp"

namespace pairdiff {

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("trainer.epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("trainer.batch_size must be >= 1");
  if (!(lr_init > 0.0)) throw ConfigError("trainer.lr_init must be > 0");
  if (!(lr_min >= 0.0) || lr_min > lr_init) throw ConfigError("trainer.lr_min must lie in [0, trainer.lr_init]");
  if (warmup_steps < 0) throw ConfigError("trainer.warmup_steps must be >= 0");
  if (!(weight_decay >= 0.0)) throw ConfigError("trainer.weight_decay must be >= 0");
  if (skip_set.empty()) throw ConfigError("trainer.skip_set must be nonempty");
  for (int k : skip_set)
    if (k < 1) throw ConfigError("trainer.skip_set entries must be >= 1");
  if (!(dropout_p >= 0.0 && dropout_p <= 1.0)) throw ConfigError("trainer.dropout_p must lie in [0, 1]");
  if (!(guidance_p >= 0.0 && guidance_p <= 1.0)) throw ConfigError("trainer.guidance_p must lie in [0, 1]");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("trainer.beta1 and trainer.beta2 must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw ConfigError("trainer.adam_eps must be > 0");
  if (!(grad_clip >= 0.0)) throw ConfigError("trainer.grad_clip must be >= 0");
  if (!(guidance_gamma > 0.0) || !(guidance_blur >= 0.0)) {
    throw ConfigError("trainer.guidance_gamma must be > 0 and trainer.guidance_blur >= 0");
  }
  if (checkpoint_every < 0) throw ConfigError("trainer.checkpoint_every must be >= 0");
}

OptimizerState make_optimizer_state(const DenoiserWeights& weights) {
  OptimizerState s;
  for (const auto& t : weights.tensors()) {
    s.m.emplace_back(static_cast<std::size_t>(t.numel()), 0.0f);
    s.v.emplace_back(static_cast<std::size_t>(t.numel()), 0.0f);
  }
  return s;
}

void adamw_step(DenoiserWeights& weights, OptimizerState& state, double lr, const AdamWParams& p) {
  if (state.m.size() != weights.size() || state.v.size() != weights.size()) {
    throw ContractError("adamw_step: optimizer state does not match the parameter set");
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(p.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(p.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < weights.size(); ++i) {
    auto& t = weights.tensors()[i];
    auto w = t.mutable_data();
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (m.size() != w.size() || v.size() != w.size()) {
      throw ContractError("adamw_step: buffer size mismatch for " + weights.names()[i]);
    }
    const auto g = t.grad();
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double gk = g.empty() ? 0.0 : g[k];
      double wk = w[k] * (1.0 - lr * p.weight_decay);
      m[k] = static_cast<float>(p.beta1 * m[k] + (1.0 - p.beta1) * gk);
      v[k] = static_cast<float>(p.beta2 * v[k] + (1.0 - p.beta2) * gk * gk);
      wk -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + p.eps);
      w[k] = static_cast<float>(wk);
    }
  }
}

double clip_grad_norm(DenoiserWeights& weights, double max_norm) {
  double sq = 0.0;
  for (const auto& t : weights.tensors())
    for (float g : t.grad()) sq += static_cast<double>(g) * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const auto f = static_cast<float>(max_norm / norm);
    for (auto& t : weights.tensors())
      if (t.has_grad())
        for (float& g : t.mutable_grad()) g *= f;
  }
  return norm;
}

double lr_at(std::int64_t step, const TrainConfig& cfg, std::int64_t total_steps) {
  if (step < 0 || step > total_steps) {
    throw ContractError("lr_at: step " + std::to_string(step) + " outside [0, " + std::to_string(total_steps) + "]");
  }
  if (step < cfg.warmup_steps) return cfg.lr_init * static_cast<double>(step) / cfg.warmup_steps;
  const auto decay = total_steps - cfg.warmup_steps;
  if (decay <= 0) return cfg.lr_init;
  const double progress = static_cast<double>(step - cfg.warmup_steps) / static_cast<double>(decay);
  return cfg.lr_min + 0.5 * (cfg.lr_init - cfg.lr_min) * (1.0 + std::cos(3.14159265358979323846 * progress));
}

std::vector<DatasetPair> dataset_pairs(const std::vector<Phantom>& data, const TrainConfig& cfg) {
  std::vector<DatasetPair> out;
  for (std::size_t v = 0; v < data.size(); ++v) {
    const int d = data[v].volume.depth;
    if (cfg.paired_frames) {
      for (const auto& idx : enumerate_pairs(d, cfg.skip_set)) out.push_back({static_cast<int>(v), idx});
    } else {
      for (int i = 0; i < d; ++i) out.push_back({static_cast<int>(v), FramePairIndex{i, i, 0}});
    }
  }
  return out;
}

std::int64_t steps_per_epoch(std::size_t n_pairs, int batch_size) {
  return static_cast<std::int64_t>((n_pairs + static_cast<std::size_t>(batch_size) - 1) / static_cast<std::size_t>(batch_size));
}

namespace {

constexpr std::uint64_t kShuffleStream = 0x5348;
constexpr std::uint64_t kStepStream = 0x5354;
constexpr int kFlowIters = 100;
constexpr double kFlowAlpha = 10.0;

struct Prepared {
  PairSample sample;
  Tensor guided;  // guidance maps of both ground-truth frames, 2×h×w
};

Tensor stack2(const Image& a, const Image& b) {
  std::vector<float> v(a.pixels);
  v.insert(v.end(), b.pixels.begin(), b.pixels.end());
  return Tensor(Shape{2, a.height, a.width}, std::move(v));
}

Prepared prepare(const Phantom& p, const FramePairIndex& idx, const TrainConfig& cfg, const DenoiserConfig& dcfg) {
  Prepared out;
  PackOptions opts;
  opts.d_pos = dcfg.d_pos;
  opts.d_text = dcfg.d_text;
  opts.flow_alpha = kFlowAlpha;
  opts.flow_iters = kFlowIters;
  if (idx.i < idx.j) {
    out.sample = pack_pair(p.volume, p.masks, idx, p.report, opts);
  } else {
    // single-frame ablation: the frame is duplicated and the flow is zero
    const Image f = p.volume.slice(idx.i);
    const Image m = normalize_mask(p.masks.slice(idx.i));
    out.sample.index = idx;
    out.sample.frames = stack2(f, f);
    out.sample.cond_maps = stack2(m, m);
    out.sample.flow = FlowField{f.height, f.width, std::vector<float>(f.size()), std::vector<float>(f.size())};
    out.sample.text = text_embed(p.report, dcfg.d_text);
    out.sample.pos = pair_position(idx.i, idx.i, 0, std::max(1, p.volume.depth - 1), dcfg.d_pos, 1.0);
  }
  const auto gi = guidance_map(p.volume.slice(out.sample.index.i), p.masks.slice(out.sample.index.i),
                               cfg.guidance_gamma, cfg.guidance_blur);
  const auto gj = guidance_map(p.volume.slice(out.sample.index.j), p.masks.slice(out.sample.index.j),
                               cfg.guidance_gamma, cfg.guidance_blur);
  out.guided = stack2(gi, gj);
  return out;
}

std::string batch_ids(const std::vector<DatasetPair>& pairs, const std::vector<std::size_t>& batch) {
  std::ostringstream os;
  for (std::size_t k = 0; k < batch.size(); ++k) {
    const auto& p = pairs[batch[k]];
    os << (k ? " " : "") << p.volume << ":" << p.index.i << "-" << p.index.j;
  }
  return os.str();
}

}  // namespace

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::int64_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(derive_seed(derive_seed(seed, kShuffleStream), static_cast<std::uint64_t>(epoch)));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

TrainState train(const std::vector<Phantom>& data, const TrainConfig& cfg, const DenoiserConfig& dcfg,
                 const NoiseSchedule& sched, const TrainHooks& hooks, const TrainState* resume) {
  cfg.validate();
  dcfg.validate();
  if (data.empty()) throw ContractError("train: dataset is empty");
  if (dcfg.channels != 1) throw ConfigError("train: only single-channel frames are supported");

  TrainState state;
  if (resume) {
    state = TrainState{resume->weights.clone(), resume->optimizer, resume->history};
    check_weights(dcfg, state.weights);
    if (state.optimizer.m.empty()) state.optimizer = make_optimizer_state(state.weights);
  } else {
    state.weights = init_weights(dcfg, cfg.seed);
    state.optimizer = make_optimizer_state(state.weights);
  }

  const auto pairs = dataset_pairs(data, cfg);
  if (pairs.empty()) throw ContractError("train: no pairs; volumes are too shallow for the skip set");
  std::vector<Prepared> prepared;
  prepared.reserve(pairs.size());
  for (const auto& p : pairs) prepared.push_back(prepare(data[static_cast<std::size_t>(p.volume)], p.index, cfg, dcfg));

  const auto per_epoch = steps_per_epoch(pairs.size(), cfg.batch_size);
  const auto total = per_epoch * cfg.epochs;
  const AdamWParams adam{cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay};
  const int h = data.front().volume.height, w = data.front().volume.width;
  const auto plane = static_cast<std::size_t>(h) * w;

  std::vector<std::size_t> order;
  std::int64_t order_epoch = -1;
  for (std::int64_t step = state.optimizer.step; step < total; ++step) {
    const auto epoch = step / per_epoch;
    if (epoch != order_epoch) {
      order = epoch_order(pairs.size(), cfg.seed, epoch);
      order_epoch = epoch;
    }
    const auto first = static_cast<std::size_t>((step % per_epoch) * cfg.batch_size);
    const auto last = std::min(order.size(), first + static_cast<std::size_t>(cfg.batch_size));
    const std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(first),
                                         order.begin() + static_cast<std::ptrdiff_t>(last));
    const auto n = static_cast<std::int64_t>(batch.size());

    std::mt19937_64 rng(derive_seed(derive_seed(cfg.seed, kStepStream), static_cast<std::uint64_t>(step)));
    std::uniform_int_distribution<int> pick_t(1, sched.steps());
    std::bernoulli_distribution drop(cfg.dropout_p), guide(cfg.guidance_p);
    std::normal_distribution<float> normal(0.0f, 1.0f);

    std::vector<float> x0, cond, eps, flows, texts, pos;
    std::vector<int> ts;
    DenoiserExtras<float> extras;
    for (auto b : batch) {
      const auto& s = prepared[b];
      for (float f : s.sample.frames.data()) x0.push_back(2.0f * f - 1.0f);
      for (int c = 0; c < 2; ++c) {
        const bool use_guide = guide(rng);
        const auto& src = use_guide ? s.guided : s.sample.cond_maps;
        for (std::size_t k = 0; k < plane; ++k) {
          cond.push_back(cfg.anatomical_guidance ? src.data()[c * plane + k] : 0.0f);
        }
      }
      ts.push_back(pick_t(rng));
      for (std::size_t k = 0; k < 2 * plane; ++k) eps.push_back(normal(rng));
      flows.insert(flows.end(), s.sample.flow.u.begin(), s.sample.flow.u.end());
      flows.insert(flows.end(), s.sample.flow.v.begin(), s.sample.flow.v.end());
      texts.insert(texts.end(), s.sample.text.vec.begin(), s.sample.text.vec.end());
      pos.insert(pos.end(), s.sample.pos.begin(), s.sample.pos.end());
      extras.flow_keep.push_back(!drop(rng));
      const bool keep_text = !drop(rng);
      extras.text_keep.push_back(cfg.anatomical_guidance && keep_text);
    }
    const Tensor x0_t(Shape{n, 2, h, w}, std::move(x0));
    const Tensor cond_t(Shape{n, 2, h, w}, std::move(cond));
    const Tensor eps_t(Shape{n, 2, h, w}, std::move(eps));
    extras.flow = Tensor(Shape{n, 2, h, w}, std::move(flows));
    extras.text = Tensor(Shape{n, dcfg.d_text}, std::move(texts));
    extras.pos = Tensor(Shape{n, 2 * dcfg.d_pos}, std::move(pos));

    const double lr = lr_at(step, cfg, total);
    state.weights.zero_grad();
    state.weights.set_requires_grad(true);
    double loss_value = 0.0;
    {
      Tape tape;
      TapeScope scope(tape);
      EpsFn<float> net = [&](const Tensor& packed, std::span<const int> t) {
        return denoiser_forward(dcfg, state.weights, packed, t, extras, sched);
      };
      const auto loss = ddpm_loss(net, x0_t, cond_t, ts, eps_t, sched);
      loss_value = loss.item();
      if (!std::isfinite(loss_value)) {
        throw NumericalError("train: non-finite loss at step " + std::to_string(step) + " (lr " +
                             std::to_string(lr) + ", batch " + batch_ids(pairs, batch) + ")");
      }
      backward(loss);
    }
    clip_grad_norm(state.weights, cfg.grad_clip);
    adamw_step(state.weights, state.optimizer, lr, adam);

    const LossRecord rec{step, lr, loss_value};
    state.history.push_back(rec);
    if (hooks.on_step) hooks.on_step(rec);
    if (hooks.on_checkpoint && cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0) {
      hooks.on_checkpoint(state);
    }
  }
  state.weights.zero_grad();
  state.weights.set_requires_grad(false);
  return state;
}

std::vector<NamedTensor> state_to_named(const TrainState& state) {
  auto out = to_named(state.weights);
  const auto& names = state.weights.names();
  for (std::size_t i = 0; i < names.size(); ++i) {
    const auto& shape = state.weights.tensors()[i].shape();
    out.emplace_back("opt.m/" + names[i], Tensor(shape, state.optimizer.m[i]));
    out.emplace_back("opt.v/" + names[i], Tensor(shape, state.optimizer.v[i]));
  }
  // exact for step counts below 2^24
  out.emplace_back("opt.step", Tensor(Shape{1}, {static_cast<float>(state.optimizer.step)}));
  return out;
}

TrainState state_from_named(const std::vector<NamedTensor>& tensors) {
  std::vector<NamedTensor> weights;
  std::map<std::string, const Tensor*> opt;
  for (const auto& [name, t] : tensors) {
    if (name.rfind("opt.", 0) == 0) {
      opt[name] = &t;
    } else {
      weights.emplace_back(name, t);
    }
  }
  TrainState s;
  s.weights = from_named(weights);
  s.optimizer = make_optimizer_state(s.weights);
  if (opt.empty()) return s;
  const auto step = opt.find("opt.step");
  if (step == opt.end()) throw FormatError("checkpoint: optimizer buffers without opt.step");
  s.optimizer.step = static_cast<std::int64_t>(step->second->item());
  for (std::size_t i = 0; i < s.weights.size(); ++i) {
    const auto& name = s.weights.names()[i];
    const auto m = opt.find("opt.m/" + name), v = opt.find("opt.v/" + name);
    if (m == opt.end() || v == opt.end()) throw FormatError("checkpoint: missing optimizer buffers for " + name);
    if (m->second->numel() != s.weights.tensors()[i].numel() || v->second->numel() != s.weights.tensors()[i].numel()) {
      throw FormatError("checkpoint: optimizer buffer size mismatch for " + name);
    }
    s.optimizer.m[i].assign(m->second->data().begin(), m->second->data().end());
    s.optimizer.v[i].assign(v->second->data().begin(), v->second->data().end());
  }
  return s;
}

void write_loss_csv(const std::string& path, const std::vector<LossRecord>& history) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path);
  out << "step,lr,loss\n" << std::setprecision(17);
  for (const auto& r : history) out << r.step << ',' << r.lr << ',' << r.loss << '\n';
  if (!out) throw FormatError("write failed for " + path);
}

std::vector<LossRecord> read_loss_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line != "step,lr,loss") throw FormatError(path + ": missing step,lr,loss header");
  std::vector<LossRecord> out;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream row(line);
    LossRecord r;
    char c1 = 0, c2 = 0;
    if (!(row >> r.step >> c1 >> r.lr >> c2 >> r.loss) || c1 != ',' || c2 != ',') {
      throw FormatError(path + ":" + std::to_string(lineno) + ": malformed row");
    }
    out.push_back(r);
  }
  return out;
}

}  // namespace pairdiff
