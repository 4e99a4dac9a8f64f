// SPDX-License-Identifier: Apache-2.0
#include "pairdiff/denoiser.hpp"

#include <cmath>
#include <random>

#include "pairdiff/error.hpp"
#include "pairdiff/ops.hpp"
#include "pairdiff/pairing.hpp"

namespace pairdiff {

void DenoiserConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("denoiser: " + msg); };
  if (channels < 1) fail("channels must be >= 1");
  if (base_width < 8) fail("base_width must be >= 8");
  if (depth != 2 && depth != 3) fail("depth must be 2 or 3");
  if (d_model != level_width(depth - 1)) {
    fail("d_model (" + std::to_string(d_model) + ") must equal bottleneck width " +
         std::to_string(level_width(depth - 1)));
  }
  if (c_f != base_width) fail("c_f must equal base_width (flow features join level 0)");
  if (d_pos <= 0 || d_pos % 2) fail("d_pos must be positive and even");
  if (time_dim <= 0 || time_dim % 2) fail("time_dim must be positive and even");
  if (d_text < 8) fail("d_text must be >= 8");
  if (text_hidden < 1 || embed_hidden < 1) fail("hidden widths must be positive");
  if (n_classes < 2) fail("n_classes must be >= 2");
  if (groups < 1 || base_width % groups) fail("groups must divide base_width");
}

template <typename T>
void BasicParameterSet<T>::add(std::string name, BasicTensor<T> tensor) {
  if (contains(name)) throw ContractError("duplicate parameter name " + name);
  index_.emplace(name, tensors_.size());
  names_.push_back(std::move(name));
  tensors_.push_back(std::move(tensor));
}

template <typename T>
const BasicTensor<T>& BasicParameterSet<T>::operator[](std::string_view name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter " + std::string(name));
  return tensors_[it->second];
}

template <typename T>
BasicTensor<T>& BasicParameterSet<T>::at(std::string_view name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter " + std::string(name));
  return tensors_[it->second];
}

template <typename T>
void BasicParameterSet<T>::set_requires_grad(bool value) {
  for (auto& t : tensors_) t.set_requires_grad(value);
}

template <typename T>
void BasicParameterSet<T>::zero_grad() {
  for (auto& t : tensors_) t.zero_grad();
}

template class BasicParameterSet<float>;
template class BasicParameterSet<double>;

std::vector<std::pair<std::string, Shape>> parameter_shapes(const DenoiserConfig& cfg) {
  cfg.validate();
  std::vector<std::pair<std::string, Shape>> out;
  auto conv = [&](const std::string& name, std::int64_t o, std::int64_t i) {
    out.push_back({name + ".w", Shape{o, i, 3, 3}});
    out.push_back({name + ".b", Shape{o}});
  };
  auto norm = [&](const std::string& name, std::int64_t c) {
    out.push_back({name + ".g", Shape{c}});
    out.push_back({name + ".b", Shape{c}});
  };
  auto lin = [&](const std::string& name, std::int64_t f, std::int64_t g) {
    out.push_back({name + ".w", Shape{f, g}});
    out.push_back({name + ".b", Shape{g}});
  };
  const int c0 = cfg.level_width(0);
  conv("stem", c0, cfg.in_channels());
  lin("embed", cfg.time_dim + 2 * cfg.d_pos, cfg.embed_hidden);
  int prev = c0;
  for (int l = 0; l < cfg.depth; ++l) {
    const int c = cfg.level_width(l);
    const std::string p = "level" + std::to_string(l);
    conv(p + ".down", c, prev);
    norm(p + ".norm_a", c);
    lin(p + ".emb", cfg.embed_hidden, c);
    conv(p + ".conv", c, c);
    norm(p + ".norm_b", c);
    prev = c;
  }
  for (int l = cfg.depth - 2; l >= 0; --l) {
    const std::string p = "up" + std::to_string(l);
    conv(p + ".conv", cfg.level_width(l), cfg.level_width(l + 1) + cfg.level_width(l));
    norm(p + ".norm", cfg.level_width(l));
  }
  conv("up_stem.conv", c0, 2 * c0);
  norm("up_stem.norm", c0);
  conv("out", cfg.out_channels(), c0);
  lin("text.l1", cfg.d_text, cfg.text_hidden);
  lin("text.l2", cfg.text_hidden, cfg.d_model);
  conv("flow.c1", cfg.c_f, 2);
  conv("flow.c2", cfg.c_f, cfg.c_f);
  return out;
}

DenoiserWeights init_weights(const DenoiserConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  DenoiserWeights w;
  const auto shapes = parameter_shapes(cfg);
  for (std::size_t idx = 0; idx < shapes.size(); ++idx) {
    const auto& [name, shape] = shapes[idx];
    const auto n = static_cast<std::size_t>(shape_numel(shape));
    std::vector<float> data(n);
    const bool is_norm = name.find("norm") != std::string::npos;
    if (is_norm) {
      const float v = name.ends_with(".g") ? 1.0f : 0.0f;
      std::fill(data.begin(), data.end(), v);
    } else {
      // fan-in comes from the weight shape; a bias shares it with its weight
      const Shape& ws = name.ends_with(".b") ? shapes[idx - 1].second : shape;
      const double fan_in = ws.size() == 4 ? static_cast<double>(ws[1] * ws[2] * ws[3])
                                           : static_cast<double>(ws[0]);
      const double bound = 1.0 / std::sqrt(fan_in);
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (auto& v : data) v = static_cast<float>(dist(rng));
    }
    w.add(name, Tensor(shape, std::move(data)));
  }
  return w;
}

std::vector<NamedTensor> to_named(const DenoiserWeights& weights) {
  std::vector<NamedTensor> out;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    out.emplace_back(weights.names()[i], weights.tensors()[i].clone());
  }
  return out;
}

DenoiserWeights from_named(const std::vector<NamedTensor>& tensors) {
  DenoiserWeights w;
  for (const auto& [name, t] : tensors) w.add(name, t.clone());
  return w;
}

void check_weights(const DenoiserConfig& cfg, const DenoiserWeights& weights) {
  for (const auto& [name, shape] : parameter_shapes(cfg)) {
    if (!weights.contains(name)) throw ConfigError("weights missing parameter " + name);
    if (weights[name].shape() != shape) {
      throw ConfigError("parameter " + name + " has shape " + shape_str(weights[name].shape()) +
                        ", config expects " + shape_str(shape));
    }
  }
}

namespace {

template <typename T>
BasicTensor<T> keep_mask(const Shape& shape, const std::vector<std::uint8_t>& keep) {
  const auto per = shape_numel(shape) / shape[0];
  std::vector<T> data(static_cast<std::size_t>(shape_numel(shape)));
  for (std::int64_t s = 0; s < shape[0]; ++s) {
    std::fill_n(data.begin() + s * per, per, keep[static_cast<std::size_t>(s)] ? T(1) : T(0));
  }
  return BasicTensor<T>(shape, std::move(data));
}

bool any_kept(const std::vector<std::uint8_t>& keep) {
  if (keep.empty()) return true;
  for (auto k : keep) {
    if (k) return true;
  }
  return false;
}

bool all_kept(const std::vector<std::uint8_t>& keep) {
  for (auto k : keep) {
    if (!k) return false;
  }
  return true;
}

template <typename T>
BasicTensor<T> maybe_drop(const BasicTensor<T>& x, const std::vector<std::uint8_t>& keep) {
  if (all_kept(keep)) return x;
  return ops::mul(x, keep_mask<T>(x.shape(), keep));
}

template <typename T>
BasicTensor<T> conv3(const BasicParameterSet<T>& w, const std::string& name,
                     const BasicTensor<T>& x, int stride = 1) {
  return ops::conv2d(x, w[name + ".w"], w[name + ".b"], stride, 1);
}

template <typename T>
BasicTensor<T> norm_silu(const DenoiserConfig& cfg, const BasicParameterSet<T>& w,
                         const std::string& name, const BasicTensor<T>& x) {
  return ops::silu(ops::group_norm(x, cfg.groups, w[name + ".g"], w[name + ".b"], 1e-5));
}

}  // namespace

template <typename T>
BasicTensor<T> denoiser_forward(const DenoiserConfig& cfg, const BasicParameterSet<T>& w,
                                const BasicTensor<T>& packed, std::span<const int> t,
                                const DenoiserExtras<T>& extras, const NoiseSchedule& sched) {
  if (packed.rank() != 4 || packed.dim(1) != cfg.in_channels()) {
    throw DimensionError("denoiser: packed input must be N x " + std::to_string(cfg.in_channels()) +
                         " x h x w, got " + shape_str(packed.shape()));
  }
  const auto n = packed.dim(0), h = packed.dim(2), wd = packed.dim(3);
  const std::int64_t div = std::int64_t{1} << cfg.depth;
  if (h % div != 0 || wd % div != 0) {
    throw ConfigError("denoiser: spatial dims " + std::to_string(h) + "x" + std::to_string(wd) +
                      " not divisible by 2^depth = " + std::to_string(div));
  }
  if (static_cast<std::int64_t>(t.size()) != n) {
    throw DimensionError("denoiser: " + std::to_string(t.size()) + " timesteps for batch of " +
                         std::to_string(n));
  }
  if (!extras.pos.defined() || extras.pos.rank() != 2 || extras.pos.dim(0) != n ||
      extras.pos.dim(1) != 2 * cfg.d_pos) {
    throw DimensionError("denoiser: pos must be N x " + std::to_string(2 * cfg.d_pos) + ", got " +
                         shape_str(extras.pos.shape()));
  }

  // timestep embedding (over t/T) concatenated with the pair position encoding
  const auto emb_in_dim = cfg.time_dim + 2 * cfg.d_pos;
  std::vector<T> emb_in(static_cast<std::size_t>(n * emb_in_dim));
  for (std::int64_t s = 0; s < n; ++s) {
    const auto te = positional_encoding(static_cast<double>(t[s]) / sched.steps(), cfg.time_dim, 1.0);
    T* row = emb_in.data() + s * emb_in_dim;
    for (int k = 0; k < cfg.time_dim; ++k) row[k] = static_cast<T>(te[k]);
    for (int k = 0; k < 2 * cfg.d_pos; ++k) row[cfg.time_dim + k] = extras.pos.data()[s * 2 * cfg.d_pos + k];
  }
  const BasicTensor<T> emb_input(Shape{n, emb_in_dim}, std::move(emb_in));
  const auto emb = ops::silu(ops::linear(emb_input, w["embed.w"], w["embed.b"]));

  BasicTensor<T> flow_feat;
  if (extras.flow.defined() && any_kept(extras.flow_keep)) {
    const FlowAdapterWeights<T> fa{w["flow.c1.w"], w["flow.c1.b"], w["flow.c2.w"], w["flow.c2.b"]};
    flow_feat = maybe_drop(adapt_flow(extras.flow, fa), extras.flow_keep);
  }
  BasicTensor<T> text_feat;
  if (extras.text.defined() && any_kept(extras.text_keep)) {
    const TextAdapterWeights<T> ta{w["text.l1.w"], w["text.l1.b"], w["text.l2.w"], w["text.l2.b"]};
    text_feat = maybe_drop(adapt_text(extras.text, ta), extras.text_keep);
  }

  const auto stem = conv3(w, "stem", packed);
  std::vector<BasicTensor<T>> skips;
  BasicTensor<T> x = stem;
  for (int l = 0; l < cfg.depth; ++l) {
    const std::string p = "level" + std::to_string(l);
    x = conv3(w, p + ".down", x, 2);
    auto hdn = norm_silu(cfg, w, p + ".norm_a", x);
    hdn = ops::add_channelwise(hdn, ops::linear(emb, w[p + ".emb.w"], w[p + ".emb.b"]));
    if (l == 0 && flow_feat.defined()) hdn = ops::add(hdn, flow_feat);
    if (l == cfg.depth - 1 && text_feat.defined()) hdn = ops::add_channelwise(hdn, text_feat);
    hdn = norm_silu(cfg, w, p + ".norm_b", conv3(w, p + ".conv", hdn));
    x = ops::add(x, hdn);
    skips.push_back(x);
  }
  for (int l = cfg.depth - 2; l >= 0; --l) {
    const std::string p = "up" + std::to_string(l);
    x = ops::concat_channels(ops::upsample_nearest2x(x), skips[static_cast<std::size_t>(l)]);
    x = norm_silu(cfg, w, p + ".norm", conv3(w, p + ".conv", x));
  }
  x = ops::concat_channels(ops::upsample_nearest2x(x), stem);
  x = norm_silu(cfg, w, "up_stem.norm", conv3(w, "up_stem.conv", x));
  // the head predicts v; ε follows from v and x_t at each sample's noise level
  const auto v = conv3(w, "out", x);
  std::vector<double> sa(static_cast<std::size_t>(n)), sb(static_cast<std::size_t>(n));
  for (std::int64_t s = 0; s < n; ++s) {
    const double ab = sched.alpha_bar(t[static_cast<std::size_t>(s)]);
    sa[static_cast<std::size_t>(s)] = std::sqrt(ab);
    sb[static_cast<std::size_t>(s)] = std::sqrt(1.0 - ab);
  }
  const auto xt = ops::slice_channels(packed, 0, 2 * cfg.channels);
  return ops::add(ops::scale_samples(v, sa), ops::scale_samples(xt, sb));
}

template BasicTensor<float> denoiser_forward(const DenoiserConfig&, const BasicParameterSet<float>&,
                                             const BasicTensor<float>&, std::span<const int>,
                                             const DenoiserExtras<float>&, const NoiseSchedule&);
template BasicTensor<double> denoiser_forward(const DenoiserConfig&,
                                              const BasicParameterSet<double>&,
                                              const BasicTensor<double>&, std::span<const int>,
                                              const DenoiserExtras<double>&, const NoiseSchedule&);

Denoiser::Denoiser(DenoiserConfig cfg, DenoiserWeights weights, NoiseSchedule sched)
    : cfg_(cfg), weights_(std::move(weights)), sched_(std::move(sched)) {
  cfg_.validate();
  check_weights(cfg_, weights_);
  weights_.set_requires_grad(false);
}

Tensor Denoiser::predict(const Tensor& packed, int t, const Tensor& pos, const Tensor& text) const {
  NoGradScope no_grad;
  DenoiserExtras<float> extras;
  extras.pos = pos;
  extras.text = text;
  const int ts[1] = {t};
  return denoiser_forward(cfg_, weights_, packed, std::span<const int>(ts, 1), extras, sched_);
}

}  // namespace pairdiff
