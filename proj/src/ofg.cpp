// SPDX-License-Identifier: Apache-2.0
#include "pairdiff/ofg.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "pairdiff/error.hpp"
#include "pairdiff/ops.hpp"
#include "pairdiff/pairing.hpp"
#include "pairdiff/seed.hpp"

namespace pairdiff {

void OFGConfig::validate() const {
  if (ddim_steps < 2) throw ConfigError("ofg.ddim_steps must be >= 2");
  if (!(gamma > 0.0)) throw ConfigError("ofg.gamma must be > 0");
  if (!(blur_sigma >= 0.0)) throw ConfigError("ofg.blur_sigma must be >= 0");
  if (!(lambda > 0.0)) throw ConfigError("ofg.lambda must be > 0");
}

namespace {

void check_plane(const Image& img, int h, int w, const char* what) {
  if (img.height != h || img.width != w || img.size() != static_cast<std::size_t>(h) * w) {
    throw DimensionError(std::string("sample_pair: ") + what + " is " + std::to_string(img.height) + "x" +
                         std::to_string(img.width) + ", expected " + std::to_string(h) + "x" + std::to_string(w));
  }
}

Image to_unit(std::span<const float> x, int h, int w) {
  Image img(h, w);
  for (std::size_t k = 0; k < img.size(); ++k) img.pixels[k] = std::clamp(0.5f * (x[k] + 1.0f), 0.0f, 1.0f);
  return img;
}

Image zeros_like(const AnatomicalMask& m) { return Image(m.height, m.width); }

AnatomicalMask background_only(const AnatomicalMask& m) {
  AnatomicalMask out = m;
  std::fill(out.labels.begin(), out.labels.end(), 0);
  return out;
}

}  // namespace

FramePair sample_pair(const NoisePredictor& net, const Image& cond_a, const Image& cond_b,
                      const std::vector<float>& pos, const TextEmbedding& text, const NoiseSchedule& sched,
                      const OFGConfig& cfg, std::uint64_t noise_seed) {
  cfg.validate();
  const int h = cond_a.height, w = cond_a.width;
  check_plane(cond_b, h, w, "cond_b");
  if (static_cast<int>(pos.size()) != 2 * net.pos_dim()) {
    throw DimensionError("sample_pair: pos has " + std::to_string(pos.size()) + " entries, expected " +
                         std::to_string(2 * net.pos_dim()));
  }
  if (!text.vec.empty() && static_cast<int>(text.vec.size()) != net.text_dim()) {
    throw DimensionError("sample_pair: text embedding has " + std::to_string(text.vec.size()) + " entries, expected " +
                         std::to_string(net.text_dim()));
  }
  const auto plane = static_cast<std::size_t>(h) * w;

  std::mt19937_64 rng(noise_seed);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  std::vector<float> init(2 * plane);
  for (auto& v : init) v = normal(rng);
  Tensor x(Shape{1, 2, h, w}, std::move(init));

  std::vector<float> cond_data(cond_a.pixels);
  cond_data.insert(cond_data.end(), cond_b.pixels.begin(), cond_b.pixels.end());
  const Tensor cond(Shape{1, 2, h, w}, std::move(cond_data));
  const Tensor pos_t(Shape{1, static_cast<std::int64_t>(pos.size())}, pos);
  Tensor text_t;
  if (!text.vec.empty()) text_t = Tensor(Shape{1, static_cast<std::int64_t>(text.vec.size())}, text.vec);

  NoGradScope no_grad;
  const auto ts = ddim_timesteps(sched.steps(), cfg.ddim_steps);
  for (std::size_t s = 0; s < ts.size(); ++s) {
    const int t = ts[s];
    const int t_prev = s + 1 < ts.size() ? ts[s + 1] : 0;
    Tensor eps = net.predict(ops::concat_channels(x, cond), t, pos_t, text_t);
    if (cfg.clip_x0) {
      // replace ε by the value consistent with the clamped x0 estimate
      const double ab = sched.alpha_bar(t);
      const double sa = std::sqrt(ab), sb = std::sqrt(1.0 - ab);
      auto e = eps.mutable_data();
      const auto xt = x.data();
      for (std::size_t k = 0; k < e.size(); ++k) {
        const double x0 = std::clamp((xt[k] - sb * e[k]) / sa, -1.0, 1.0);
        e[k] = static_cast<float>((xt[k] - sa * x0) / sb);
      }
    }
    x = ddim_step(x, t, t_prev, eps, sched);
  }
  const auto out = x.data();
  return FramePair{to_unit(out.subspan(0, plane), h, w), to_unit(out.subspan(plane, plane), h, w)};
}

Volume generate_volume(const NoisePredictor& net, const std::vector<AnatomicalMask>& masks, std::string_view report,
                       const NoiseSchedule& sched, const OFGConfig& cfg, GenerationStats* stats) {
  cfg.validate();
  if (masks.size() < 2) throw ContractError("generate_volume: need at least 2 masks, got " + std::to_string(masks.size()));
  const int h = masks.front().height, w = masks.front().width;
  for (std::size_t n = 0; n < masks.size(); ++n) {
    if (masks[n].height != h || masks[n].width != w || masks[n].labels.size() != static_cast<std::size_t>(h) * w) {
      throw ContractError("generate_volume: mask " + std::to_string(n) + " differs in size from mask 0");
    }
  }
  const int big_n = static_cast<int>(masks.size()) - 1;
  GenerationStats local;
  GenerationStats& st = stats ? *stats : local;
  st = {};

  const TextEmbedding text = cfg.anatomical_guidance ? text_embed(report, net.text_dim()) : TextEmbedding{};
  auto cond_of = [&](int n) {
    return cfg.anatomical_guidance ? normalize_mask(masks[n]) : zeros_like(masks[n]);
  };
  auto guide = [&](const Image& frame, int n) {
    return guidance_map(frame, cfg.anatomical_guidance ? masks[n] : background_only(masks[n]), cfg.gamma,
                        cfg.blur_sigma);
  };
  auto run = [&](const Image& ca, const Image& cb, int i, int j, int stream) {
    ++st.ddim_chains;
    const auto pos = pair_position(i, j, 0, big_n, net.pos_dim(), cfg.lambda);
    return sample_pair(net, ca, cb, pos, text, sched, cfg, derive_seed(cfg.seed, static_cast<std::uint64_t>(stream)));
  };

  std::vector<Image> frames(masks.size());
  if (!cfg.paired_frames) {
    for (int n = 0; n <= big_n; ++n) {
      const auto c = cond_of(n);
      frames[n] = run(c, c, n, n, n).a;
    }
  } else if (cfg.markovian_baseline) {
    for (int n = 0; n < big_n; ++n) {
      auto [a, b] = run(cond_of(n), cond_of(n + 1), n, n + 1, n);
      frames[n] = std::move(a);
      frames[n + 1] = std::move(b);
    }
  } else {
    auto [a0, a1] = run(cond_of(0), cond_of(1), 0, 1, 0);
    frames[0] = std::move(a0);
    frames[1] = std::move(a1);
    for (int n = 1; n < big_n; ++n) {
      const auto g_n = guide(frames[n], n);
      const auto provisional = run(g_n, cond_of(n + 1), n, n + 1, n);
      const auto g_next = guide(cfg.literal_guidance ? provisional.a : provisional.b, n + 1);
      auto [xn, xnext] = run(g_n, g_next, n, n + 1, n);
      frames[n] = std::move(xn);
      frames[n + 1] = std::move(xnext);
    }
  }
  return reassemble(frames, Spacing{1.0f, 1.0f, 1.0f});
}

Volume reassemble(const std::vector<Image>& frames, const Spacing& spacing) {
  if (frames.empty()) throw ContractError("reassemble: no frames");
  Volume v;
  v.height = frames.front().height;
  v.width = frames.front().width;
  v.depth = static_cast<int>(frames.size());
  v.spacing = spacing;
  v.voxels.reserve(v.slice_size() * frames.size());
  for (std::size_t n = 0; n < frames.size(); ++n) {
    const auto& f = frames[n];
    if (f.height != v.height || f.width != v.width || f.size() != v.slice_size()) {
      throw ContractError("reassemble: frame " + std::to_string(n) + " is " + std::to_string(f.height) + "x" +
                          std::to_string(f.width) + ", frame 0 is " + std::to_string(v.height) + "x" +
                          std::to_string(v.width));
    }
    for (float p : f.pixels) v.voxels.push_back(std::clamp(p, 0.0f, 1.0f));
  }
  return v;
}

std::vector<AnatomicalMask> mask_slices(const MaskVolume& masks, int count) {
  if (count < 1 || count > masks.depth) {
    throw ContractError("mask_slices: requested " + std::to_string(count) + " slices from a depth-" +
                        std::to_string(masks.depth) + " mask volume");
  }
  std::vector<AnatomicalMask> out;
  for (int z = 0; z < count; ++z) out.push_back(masks.slice(z));
  return out;
}

}  // namespace pairdiff
