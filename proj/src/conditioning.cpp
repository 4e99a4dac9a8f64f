// SPDX-License-Identifier: Apache-2.0
#include "pairdiff/conditioning.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <string>

#include "pairdiff/error.hpp"
#include "pairdiff/seed.hpp"

namespace pairdiff {

namespace {

void require_same_dims(const Image& a, const Image& b, const char* op) {
  if (a.height != b.height || a.width != b.width) {
    throw DimensionError(std::string(op) + ": image dims " + std::to_string(a.height) + "x" +
                         std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" +
                         std::to_string(b.width));
  }
}

// scipy-style "reflect": (d c b a | a b c d | d c b a)
int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * n;
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - 1 - i;
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

struct Gradients {
  std::vector<double> ix, iy, it;
};

Gradients image_gradients(const Image& a, const Image& b) {
  const int h = a.height, w = a.width;
  Gradients g;
  g.ix.resize(a.size());
  g.iy.resize(a.size());
  g.it.resize(a.size());
  auto dx = [&](const Image& img, int y, int x) {
    const int x0 = std::max(x - 1, 0), x1 = std::min(x + 1, w - 1);
    return x1 == x0 ? 0.0 : (img.at(y, x1) - img.at(y, x0)) / static_cast<double>(x1 - x0);
  };
  auto dy = [&](const Image& img, int y, int x) {
    const int y0 = std::max(y - 1, 0), y1 = std::min(y + 1, h - 1);
    return y1 == y0 ? 0.0 : (img.at(y1, x) - img.at(y0, x)) / static_cast<double>(y1 - y0);
  };
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const auto i = static_cast<std::size_t>(y) * w + x;
      g.ix[i] = kFlowIntensityScale * 0.5 * (dx(a, y, x) + dx(b, y, x));
      g.iy[i] = kFlowIntensityScale * 0.5 * (dy(a, y, x) + dy(b, y, x));
      g.it[i] = kFlowIntensityScale * (static_cast<double>(b.pixels[i]) - a.pixels[i]);
    }
  }
  return g;
}

}  // namespace

Image normalize_mask(const AnatomicalMask& mask) {
  if (mask.n_classes < 2) throw ContractError("normalize_mask: n_classes must be >= 2");
  Image out(mask.height, mask.width);
  const float denom = static_cast<float>(mask.n_classes - 1);
  for (std::size_t i = 0; i < mask.labels.size(); ++i) {
    if (mask.labels[i] >= mask.n_classes) {
      throw ContractError("normalize_mask: label " + std::to_string(mask.labels[i]) +
                          " >= n_classes " + std::to_string(mask.n_classes));
    }
    out.pixels[i] = static_cast<float>(mask.labels[i]) / denom;
  }
  return out;
}

Image gaussian_blur(const Image& img, double sigma) {
  if (sigma < 0.0) throw ContractError("gaussian_blur: sigma must be >= 0");
  if (sigma == 0.0) return img;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (int k = -radius; k <= radius; ++k) {
    const double v = std::exp(-0.5 * k * k / (sigma * sigma));
    kernel[k + radius] = v;
    total += v;
  }
  for (auto& v : kernel) v /= total;

  const int h = img.height, w = img.width;
  std::vector<double> tmp(img.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) acc += kernel[k + radius] * img.at(y, reflect_index(x + k, w));
      tmp[static_cast<std::size_t>(y) * w + x] = acc;
    }
  }
  Image out(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) {
        acc += kernel[k + radius] * tmp[static_cast<std::size_t>(reflect_index(y + k, h)) * w + x];
      }
      out.at(y, x) = static_cast<float>(acc);
    }
  }
  return out;
}

Image minmax_normalize(const Image& img) {
  Image out(img.height, img.width);
  if (img.pixels.empty()) return out;
  const auto [lo, hi] = std::minmax_element(img.pixels.begin(), img.pixels.end());
  const float mn = *lo, mx = *hi;
  if (!(mx > mn)) return out;
  for (std::size_t i = 0; i < img.size(); ++i) out.pixels[i] = (img.pixels[i] - mn) / (mx - mn);
  return out;
}

GuidanceMap guidance_map(const Image& frame, const AnatomicalMask& mask, double gamma,
                         double blur_sigma) {
  if (!(gamma > 0.0)) throw ContractError("guidance_map: gamma must be > 0");
  if (frame.height != mask.height || frame.width != mask.width) {
    throw DimensionError("guidance_map: frame and mask dims differ");
  }
  Image powered(frame.height, frame.width);
  for (std::size_t i = 0; i < frame.size(); ++i) {
    const double v = std::clamp(static_cast<double>(frame.pixels[i]), 0.0, 1.0);
    powered.pixels[i] = static_cast<float>(gamma == 1.0 ? v : std::pow(v, gamma));
  }
  const Image xhat = minmax_normalize(gaussian_blur(powered, blur_sigma));
  const Image m = normalize_mask(mask);
  GuidanceMap g(frame.height, frame.width);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const float v = mask.labels[i] > 0 ? m.pixels[i] : xhat.pixels[i];
    g.pixels[i] = std::clamp(v, 0.0f, 1.0f);
  }
  return g;
}

FlowField horn_schunck_flow(const Image& a, const Image& b, double alpha, int iters) {
  require_same_dims(a, b, "horn_schunck_flow");
  if (!(alpha > 0.0)) throw ContractError("horn_schunck_flow: alpha must be > 0");
  if (iters < 1) throw ContractError("horn_schunck_flow: iters must be >= 1");
  const int h = a.height, w = a.width;
  const auto g = image_gradients(a, b);
  const double a2 = alpha * alpha;
  std::vector<double> u(a.size(), 0.0), v(a.size(), 0.0);
  for (int it = 0; it < iters; ++it) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const auto i = static_cast<std::size_t>(y) * w + x;
        double su = 0.0, sv = 0.0;
        int n = 0;
        auto visit = [&](std::size_t j) {
          su += u[j];
          sv += v[j];
          ++n;
        };
        if (x > 0) visit(i - 1);
        if (x + 1 < w) visit(i + 1);
        if (y > 0) visit(i - w);
        if (y + 1 < h) visit(i + w);
        if (n == 0) {  // 1x1 image: only the data term
          const double den = g.ix[i] * g.ix[i] + g.iy[i] * g.iy[i];
          if (den > 0.0) {
            u[i] = -g.ix[i] * g.it[i] / den;
            v[i] = -g.iy[i] * g.it[i] / den;
          }
          continue;
        }
        const double ub = su / n, vb = sv / n;
        const double r = g.ix[i] * ub + g.iy[i] * vb + g.it[i];
        const double den = a2 * n + g.ix[i] * g.ix[i] + g.iy[i] * g.iy[i];
        u[i] = ub - g.ix[i] * r / den;
        v[i] = vb - g.iy[i] * r / den;
      }
    }
  }
  FlowField f;
  f.height = h;
  f.width = w;
  f.u.assign(u.begin(), u.end());
  f.v.assign(v.begin(), v.end());
  return f;
}

double horn_schunck_energy(const Image& a, const Image& b, const FlowField& flow, double alpha) {
  require_same_dims(a, b, "horn_schunck_energy");
  const int h = a.height, w = a.width;
  const auto g = image_gradients(a, b);
  double data = 0.0, smooth = 0.0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const auto i = static_cast<std::size_t>(y) * w + x;
      const double r = g.ix[i] * flow.u[i] + g.iy[i] * flow.v[i] + g.it[i];
      data += r * r;
      if (x + 1 < w) {
        const double du = flow.u[i + 1] - flow.u[i], dv = flow.v[i + 1] - flow.v[i];
        smooth += du * du + dv * dv;
      }
      if (y + 1 < h) {
        const double du = flow.u[i + w] - flow.u[i], dv = flow.v[i + w] - flow.v[i];
        smooth += du * du + dv * dv;
      }
    }
  }
  return data + alpha * alpha * smooth;
}

TextEmbedding text_embed(std::string_view report, int d_text) {
  if (d_text < 8) throw ConfigError("text_embed: d_text must be >= 8");
  std::vector<double> acc(static_cast<std::size_t>(d_text), 0.0);
  std::string token;
  auto flush = [&]() {
    if (token.empty()) return;
    const std::uint64_t h = fnv1a(token);
    const auto bucket = static_cast<std::size_t>(h % static_cast<std::uint64_t>(d_text));
    const double sign = (mix64(h) >> 63) ? -1.0 : 1.0;
    acc[bucket] += sign;
    token.clear();
  };
  for (char ch : report) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      token.push_back(static_cast<char>(std::tolower(c)));
    } else {
      flush();
    }
  }
  flush();
  double norm = 0.0;
  for (double v : acc) norm += v * v;
  norm = std::sqrt(norm);
  TextEmbedding e;
  e.vec.resize(acc.size());
  for (std::size_t i = 0; i < acc.size(); ++i) {
    e.vec[i] = norm > 0.0 ? static_cast<float>(acc[i] / norm) : 0.0f;
  }
  return e;
}

Tensor flow_batch(const std::vector<const FlowField*>& flows) {
  if (flows.empty()) throw ContractError("flow_batch: empty batch");
  const int h = flows[0]->height, w = flows[0]->width;
  const auto plane = static_cast<std::size_t>(h) * w;
  std::vector<float> data;
  data.reserve(flows.size() * 2 * plane);
  for (const auto* f : flows) {
    if (f->height != h || f->width != w) throw DimensionError("flow_batch: ragged flow dims");
    data.insert(data.end(), f->u.begin(), f->u.end());
    data.insert(data.end(), f->v.begin(), f->v.end());
  }
  return Tensor(Shape{static_cast<std::int64_t>(flows.size()), 2, h, w}, std::move(data));
}

Tensor text_batch(const std::vector<const TextEmbedding*>& texts) {
  if (texts.empty()) throw ContractError("text_batch: empty batch");
  const auto d = texts[0]->vec.size();
  std::vector<float> data;
  data.reserve(texts.size() * d);
  for (const auto* t : texts) {
    if (t->vec.size() != d) throw DimensionError("text_batch: ragged embedding sizes");
    data.insert(data.end(), t->vec.begin(), t->vec.end());
  }
  return Tensor(Shape{static_cast<std::int64_t>(texts.size()), static_cast<std::int64_t>(d)},
                std::move(data));
}

}  // namespace pairdiff
