// SPDX-License-Identifier: Apache-2.0
#include "pairdiff/phantom.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <string>

#include "pairdiff/error.hpp"
#include "pairdiff/seed.hpp"

namespace pairdiff {

void PhantomSpec::validate() const {
  if (height < 8 || width < 8 || height % 4 || width % 4) {
    throw ConfigError("phantom: height and width must be >= 8 and divisible by 4");
  }
  if (depth_min < 8 || depth_max < depth_min) {
    throw ConfigError("phantom: need 8 <= depth_min <= depth_max");
  }
  if (n_classes != 2 && n_classes != 3 && n_classes != 8) {
    throw ConfigError("phantom: n_classes must be 2, 3 or 8");
  }
  if (!(noise_level >= 0.0)) throw ConfigError("phantom: noise_level must be >= 0");
}

float organ_intensity(int n_classes, int cls) {
  if (n_classes != 8) return kOrganIntensity;
  return 0.62f + 0.06f * static_cast<float>(cls - 2);
}

namespace {

struct Ellipse {
  double cx, cy, a, b;
  bool contains(double x, double y) const {
    const double u = (x - cx) / a, v = (y - cy) / b;
    return u * u + v * v <= 1.0;
  }
};

struct Organ {
  double cx, cy, a, b;
  double zc, zr;  // in normalized depth units
  int cls;
};

constexpr double kPi = 3.14159265358979323846;

// Cross-section scales along normalized depth. Neither vanishes, so every
// structure is present on every slice and adjacent slices stay similar.
double lung_taper(double zeta) { return 0.62 + 0.38 * std::sin(kPi * (0.1 + 0.8 * zeta)); }

double organ_taper(const Organ& o, double zeta) {
  const double u = (zeta - o.zc) / o.zr;
  return 0.75 + 0.25 * std::exp(-u * u);
}

// Organ at full size, grown by `margin`, against the lungs at full size.
bool touches_lungs(const Organ& o, const std::array<Ellipse, 2>& lungs, double margin) {
  const Ellipse grown{o.cx, o.cy, o.a + margin, o.b + margin};
  for (double y = std::floor(o.cy - grown.b); y <= o.cy + grown.b; y += 0.5)
    for (double x = std::floor(o.cx - grown.a); x <= o.cx + grown.a; x += 0.5) {
      if (!grown.contains(x, y)) continue;
      for (const auto& l : lungs)
        if (Ellipse{l.cx, l.cy, l.a + margin, l.b + margin}.contains(x, y)) return true;
    }
  return false;
}

}  // namespace

Phantom generate_phantom(const PhantomSpec& spec, int index) {
  spec.validate();
  std::mt19937_64 rng(derive_seed(spec.seed, static_cast<std::uint64_t>(index)));
  auto uniform = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  const int h = spec.height, w = spec.width;
  const int depth = std::uniform_int_distribution<int>(spec.depth_min, spec.depth_max)(rng);

  const double cx = w / 2.0 - 0.5 + uniform(-1.0, 1.0);
  const double cy = h / 2.0 - 0.5 + uniform(-1.0, 1.0);
  const Ellipse body{cx, cy, uniform(0.42, 0.46) * w, uniform(0.36, 0.40) * h};
  const double lung_scale = uniform(0.85, 1.15);
  std::array<Ellipse, 2> lungs{};
  for (int s = 0; s < 2; ++s) {
    const double side = s == 0 ? -1.0 : 1.0;
    lungs[s] = Ellipse{cx + side * 0.52 * body.a, cy - 0.3 * body.b + uniform(-0.5, 0.5),
                       0.28 * body.a * lung_scale, 0.5 * body.b * lung_scale};
  }
  const int wanted = std::uniform_int_distribution<int>(1, 3)(rng);
  std::vector<int> classes{2, 3, 4, 5, 6, 7};
  std::shuffle(classes.begin(), classes.end(), rng);
  std::vector<Organ> organs;
  const double margin = std::min(w, h) / 32.0;  // one voxel at 32x32
  // rejection-sample non-overlapping organs; a failed slot is dropped
  for (int k = 0; k < wanted; ++k) {
    for (int attempt = 0; attempt < 200; ++attempt) {
      Organ o{};
      o.cx = cx + uniform(-0.6, 0.6) * body.a;
      o.cy = cy + uniform(0.3, 0.65) * body.b;
      o.a = uniform(0.12, 0.15) * w;
      o.b = uniform(0.11, 0.14) * h;
      o.zc = uniform(0.2, 0.8);
      o.zr = uniform(0.2, 0.4);
      o.cls = spec.n_classes == 8 ? classes[static_cast<std::size_t>(k)] : 2;
      const bool clear = std::all_of(organs.begin(), organs.end(), [&](const Organ& q) {
        return std::hypot(o.cx - q.cx, o.cy - q.cy) > std::max(o.a, o.b) + std::max(q.a, q.b) + 2.0 * margin;
      });
      const bool inside = body.contains(o.cx - o.a, o.cy) && body.contains(o.cx + o.a, o.cy) &&
                          body.contains(o.cx, o.cy - o.b) && body.contains(o.cx, o.cy + o.b);
      if (clear && inside && !touches_lungs(o, lungs, margin)) {
        organs.push_back(o);
        break;
      }
    }
  }
  if (organs.empty()) throw NumericalError("generate_phantom: could not place an organ");
  const int n_organs = static_cast<int>(organs.size());
  const int age = std::uniform_int_distribution<int>(25, 79)(rng);
  const bool male = std::uniform_int_distribution<int>(0, 1)(rng) == 1;

  Phantom p;
  Volume& vol = p.volume;
  MaskVolume& mv = p.masks;
  vol.height = mv.height = h;
  vol.width = mv.width = w;
  vol.depth = mv.depth = depth;
  vol.spacing = mv.spacing = Spacing{1.0f, 1.0f, 1.5f};
  mv.n_classes = spec.n_classes;
  vol.voxels.assign(static_cast<std::size_t>(h) * w * depth, 0.0f);
  mv.labels.assign(vol.voxels.size(), 0);

  std::mt19937_64 noise_rng(derive_seed(derive_seed(spec.seed, static_cast<std::uint64_t>(index)), 1));
  std::normal_distribution<double> noise(0.0, 1.0);
  for (int z = 0; z < depth; ++z) {
    const double zeta = depth > 1 ? static_cast<double>(z) / (depth - 1) : 0.5;
    const double taper = lung_taper(zeta);
    std::vector<Ellipse> organ_slices;
    std::vector<int> organ_cls;
    for (const auto& o : organs) {
      const double g = organ_taper(o, zeta);
      organ_slices.push_back({o.cx, o.cy, o.a * g, o.b * g});
      organ_cls.push_back(o.cls);
    }
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const auto idx = vol.index(z, y, x);
        float value = 0.0f;
        std::uint8_t label = 0;
        if (body.contains(x, y)) {
          value = kBodyIntensity;
          for (const auto& l : lungs) {
            if (Ellipse{l.cx, l.cy, l.a * taper, l.b * taper}.contains(x, y)) {
              value = kLungIntensity;
              label = 1;
            }
          }
          for (std::size_t k = 0; k < organ_slices.size(); ++k) {
            if (organ_slices[k].contains(x, y)) {
              value = organ_intensity(spec.n_classes, organ_cls[k]);
              label = spec.n_classes == 2 ? 1 : static_cast<std::uint8_t>(organ_cls[k]);
            }
          }
        }
        if (spec.noise_level > 0.0) {
          const double n = std::clamp(noise(noise_rng), -2.0, 2.0);
          value = static_cast<float>(std::clamp(value + spec.noise_level * n, 0.0, 1.0));
        }
        vol.voxels[idx] = value;
        mv.labels[idx] = label;
      }
    }
  }

  std::string impression = lung_scale > 1.05   ? "hyperinflated lungs"
                           : lung_scale < 0.95 ? "reduced lung volumes"
                                               : "clear lungs";
  impression += " with " + std::to_string(n_organs) + " mediastinal " + (n_organs == 1 ? "mass" : "masses");
  p.report = std::to_string(age) + " years old " + (male ? "male" : "female") + ": " + impression;
  return p;
}

std::vector<IntensityBand> default_bands(int n_classes) {
  constexpr float inf = std::numeric_limits<float>::infinity();
  switch (n_classes) {
    case 2:
      return {{0.08f, 0.3f, 1}, {0.6f, inf, 1}};
    case 3:
      return {{0.08f, 0.3f, 1}, {0.6f, inf, 2}};
    case 8: {
      std::vector<IntensityBand> bands{{0.08f, 0.3f, 1}};
      float lo = 0.6f;
      for (int c = 2; c <= 7; ++c) {
        const float hi = c == 7 ? inf : 0.5f * (organ_intensity(8, c) + organ_intensity(8, c + 1));
        bands.push_back({lo, hi, static_cast<std::uint8_t>(c)});
        lo = hi;
      }
      return bands;
    }
    default:
      throw ConfigError("default_bands: n_classes must be 2, 3 or 8");
  }
}

// A voxel is relabelled by its 3x3x3 neighbourhood only when at most this many
// neighbours (itself included) share its band. Rasterized phantom boundaries
// never drop below 6.
constexpr int kSpeckVotes = 4;

MaskVolume resegment(const Volume& vol, const std::vector<IntensityBand>& bands, int n_classes) {
  if (n_classes < 2 || n_classes > 256) throw ConfigError("resegment: n_classes out of range");
  for (std::size_t i = 0; i < bands.size(); ++i) {
    if (!(bands[i].lo < bands[i].hi)) throw ConfigError("resegment: band " + std::to_string(i) + " is empty");
    if (bands[i].label >= n_classes) throw ConfigError("resegment: band label exceeds n_classes");
    if (i > 0 && bands[i].lo < bands[i - 1].hi) {
      throw ConfigError("resegment: bands " + std::to_string(i - 1) + " and " + std::to_string(i) +
                        " overlap or are unordered");
    }
  }
  const int h = vol.height, w = vol.width, d = vol.depth;
  std::vector<std::uint8_t> raw(vol.voxels.size(), 0);
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const float v = vol.voxels[i];
    for (const auto& b : bands) {
      if (v >= b.lo && v < b.hi) {
        raw[i] = b.label;
        break;
      }
    }
  }

  MaskVolume out;
  out.height = h;
  out.width = w;
  out.depth = d;
  out.n_classes = n_classes;
  out.spacing = vol.spacing;
  out.labels.resize(raw.size());
  std::vector<int> counts(static_cast<std::size_t>(n_classes));
  for (int z = 0; z < d; ++z) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        std::fill(counts.begin(), counts.end(), 0);
        for (int dz = -1; dz <= 1; ++dz) {
          const int zz = z + dz;
          if (zz < 0 || zz >= d) continue;
          for (int dy = -1; dy <= 1; ++dy) {
            const int yy = y + dy;
            if (yy < 0 || yy >= h) continue;
            for (int dx = -1; dx <= 1; ++dx) {
              const int xx = x + dx;
              if (xx < 0 || xx >= w) continue;
              ++counts[raw[vol.index(zz, yy, xx)]];
            }
          }
        }
        const auto idx = vol.index(z, y, x);
        const std::uint8_t centre = raw[idx];
        std::uint8_t best = centre;
        if (counts[centre] <= kSpeckVotes) {
          for (int c = 0; c < n_classes; ++c) {
            if (counts[c] > counts[best]) best = static_cast<std::uint8_t>(c);
          }
        }
        out.labels[idx] = best;
      }
    }
  }
  return out;
}

std::pair<std::vector<int>, std::vector<int>> split(int count, double train_frac, std::uint64_t seed) {
  if (count < 0) throw ContractError("split: negative count");
  if (!(train_frac > 0.0 && train_frac < 1.0)) throw ContractError("split: train_frac must lie in (0, 1)");
  std::vector<int> ids(static_cast<std::size_t>(count));
  std::iota(ids.begin(), ids.end(), 0);
  std::mt19937_64 rng(derive_seed(seed, 0x5157));
  std::shuffle(ids.begin(), ids.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::lround(count * train_frac));
  std::vector<int> train(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<int> test(ids.begin() + static_cast<std::ptrdiff_t>(n_train), ids.end());
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {train, test};
}

}  // namespace pairdiff
