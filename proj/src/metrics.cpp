// SPDX-License-Identifier: Apache-2.0
#include "pairdiff/metrics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "pairdiff/error.hpp"

namespace pairdiff {

std::size_t BinaryVolume::count() const {
  return static_cast<std::size_t>(std::count_if(voxels.begin(), voxels.end(), [](auto v) { return v != 0; }));
}

BinaryVolume class_mask(const MaskVolume& masks, int label) {
  BinaryVolume out{masks.height, masks.width, masks.depth, {}};
  out.voxels.resize(masks.labels.size());
  for (std::size_t i = 0; i < out.voxels.size(); ++i) out.voxels[i] = masks.labels[i] == label ? 1 : 0;
  return out;
}

namespace {

void require_same_dims(const BinaryVolume& a, const BinaryVolume& b, const char* op) {
  if (a.height != b.height || a.width != b.width || a.depth != b.depth || a.voxels.size() != b.voxels.size()) {
    throw ContractError(std::string(op) + ": mask dims differ (" + std::to_string(a.height) + "x" +
                        std::to_string(a.width) + "x" + std::to_string(a.depth) + " vs " +
                        std::to_string(b.height) + "x" + std::to_string(b.width) + "x" +
                        std::to_string(b.depth) + ")");
  }
}

struct Overlap {
  std::size_t a = 0, b = 0, both = 0;
};

Overlap overlap(const BinaryVolume& a, const BinaryVolume& b, const char* op) {
  require_same_dims(a, b, op);
  Overlap o;
  for (std::size_t i = 0; i < a.voxels.size(); ++i) {
    const bool x = a.voxels[i] != 0, y = b.voxels[i] != 0;
    o.a += x;
    o.b += y;
    o.both += x && y;
  }
  return o;
}

constexpr double kInf = std::numeric_limits<double>::infinity();

// Lower-envelope squared distance transform of one line (Felzenszwalb &
// Huttenlocher), with sample spacing `s`. Infinite entries carry no parabola.
void distance_transform_1d(std::vector<double>& f, double s, std::vector<int>& v, std::vector<double>& z,
                           std::vector<double>& out) {
  const int n = static_cast<int>(f.size());
  int k = -1;
  auto intersect = [&](int q, int r) {
    const double pq = q * s, pr = r * s;
    return ((f[q] + pq * pq) - (f[r] + pr * pr)) / (2.0 * (pq - pr));
  };
  for (int q = 0; q < n; ++q) {
    if (f[q] == kInf) continue;
    double sect = -kInf;
    while (k >= 0) {
      sect = intersect(q, v[k]);
      if (sect > z[k]) break;
      --k;
    }
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -kInf;
    } else {
      ++k;
      v[k] = q;
      z[k] = sect;
    }
    z[k + 1] = kInf;
  }
  if (k < 0) {
    std::fill(out.begin(), out.end(), kInf);
    return;
  }
  int j = 0;
  for (int p = 0; p < n; ++p) {
    while (z[j + 1] < p * s) ++j;
    const double d = (p - v[j]) * s;
    out[p] = d * d + f[v[j]];
  }
}

// Squared spacing-weighted distance from every voxel to the nearest set voxel.
std::vector<double> squared_edt(const BinaryVolume& m, const Spacing& spacing) {
  const int h = m.height, w = m.width, d = m.depth;
  std::vector<double> dist(m.voxels.size());
  for (std::size_t i = 0; i < dist.size(); ++i) dist[i] = m.voxels[i] ? 0.0 : kInf;
  const int longest = std::max({h, w, d});
  std::vector<double> line, out;
  std::vector<int> v(static_cast<std::size_t>(longest));
  std::vector<double> z(static_cast<std::size_t>(longest) + 1);
  auto pass = [&](int n, double s, auto index_of, int outer_a, int outer_b) {
    line.resize(static_cast<std::size_t>(n));
    out.resize(static_cast<std::size_t>(n));
    for (int a = 0; a < outer_a; ++a) {
      for (int b = 0; b < outer_b; ++b) {
        for (int i = 0; i < n; ++i) line[i] = dist[index_of(a, b, i)];
        distance_transform_1d(line, s, v, z, out);
        for (int i = 0; i < n; ++i) dist[index_of(a, b, i)] = out[i];
      }
    }
  };
  pass(w, spacing[0], [&](int zz, int yy, int i) { return m.index(zz, yy, i); }, d, h);
  pass(h, spacing[1], [&](int zz, int xx, int i) { return m.index(zz, i, xx); }, d, w);
  pass(d, spacing[2], [&](int yy, int xx, int i) { return m.index(i, yy, xx); }, h, w);
  return dist;
}

std::vector<double> directed_surface_distances(const BinaryVolume& from_surface, const std::vector<double>& edt_sq) {
  std::vector<double> out;
  for (std::size_t i = 0; i < from_surface.voxels.size(); ++i) {
    if (from_surface.voxels[i]) out.push_back(std::sqrt(edt_sq[i]));
  }
  return out;
}

}  // namespace

double dice(const BinaryVolume& a, const BinaryVolume& b) {
  const auto o = overlap(a, b, "dice");
  if (o.a + o.b == 0) return 1.0;
  return 2.0 * static_cast<double>(o.both) / static_cast<double>(o.a + o.b);
}

double jaccard(const BinaryVolume& a, const BinaryVolume& b) {
  const auto o = overlap(a, b, "jaccard");
  const auto uni = o.a + o.b - o.both;
  if (uni == 0) return 1.0;
  return static_cast<double>(o.both) / static_cast<double>(uni);
}

BinaryVolume surface(const BinaryVolume& m) {
  BinaryVolume s{m.height, m.width, m.depth, std::vector<std::uint8_t>(m.voxels.size(), 0)};
  const int off[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
  for (int z = 0; z < m.depth; ++z)
    for (int y = 0; y < m.height; ++y)
      for (int x = 0; x < m.width; ++x) {
        if (!m.voxels[m.index(z, y, x)]) continue;
        for (const auto& o : off) {
          const int zz = z + o[0], yy = y + o[1], xx = x + o[2];
          if (zz < 0 || zz >= m.depth || yy < 0 || yy >= m.height || xx < 0 || xx >= m.width ||
              !m.voxels[m.index(zz, yy, xx)]) {
            s.voxels[s.index(z, y, x)] = 1;
            break;
          }
        }
      }
  return s;
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw ContractError("percentile: empty sample");
  std::sort(values.begin(), values.end());
  const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

double hd95(const BinaryVolume& a, const BinaryVolume& b, const Spacing& spacing) {
  require_same_dims(a, b, "hd95");
  if (a.count() == 0 || b.count() == 0) throw DefinedValueError("hd95: undefined for an empty mask");
  const auto sa = surface(a), sb = surface(b);
  const auto ab = directed_surface_distances(sa, squared_edt(sb, spacing));
  const auto ba = directed_surface_distances(sb, squared_edt(sa, spacing));
  return std::max(percentile(ab, 95.0), percentile(ba, 95.0));
}

double t_coherence(const std::vector<Image>& frames, const std::vector<FramePairIndex>& pairs) {
  if (pairs.empty()) throw ContractError("t_coherence: no pairs");
  double total = 0.0;
  for (const auto& p : pairs) {
    if (p.i < 0 || p.j < 0 || p.i >= static_cast<int>(frames.size()) || p.j >= static_cast<int>(frames.size())) {
      throw ContractError("t_coherence: pair (" + std::to_string(p.i) + ", " + std::to_string(p.j) +
                          ") out of range for " + std::to_string(frames.size()) + " frames");
    }
    const auto& a = frames[static_cast<std::size_t>(p.i)];
    const auto& b = frames[static_cast<std::size_t>(p.j)];
    if (a.size() != b.size()) throw ContractError("t_coherence: ragged frames");
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
      const double diff = static_cast<double>(a.pixels[k]) - b.pixels[k];
      s += diff * diff;
    }
    total += s;
  }
  return total / static_cast<double>(pairs.size());
}

double flicker(const std::vector<Image>& frames) {
  if (frames.size() < 2) throw ContractError("flicker: need at least 2 frames");
  double total = 0.0;
  for (std::size_t n = 1; n < frames.size(); ++n) {
    const auto& a = frames[n - 1];
    const auto& b = frames[n];
    if (a.size() != b.size() || a.size() == 0) throw ContractError("flicker: ragged or empty frames");
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) s += std::abs(static_cast<double>(b.pixels[k]) - a.pixels[k]);
    total += s / static_cast<double>(a.size());
  }
  return total / static_cast<double>(frames.size() - 1);
}

std::vector<Image> volume_frames(const Volume& vol) {
  std::vector<Image> frames;
  frames.reserve(static_cast<std::size_t>(vol.depth));
  for (int z = 0; z < vol.depth; ++z) frames.push_back(vol.slice(z));
  return frames;
}

std::vector<double> slice_features(const Image& s) {
  const int h = s.height, w = s.width;
  const double n = static_cast<double>(s.size());
  std::vector<double> f(kFeatureCount, 0.0);
  double mean = 0.0;
  for (float v : s.pixels) mean += v;
  mean /= n;
  double var = 0.0, grad = 0.0, above = 0.0;
  for (float v : s.pixels) {
    var += (v - mean) * (v - mean);
    const int bin = std::clamp(static_cast<int>(std::floor(v * 8.0)), 0, 7);
    f[2 + bin] += 1.0 / n;
    above += v > 0.3f;
  }
  // forward differences, zero past the last row/column
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double c = s.at(y, x);
      const double gx = x + 1 < w ? s.at(y, x + 1) - c : 0.0;
      const double gy = y + 1 < h ? s.at(y + 1, x) - c : 0.0;
      grad += std::sqrt(gx * gx + gy * gy);
    }
  f[0] = mean;
  f[1] = var / n;
  f[10] = grad / n;
  f[11] = above / n;
  return f;
}

FeatureSummary summarize_features(const std::vector<std::vector<double>>& rows) {
  if (rows.size() < 2) throw ContractError("feature_summary: need at least 2 slices");
  const auto k = rows[0].size();
  const auto n = static_cast<double>(rows.size());
  FeatureSummary out;
  out.mu.assign(k, 0.0);
  out.sigma.assign(k * k, 0.0);
  for (const auto& r : rows)
    for (std::size_t i = 0; i < k; ++i) out.mu[i] += r[i];
  for (auto& m : out.mu) m /= n;
  for (const auto& r : rows)
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < k; ++j) out.sigma[i * k + j] += (r[i] - out.mu[i]) * (r[j] - out.mu[j]);
  for (auto& s : out.sigma) s /= n - 1.0;
  return out;
}

FeatureSummary feature_summary(const Volume& vol) { return feature_summary(std::vector<const Volume*>{&vol}); }

FeatureSummary feature_summary(const std::vector<const Volume*>& vols) {
  std::vector<std::vector<double>> rows;
  for (const auto* v : vols)
    for (int z = 0; z < v->depth; ++z) rows.push_back(slice_features(v->slice(z)));
  return summarize_features(rows);
}

double frechet_distance(const FeatureSummary& p, const FeatureSummary& q) {
  const int k = p.k();
  if (q.k() != k || p.sigma.size() != static_cast<std::size_t>(k * k) || q.sigma.size() != p.sigma.size()) {
    throw ContractError("frechet_distance: feature dimensions differ");
  }
  using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const Mat sp = Eigen::Map<const Mat>(p.sigma.data(), k, k);
  const Mat sq = Eigen::Map<const Mat>(q.sigma.data(), k, k);
  if ((sp - sp.transpose()).cwiseAbs().maxCoeff() > 1e-6 || (sq - sq.transpose()).cwiseAbs().maxCoeff() > 1e-6) {
    throw ContractError("frechet_distance: covariance is not symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Mat> eig_p(0.5 * (sp + sp.transpose()));
  const Eigen::VectorXd root_vals = eig_p.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  const Mat root_p = eig_p.eigenvectors() * root_vals.asDiagonal() * eig_p.eigenvectors().transpose();
  const Mat inner = root_p * sq * root_p;
  Eigen::SelfAdjointEigenSolver<Mat> eig_m(0.5 * (inner + inner.transpose()), Eigen::EigenvaluesOnly);
  const double tr_root = eig_m.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  double mean_term = 0.0;
  for (int i = 0; i < k; ++i) mean_term += (p.mu[i] - q.mu[i]) * (p.mu[i] - q.mu[i]);
  return std::max(0.0, mean_term + sp.trace() + sq.trace() - 2.0 * tr_root);
}

FidelityReport fidelity(const MaskVolume& generated, const MaskVolume& reference) {
  if (generated.height != reference.height || generated.width != reference.width ||
      generated.depth != reference.depth) {
    throw ContractError("fidelity: generated and reference mask dims differ");
  }
  const double diag = std::sqrt(std::pow(reference.width * reference.spacing[0], 2) +
                                std::pow(reference.height * reference.spacing[1], 2) +
                                std::pow(reference.depth * reference.spacing[2], 2));
  FidelityReport r;
  for (int c = 1; c < reference.n_classes; ++c) {
    const auto g = class_mask(generated, c), t = class_mask(reference, c);
    ClassScores s;
    s.label = c;
    s.dice = dice(g, t);
    s.jaccard = jaccard(g, t);
    const auto ng = g.count(), nt = t.count();
    s.hd95 = ng == 0 && nt == 0 ? 0.0 : (ng == 0 || nt == 0) ? diag : hd95(g, t, reference.spacing);
    r.classes.push_back(s);
  }
  for (const auto& s : r.classes) {
    r.macro_dice += s.dice;
    r.macro_jaccard += s.jaccard;
    r.macro_hd95 += s.hd95;
  }
  const auto n = static_cast<double>(std::max<std::size_t>(r.classes.size(), 1));
  r.macro_dice /= n;
  r.macro_jaccard /= n;
  r.macro_hd95 /= n;
  return r;
}

}  // namespace pairdiff
