// SPDX-License-Identifier: Apache-2.0
#include "pairdiff/ops.hpp"

#include <Eigen/Core>
#include <cmath>
#include <string>

#include "pairdiff/error.hpp"

namespace pairdiff::ops {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Storage = std::shared_ptr<detail::TensorStorage<T>>;

template <typename T>
bool tracking(std::initializer_list<const BasicTensor<T>*> inputs) {
  if (Tape::active() == nullptr) return false;
  for (const auto* t : inputs) {
    if (t != nullptr && t->requires_grad()) return true;
  }
  return false;
}

template <typename T>
BasicTensor<T> make_output(const char* op, Shape shape, std::vector<T> data, bool track) {
  if (finite_checks_enabled()) {
    for (const T v : data) {
      if (!std::isfinite(v)) throw NumericalError(std::string("non-finite value produced by ") + op);
    }
  }
  return BasicTensor<T>(std::move(shape), std::move(data), track);
}

template <typename T>
void record(const char* op, std::initializer_list<Storage<T>> inputs, const Storage<T>& output,
            std::function<void()> fn) {
  Tape::Node node;
  node.op = op;
  for (const auto& in : inputs) node.inputs.push_back(in);
  node.output = output;
  node.backward = std::move(fn);
  Tape::active()->record(std::move(node));
}

template <typename T>
bool wants_grad(const Storage<T>& s) {
  return s && s->requires_grad;
}

void require(bool ok, const std::string& message) {
  if (!ok) throw DimensionError(message);
}

template <typename T>
void require_rank(const BasicTensor<T>& t, std::size_t rank, const char* op, const char* name) {
  require(t.defined() && t.rank() == rank, std::string(op) + ": " + name + " must have rank " +
                                               std::to_string(rank) + ", got " +
                                               shape_str(t.shape()));
}

template <typename T>
void im2col(const T* x, int channels, int height, int width, int k, int stride, int pad,
            int out_h, int out_w, T* col) {
  const int plane = out_h * out_w;
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* dst = col + static_cast<std::ptrdiff_t>((c * k + ky) * k + kx) * plane;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride - pad + ky;
          T* row = dst + oy * out_w;
          if (iy < 0 || iy >= height) {
            std::fill(row, row + out_w, T(0));
            continue;
          }
          const T* src = x + (static_cast<std::ptrdiff_t>(c) * height + iy) * width;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride - pad + kx;
            row[ox] = (ix >= 0 && ix < width) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, int channels, int height, int width, int k, int stride, int pad,
            int out_h, int out_w, T* x) {
  const int plane = out_h * out_w;
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* src = col + static_cast<std::ptrdiff_t>((c * k + ky) * k + kx) * plane;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= height) continue;
          T* dst = x + (static_cast<std::ptrdiff_t>(c) * height + iy) * width;
          const T* row = src + oy * out_w;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < width) dst[ix] += row[ox];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& kernel,
                      const BasicTensor<T>& bias, int stride, int pad) {
  require_rank(input, 4, "conv2d", "input");
  require_rank(kernel, 4, "conv2d", "kernel");
  if (stride < 1 || pad < 0) {
    throw ContractError("conv2d: stride must be >= 1 and pad >= 0");
  }
  const int n = static_cast<int>(input.dim(0));
  const int c = static_cast<int>(input.dim(1));
  const int h = static_cast<int>(input.dim(2));
  const int w = static_cast<int>(input.dim(3));
  const int o = static_cast<int>(kernel.dim(0));
  const int k = static_cast<int>(kernel.dim(2));
  require(kernel.dim(1) == c, "conv2d: input channels (axis 1) = " + std::to_string(c) +
                                  " but kernel in-channels (axis 1) = " +
                                  std::to_string(kernel.dim(1)));
  require(kernel.dim(3) == k, "conv2d: kernel must be square, got " + shape_str(kernel.shape()));
  if (bias.defined()) {
    require(bias.rank() == 1 && bias.dim(0) == o,
            "conv2d: bias shape " + shape_str(bias.shape()) + " != [" + std::to_string(o) + "]");
  }
  require(h + 2 * pad >= k && w + 2 * pad >= k,
          "conv2d: kernel " + std::to_string(k) + " larger than padded input (axes 2,3) " +
              shape_str(input.shape()));
  const int out_h = (h + 2 * pad - k) / stride + 1;
  const int out_w = (w + 2 * pad - k) / stride + 1;
  const int plane = out_h * out_w;
  const int patch = c * k * k;

  std::vector<T> out(static_cast<std::size_t>(n) * o * plane);
  std::vector<T> col(static_cast<std::size_t>(patch) * plane);
  Eigen::Map<const RowMat<T>> wm(kernel.data().data(), o, patch);
  for (int b = 0; b < n; ++b) {
    im2col(input.data().data() + static_cast<std::ptrdiff_t>(b) * c * h * w, c, h, w, k, stride,
           pad, out_h, out_w, col.data());
    Eigen::Map<const RowMat<T>> cm(col.data(), patch, plane);
    Eigen::Map<RowMat<T>> om(out.data() + static_cast<std::ptrdiff_t>(b) * o * plane, o, plane);
    om.noalias() = wm * cm;
    if (bias.defined()) {
      for (int oc = 0; oc < o; ++oc) om.row(oc).array() += bias.data()[oc];
    }
  }

  const bool track = tracking<T>({&input, &kernel, &bias});
  auto result = make_output<T>("conv2d", Shape{n, o, out_h, out_w}, std::move(out), track);
  if (track) {
    Storage<T> xs = input.storage(), ks = kernel.storage(), bs = bias.storage(),
               ys = result.storage();
    record<T>("conv2d", {xs, ks, bs}, ys, [=]() {
      if (ys->grad.empty()) return;
      std::vector<T> col_buf(static_cast<std::size_t>(patch) * plane);
      std::vector<T> dcol(static_cast<std::size_t>(patch) * plane);
      Eigen::Map<const RowMat<T>> wmat(ks->data.data(), o, patch);
      for (int b = 0; b < n; ++b) {
        Eigen::Map<const RowMat<T>> g(ys->grad.data() + static_cast<std::ptrdiff_t>(b) * o * plane,
                                      o, plane);
        if (wants_grad(ks)) {
          im2col(xs->data.data() + static_cast<std::ptrdiff_t>(b) * c * h * w, c, h, w, k, stride,
                 pad, out_h, out_w, col_buf.data());
          Eigen::Map<const RowMat<T>> cm(col_buf.data(), patch, plane);
          Eigen::Map<RowMat<T>> dk(ks->grad_buffer().data(), o, patch);
          dk.noalias() += g * cm.transpose();
        }
        if (wants_grad(bs)) {
          auto& db = bs->grad_buffer();
          for (int oc = 0; oc < o; ++oc) {
            T acc = 0;
            for (int p = 0; p < plane; ++p) acc += g(oc, p);
            db[oc] += acc;
          }
        }
        if (wants_grad(xs)) {
          Eigen::Map<RowMat<T>> dc(dcol.data(), patch, plane);
          dc.noalias() = wmat.transpose() * g;
          col2im(dcol.data(), c, h, w, k, stride, pad, out_h, out_w,
                 xs->grad_buffer().data() + static_cast<std::ptrdiff_t>(b) * c * h * w);
        }
      }
    });
  }
  return result;
}

template <typename T>
BasicTensor<T> upsample_nearest2x(const BasicTensor<T>& input) {
  require_rank(input, 4, "upsample_nearest2x", "input");
  const auto n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const auto planes = n * c;
  std::vector<T> out(static_cast<std::size_t>(planes * 4 * h * w));
  const T* x = input.data().data();
  for (std::int64_t p = 0; p < planes; ++p) {
    for (std::int64_t y = 0; y < 2 * h; ++y) {
      for (std::int64_t xx = 0; xx < 2 * w; ++xx) {
        out[(p * 2 * h + y) * 2 * w + xx] = x[(p * h + y / 2) * w + xx / 2];
      }
    }
  }
  const bool track = tracking<T>({&input});
  auto result = make_output<T>("upsample", Shape{n, c, 2 * h, 2 * w}, std::move(out), track);
  if (track) {
    Storage<T> xs = input.storage(), ys = result.storage();
    record<T>("upsample", {xs}, ys, [=]() {
      if (ys->grad.empty()) return;
      auto& dx = xs->grad_buffer();
      for (std::int64_t p = 0; p < planes; ++p) {
        for (std::int64_t y = 0; y < 2 * h; ++y) {
          for (std::int64_t xx = 0; xx < 2 * w; ++xx) {
            dx[(p * h + y / 2) * w + xx / 2] += ys->grad[(p * 2 * h + y) * 2 * w + xx];
          }
        }
      }
    });
  }
  return result;
}

template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias) {
  require_rank(input, 2, "linear", "input");
  require_rank(weight, 2, "linear", "weight");
  const auto n = input.dim(0), f = input.dim(1), g = weight.dim(1);
  require(weight.dim(0) == f, "linear: input axis 1 (" + std::to_string(f) +
                                  ") != weight axis 0 (" + std::to_string(weight.dim(0)) + ")");
  if (bias.defined()) {
    require(bias.rank() == 1 && bias.dim(0) == g,
            "linear: bias shape " + shape_str(bias.shape()) + " != [" + std::to_string(g) + "]");
  }
  std::vector<T> out(static_cast<std::size_t>(n * g));
  Eigen::Map<const RowMat<T>> xm(input.data().data(), n, f);
  Eigen::Map<const RowMat<T>> wm(weight.data().data(), f, g);
  Eigen::Map<RowMat<T>> om(out.data(), n, g);
  om.noalias() = xm * wm;
  if (bias.defined()) {
    for (std::int64_t r = 0; r < n; ++r) {
      for (std::int64_t col = 0; col < g; ++col) om(r, col) += bias.data()[col];
    }
  }
  const bool track = tracking<T>({&input, &weight, &bias});
  auto result = make_output<T>("linear", Shape{n, g}, std::move(out), track);
  if (track) {
    Storage<T> xs = input.storage(), ws = weight.storage(), bs = bias.storage(),
               ys = result.storage();
    record<T>("linear", {xs, ws, bs}, ys, [=]() {
      if (ys->grad.empty()) return;
      Eigen::Map<const RowMat<T>> gm(ys->grad.data(), n, g);
      if (wants_grad(xs)) {
        Eigen::Map<RowMat<T>> dx(xs->grad_buffer().data(), n, f);
        Eigen::Map<const RowMat<T>> w(ws->data.data(), f, g);
        dx.noalias() += gm * w.transpose();
      }
      if (wants_grad(ws)) {
        Eigen::Map<RowMat<T>> dw(ws->grad_buffer().data(), f, g);
        Eigen::Map<const RowMat<T>> x(xs->data.data(), n, f);
        dw.noalias() += x.transpose() * gm;
      }
      if (wants_grad(bs)) {
        auto& db = bs->grad_buffer();
        for (std::int64_t r = 0; r < n; ++r) {
          for (std::int64_t col = 0; col < g; ++col) db[col] += gm(r, col);
        }
      }
    });
  }
  return result;
}

template <typename T>
BasicTensor<T> group_norm(const BasicTensor<T>& input, int groups, const BasicTensor<T>& gamma,
                          const BasicTensor<T>& beta, double eps) {
  require_rank(input, 4, "group_norm", "input");
  const auto n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (groups < 1 || c % groups != 0) {
    throw ConfigError("group_norm: " + std::to_string(c) + " channels not divisible into " +
                      std::to_string(groups) + " groups");
  }
  if (!(eps > 0.0)) throw ConfigError("group_norm: eps must be positive");
  require(gamma.defined() && gamma.rank() == 1 && gamma.dim(0) == c,
          "group_norm: gamma shape " + shape_str(gamma.shape()) + " != [" + std::to_string(c) + "]");
  require(beta.defined() && beta.rank() == 1 && beta.dim(0) == c,
          "group_norm: beta shape " + shape_str(beta.shape()) + " != [" + std::to_string(c) + "]");
  const auto cg = c / groups;
  const auto hw = h * w;
  const auto m = cg * hw;
  std::vector<T> xhat(input.data().size());
  std::vector<T> inv_std(static_cast<std::size_t>(n * groups));
  std::vector<T> out(input.data().size());
  const T* x = input.data().data();
  for (std::int64_t b = 0; b < n; ++b) {
    for (std::int64_t g = 0; g < groups; ++g) {
      const std::int64_t base = (b * c + g * cg) * hw;
      double mu = 0.0;
      for (std::int64_t i = 0; i < m; ++i) mu += x[base + i];
      mu /= static_cast<double>(m);
      double var = 0.0;
      for (std::int64_t i = 0; i < m; ++i) {
        const double d = x[base + i] - mu;
        var += d * d;
      }
      var /= static_cast<double>(m);
      const double is = 1.0 / std::sqrt(var + eps);
      inv_std[b * groups + g] = static_cast<T>(is);
      for (std::int64_t i = 0; i < m; ++i) {
        const auto ch = g * cg + i / hw;
        const T xh = static_cast<T>((x[base + i] - mu) * is);
        xhat[base + i] = xh;
        out[base + i] = gamma.data()[ch] * xh + beta.data()[ch];
      }
    }
  }
  const bool track = tracking<T>({&input, &gamma, &beta});
  auto result = make_output<T>("group_norm", input.shape(), std::move(out), track);
  if (track) {
    Storage<T> xs = input.storage(), gs = gamma.storage(), bs = beta.storage(),
               ys = result.storage();
    record<T>("group_norm", {xs, gs, bs}, ys,
              [=, xhat = std::move(xhat), inv_std = std::move(inv_std)]() {
                if (ys->grad.empty()) return;
                const T* dy = ys->grad.data();
                if (wants_grad(gs) || wants_grad(bs)) {
                  for (std::int64_t b = 0; b < n; ++b) {
                    for (std::int64_t ch = 0; ch < c; ++ch) {
                      const std::int64_t base = (b * c + ch) * hw;
                      T dg = 0, db = 0;
                      for (std::int64_t i = 0; i < hw; ++i) {
                        dg += dy[base + i] * xhat[base + i];
                        db += dy[base + i];
                      }
                      if (wants_grad(gs)) gs->grad_buffer()[ch] += dg;
                      if (wants_grad(bs)) bs->grad_buffer()[ch] += db;
                    }
                  }
                }
                if (!wants_grad(xs)) return;
                auto& dx = xs->grad_buffer();
                std::vector<T> dxhat(static_cast<std::size_t>(m));
                for (std::int64_t b = 0; b < n; ++b) {
                  for (std::int64_t g = 0; g < groups; ++g) {
                    const std::int64_t base = (b * c + g * cg) * hw;
                    double s1 = 0.0, s2 = 0.0;
                    for (std::int64_t i = 0; i < m; ++i) {
                      const auto ch = g * cg + i / hw;
                      dxhat[i] = dy[base + i] * gs->data[ch];
                      s1 += dxhat[i];
                      s2 += static_cast<double>(dxhat[i]) * xhat[base + i];
                    }
                    const double is = inv_std[b * groups + g];
                    const double md = static_cast<double>(m);
                    for (std::int64_t i = 0; i < m; ++i) {
                      dx[base + i] += static_cast<T>(is / md *
                                                     (md * dxhat[i] - s1 - xhat[base + i] * s2));
                    }
                  }
                }
              });
  }
  return result;
}

template <typename T>
BasicTensor<T> silu(const BasicTensor<T>& input) {
  std::vector<T> out(input.data().size());
  const T* x = input.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] / (T(1) + std::exp(-x[i]));
  const bool track = tracking<T>({&input});
  auto result = make_output<T>("silu", input.shape(), std::move(out), track);
  if (track) {
    Storage<T> xs = input.storage(), ys = result.storage();
    record<T>("silu", {xs}, ys, [=]() {
      if (ys->grad.empty() || !wants_grad(xs)) return;
      auto& dx = xs->grad_buffer();
      for (std::size_t i = 0; i < dx.size(); ++i) {
        const T v = xs->data[i];
        const T s = T(1) / (T(1) + std::exp(-v));
        dx[i] += ys->grad[i] * s * (T(1) + v * (T(1) - s));
      }
    });
  }
  return result;
}

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require(a.shape() == b.shape(),
          "add: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) + " differ");
  std::vector<T> out(a.data().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  const bool track = tracking<T>({&a, &b});
  auto result = make_output<T>("add", a.shape(), std::move(out), track);
  if (track) {
    Storage<T> as = a.storage(), bs = b.storage(), ys = result.storage();
    record<T>("add", {as, bs}, ys, [=]() {
      if (ys->grad.empty()) return;
      for (const auto& s : {as, bs}) {
        if (!wants_grad(s)) continue;
        auto& d = s->grad_buffer();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += ys->grad[i];
      }
    });
  }
  return result;
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require(a.shape() == b.shape(),
          "mul: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) + " differ");
  std::vector<T> out(a.data().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  const bool track = tracking<T>({&a, &b});
  auto result = make_output<T>("mul", a.shape(), std::move(out), track);
  if (track) {
    Storage<T> as = a.storage(), bs = b.storage(), ys = result.storage();
    record<T>("mul", {as, bs}, ys, [=]() {
      if (ys->grad.empty()) return;
      if (wants_grad(as)) {
        auto& d = as->grad_buffer();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += ys->grad[i] * bs->data[i];
      }
      if (wants_grad(bs)) {
        auto& d = bs->grad_buffer();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += ys->grad[i] * as->data[i];
      }
    });
  }
  return result;
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, double factor) {
  const T f = static_cast<T>(factor);
  std::vector<T> out(a.data().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * f;
  const bool track = tracking<T>({&a});
  auto result = make_output<T>("scale", a.shape(), std::move(out), track);
  if (track) {
    Storage<T> as = a.storage(), ys = result.storage();
    record<T>("scale", {as}, ys, [=]() {
      if (ys->grad.empty() || !wants_grad(as)) return;
      auto& d = as->grad_buffer();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += ys->grad[i] * f;
    });
  }
  return result;
}

template <typename T>
BasicTensor<T> add_channelwise(const BasicTensor<T>& x, const BasicTensor<T>& per_channel) {
  require_rank(x, 4, "add_channelwise", "x");
  require_rank(per_channel, 2, "add_channelwise", "per_channel");
  const auto n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  require(per_channel.dim(0) == n && per_channel.dim(1) == c,
          "add_channelwise: per-channel shape " + shape_str(per_channel.shape()) +
              " must match axes 0,1 of " + shape_str(x.shape()));
  std::vector<T> out(x.data().begin(), x.data().end());
  for (std::int64_t p = 0; p < n * c; ++p) {
    const T v = per_channel.data()[p];
    for (std::int64_t i = 0; i < hw; ++i) out[p * hw + i] += v;
  }
  const bool track = tracking<T>({&x, &per_channel});
  auto result = make_output<T>("add_channelwise", x.shape(), std::move(out), track);
  if (track) {
    Storage<T> xs = x.storage(), vs = per_channel.storage(), ys = result.storage();
    record<T>("add_channelwise", {xs, vs}, ys, [=]() {
      if (ys->grad.empty()) return;
      if (wants_grad(xs)) {
        auto& d = xs->grad_buffer();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += ys->grad[i];
      }
      if (wants_grad(vs)) {
        auto& d = vs->grad_buffer();
        for (std::int64_t p = 0; p < n * c; ++p) {
          T acc = 0;
          for (std::int64_t i = 0; i < hw; ++i) acc += ys->grad[p * hw + i];
          d[p] += acc;
        }
      }
    });
  }
  return result;
}

template <typename T>
BasicTensor<T> concat_channels(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_rank(a, 4, "concat_channels", "a");
  require_rank(b, 4, "concat_channels", "b");
  require(a.dim(0) == b.dim(0) && a.dim(2) == b.dim(2) && a.dim(3) == b.dim(3),
          "concat_channels: axes 0,2,3 of " + shape_str(a.shape()) + " and " +
              shape_str(b.shape()) + " differ");
  const auto n = a.dim(0), ca = a.dim(1), cb = b.dim(1), hw = a.dim(2) * a.dim(3);
  std::vector<T> out(static_cast<std::size_t>(n * (ca + cb) * hw));
  for (std::int64_t s = 0; s < n; ++s) {
    std::copy_n(a.data().data() + s * ca * hw, ca * hw, out.data() + s * (ca + cb) * hw);
    std::copy_n(b.data().data() + s * cb * hw, cb * hw, out.data() + (s * (ca + cb) + ca) * hw);
  }
  const bool track = tracking<T>({&a, &b});
  auto result =
      make_output<T>("concat_channels", Shape{n, ca + cb, a.dim(2), a.dim(3)}, std::move(out), track);
  if (track) {
    Storage<T> as = a.storage(), bs = b.storage(), ys = result.storage();
    record<T>("concat_channels", {as, bs}, ys, [=]() {
      if (ys->grad.empty()) return;
      for (std::int64_t s = 0; s < n; ++s) {
        const T* g = ys->grad.data() + s * (ca + cb) * hw;
        if (wants_grad(as)) {
          T* d = as->grad_buffer().data() + s * ca * hw;
          for (std::int64_t i = 0; i < ca * hw; ++i) d[i] += g[i];
        }
        if (wants_grad(bs)) {
          T* d = bs->grad_buffer().data() + s * cb * hw;
          for (std::int64_t i = 0; i < cb * hw; ++i) d[i] += g[ca * hw + i];
        }
      }
    });
  }
  return result;
}

template <typename T>
BasicTensor<T> slice_channels(const BasicTensor<T>& x, std::int64_t begin, std::int64_t count) {
  require_rank(x, 4, "slice_channels", "x");
  require(begin >= 0 && count >= 1 && begin + count <= x.dim(1),
          "slice_channels: channels [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
              ") outside axis 1 of " + shape_str(x.shape()));
  const auto n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  std::vector<T> out(static_cast<std::size_t>(n * count * hw));
  for (std::int64_t s = 0; s < n; ++s) {
    std::copy_n(x.data().data() + (s * c + begin) * hw, count * hw, out.data() + s * count * hw);
  }
  const bool track = tracking<T>({&x});
  auto result = make_output<T>("slice_channels", Shape{n, count, x.dim(2), x.dim(3)}, std::move(out), track);
  if (track) {
    Storage<T> xs = x.storage(), ys = result.storage();
    record<T>("slice_channels", {xs}, ys, [=]() {
      if (ys->grad.empty() || !wants_grad(xs)) return;
      auto& d = xs->grad_buffer();
      for (std::int64_t s = 0; s < n; ++s)
        for (std::int64_t i = 0; i < count * hw; ++i) d[(s * c + begin) * hw + i] += ys->grad[s * count * hw + i];
    });
  }
  return result;
}

template <typename T>
BasicTensor<T> scale_samples(const BasicTensor<T>& x, const std::vector<double>& factors) {
  require(x.rank() >= 1 && static_cast<std::int64_t>(factors.size()) == x.dim(0),
          "scale_samples: " + std::to_string(factors.size()) + " factors for " + shape_str(x.shape()));
  const auto n = x.dim(0);
  const auto per = n == 0 ? std::int64_t{0} : x.numel() / n;
  std::vector<T> out(x.data().begin(), x.data().end());
  for (std::int64_t s = 0; s < n; ++s)
    for (std::int64_t i = 0; i < per; ++i) out[s * per + i] *= static_cast<T>(factors[s]);
  const bool track = tracking<T>({&x});
  auto result = make_output<T>("scale_samples", x.shape(), std::move(out), track);
  if (track) {
    Storage<T> xs = x.storage(), ys = result.storage();
    record<T>("scale_samples", {xs}, ys, [=]() {
      if (ys->grad.empty() || !wants_grad(xs)) return;
      auto& d = xs->grad_buffer();
      for (std::int64_t s = 0; s < n; ++s)
        for (std::int64_t i = 0; i < per; ++i) d[s * per + i] += ys->grad[s * per + i] * static_cast<T>(factors[s]);
    });
  }
  return result;
}

namespace {

template <typename T>
BasicTensor<T> scaled_sum(const BasicTensor<T>& x, double factor, const char* op) {
  double acc = 0.0;
  for (const T v : x.data()) acc += v;
  const bool track = tracking<T>({&x});
  auto result = make_output<T>(op, Shape{1}, {static_cast<T>(acc * factor)}, track);
  if (track) {
    Storage<T> xs = x.storage(), ys = result.storage();
    record<T>(op, {xs}, ys, [=]() {
      if (ys->grad.empty() || !wants_grad(xs)) return;
      const T g = static_cast<T>(ys->grad[0] * factor);
      for (auto& d : xs->grad_buffer()) d += g;
    });
  }
  return result;
}

}  // namespace

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x) {
  return scaled_sum(x, 1.0, "sum");
}

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& x) {
  return scaled_sum(x, 1.0 / static_cast<double>(x.numel()), "mean");
}

template <typename T>
BasicTensor<T> mse(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require(a.shape() == b.shape(),
          "mse: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) + " differ");
  const auto count = static_cast<double>(a.numel());
  double acc = 0.0;
  for (std::size_t i = 0; i < a.data().size(); ++i) {
    const double d = static_cast<double>(a.data()[i]) - b.data()[i];
    acc += d * d;
  }
  const bool track = tracking<T>({&a, &b});
  auto result = make_output<T>("mse", Shape{1}, {static_cast<T>(acc / count)}, track);
  if (track) {
    Storage<T> as = a.storage(), bs = b.storage(), ys = result.storage();
    record<T>("mse", {as, bs}, ys, [=]() {
      if (ys->grad.empty()) return;
      const double g = ys->grad[0] * 2.0 / count;
      if (wants_grad(as)) {
        auto& d = as->grad_buffer();
        for (std::size_t i = 0; i < d.size(); ++i) {
          d[i] += static_cast<T>(g * (static_cast<double>(as->data[i]) - bs->data[i]));
        }
      }
      if (wants_grad(bs)) {
        auto& d = bs->grad_buffer();
        for (std::size_t i = 0; i < d.size(); ++i) {
          d[i] -= static_cast<T>(g * (static_cast<double>(as->data[i]) - bs->data[i]));
        }
      }
    });
  }
  return result;
}

#define PAIRDIFF_INSTANTIATE(T)                                                                    \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&,                     \
                                 const BasicTensor<T>&, int, int);                                 \
  template BasicTensor<T> upsample_nearest2x(const BasicTensor<T>&);                               \
  template BasicTensor<T> linear(const BasicTensor<T>&, const BasicTensor<T>&,                     \
                                 const BasicTensor<T>&);                                           \
  template BasicTensor<T> group_norm(const BasicTensor<T>&, int, const BasicTensor<T>&,            \
                                     const BasicTensor<T>&, double);                               \
  template BasicTensor<T> silu(const BasicTensor<T>&);                                             \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                       \
  template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);                       \
  template BasicTensor<T> scale(const BasicTensor<T>&, double);                                    \
  template BasicTensor<T> add_channelwise(const BasicTensor<T>&, const BasicTensor<T>&);           \
  template BasicTensor<T> concat_channels(const BasicTensor<T>&, const BasicTensor<T>&);           \
  template BasicTensor<T> slice_channels(const BasicTensor<T>&, std::int64_t, std::int64_t);      \
  template BasicTensor<T> scale_samples(const BasicTensor<T>&, const std::vector<double>&);       \
  template BasicTensor<T> sum(const BasicTensor<T>&);                                              \
  template BasicTensor<T> mean(const BasicTensor<T>&);                                             \
  template BasicTensor<T> mse(const BasicTensor<T>&, const BasicTensor<T>&);

PAIRDIFF_INSTANTIATE(float)
PAIRDIFF_INSTANTIATE(double)

#undef PAIRDIFF_INSTANTIATE

}  // namespace pairdiff::ops
