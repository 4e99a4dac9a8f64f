// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "pairdiff/denoiser.hpp"
#include "pairdiff/error.hpp"
#include "pairdiff/grad_check.hpp"
#include "pairdiff/ops.hpp"
#include "test_util.hpp"

using namespace pairdiff;
using pairdiff::testing::random_tensor;
using pairdiff::testing::values;

namespace {

DenoiserConfig tiny_config() {
  DenoiserConfig cfg;
  cfg.base_width = 8;
  cfg.depth = 2;
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

// Closed-form parameter count, layer by layer.
std::int64_t analytic_param_count(const DenoiserConfig& c) {
  auto conv = [](std::int64_t o, std::int64_t i) { return 9 * o * i + o; };
  auto lin = [](std::int64_t f, std::int64_t g) { return f * g + g; };
  auto norm = [](std::int64_t ch) { return 2 * ch; };
  const std::int64_t b = c.base_width;
  std::int64_t n = conv(b, 2 * c.channels + 2) + lin(c.time_dim + 2 * c.d_pos, c.embed_hidden);
  std::int64_t prev = b;
  for (int l = 0; l < c.depth; ++l) {
    const std::int64_t w = b << l;
    n += conv(w, prev) + norm(w) + lin(c.embed_hidden, w) + conv(w, w) + norm(w);
    prev = w;
  }
  for (int l = c.depth - 2; l >= 0; --l) n += conv(b << l, (b << (l + 1)) + (b << l)) + norm(b << l);
  n += conv(b, 2 * b) + norm(b) + conv(2 * c.channels, b);
  n += lin(c.d_text, c.text_hidden) + lin(c.text_hidden, c.d_model);
  n += conv(c.c_f, 2) + conv(c.c_f, c.c_f);
  return n;
}

template <typename T>
DenoiserExtras<T> make_extras(const DenoiserConfig& cfg, std::int64_t n, std::int64_t h, std::uint64_t seed) {
  DenoiserExtras<T> e;
  e.pos = random_tensor<T>({n, 2 * cfg.d_pos}, seed);
  e.flow = random_tensor<T>({n, 2, h, h}, seed + 1);
  e.text = random_tensor<T>({n, cfg.d_text}, seed + 2, 0.3);
  return e;
}

}  // namespace

TEST(DenoiserConfig, Validation) {
  DenoiserConfig ok;
  EXPECT_NO_THROW(ok.validate());
  auto bad = ok;
  bad.depth = 4;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = ok;
  bad.base_width = 4;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = ok;
  bad.d_model = 17;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(CountParams, EmptyAndSingleConv) {
  EXPECT_EQ(count_params(DenoiserWeights{}), 0);
  DenoiserWeights w;
  w.add("c.w", Tensor::zeros({8, 1, 3, 3}));
  w.add("c.b", Tensor::zeros({8}));
  EXPECT_EQ(count_params(w), 80);
}

TEST(CountParams, MatchesAnalyticOracle) {
  DenoiserConfig three;
  three.depth = 3;
  three.d_model = 64;
  for (const auto& cfg : {DenoiserConfig{}, tiny_config(), three}) {
    EXPECT_EQ(count_params(init_weights(cfg, 1)), analytic_param_count(cfg));
  }
}

TEST(InitWeights, DeterministicAndNamed) {
  const auto a = init_weights(DenoiserConfig{}, 42);
  const auto b = init_weights(DenoiserConfig{}, 42);
  const auto c = init_weights(DenoiserConfig{}, 43);
  ASSERT_EQ(a.names(), b.names());
  bool differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(values(a.tensors()[i]), values(b.tensors()[i]));
    differs |= values(a.tensors()[i]) != values(c.tensors()[i]);
  }
  EXPECT_TRUE(differs);
  DenoiserWeights dup;
  dup.add("x", Tensor::zeros({1}));
  EXPECT_THROW(dup.add("x", Tensor::zeros({1})), ContractError);
}

TEST(Denoiser, OutputShapeAndRange) {
  const DenoiserConfig cfg;
  const auto w = init_weights(cfg, 3);
  auto packed = random_tensor<float>({2, cfg.in_channels(), 32, 32}, 4);
  auto extras = make_extras<float>(cfg, 2, 32, 5);
  const std::vector<int> t = {1, 80};
  const auto y = denoiser_forward(cfg, w, packed, t, extras, make_linear_schedule(100, 1e-3, 0.2));
  EXPECT_EQ(y.shape(), (Shape{2, cfg.out_channels(), 32, 32}));
  for (float v : y.data()) {
    EXPECT_TRUE(std::isfinite(v));
    EXPECT_LE(std::abs(v), 10.0f);
  }
}

TEST(Denoiser, IndivisibleDimsAreConfigError) {
  const DenoiserConfig cfg;
  const auto w = init_weights(cfg, 3);
  auto extras = make_extras<float>(cfg, 1, 30, 5);
  const std::vector<int> t = {1};
  EXPECT_THROW(denoiser_forward(cfg, w, random_tensor<float>({1, 4, 30, 30}, 1), t, extras,
                                make_linear_schedule(100, 1e-3, 0.2)),
               ConfigError);
  EXPECT_THROW(denoiser_forward(cfg, w, random_tensor<float>({1, 3, 32, 32}, 1), t, extras,
                                make_linear_schedule(100, 1e-3, 0.2)),
               DimensionError);
}

TEST(Denoiser, DroppedConditioningEqualsZeroAdapters) {
  const auto cfg = tiny_config();
  const auto sched = make_linear_schedule(100, 1e-3, 0.2);
  auto w = init_weights(cfg, 7);
  auto packed = random_tensor<float>({2, cfg.in_channels(), 16, 16}, 8);
  auto extras = make_extras<float>(cfg, 2, 16, 9);
  const std::vector<int> t = {5, 50};

  auto dropped = extras;
  dropped.flow_keep = {0, 0};
  dropped.text_keep = {0, 0};
  const auto y_drop = denoiser_forward(cfg, w, packed, t, dropped, sched);

  auto zeroed = w.clone();
  for (const auto& name : zeroed.names()) {
    if (name.starts_with("flow.") || name.starts_with("text.")) {
      auto& p = zeroed.at(name);
      p = Tensor::zeros(p.shape());
    }
  }
  const auto y_zero = denoiser_forward(cfg, zeroed, packed, t, extras, sched);
  EXPECT_EQ(values(y_drop), values(y_zero));

  // partial dropout only affects the dropped sample
  auto half = extras;
  half.flow_keep = {1, 0};
  half.text_keep = {1, 0};
  const auto y_full = denoiser_forward(cfg, w, packed, t, extras, sched);
  const auto y_half = denoiser_forward(cfg, w, packed, t, half, sched);
  const auto plane = y_full.numel() / 2;
  for (std::int64_t i = 0; i < plane; ++i) EXPECT_EQ(y_half.data()[i], y_full.data()[i]);
  for (std::int64_t i = plane; i < 2 * plane; ++i) EXPECT_EQ(y_half.data()[i], y_drop.data()[i]);
}

TEST(Denoiser, ConsumesTheSecondMaskChannel) {
  const DenoiserConfig cfg;
  const auto sched = make_linear_schedule(100, 1e-3, 0.2);
  const auto w = init_weights(cfg, 11);
  auto packed = random_tensor<float>({1, cfg.in_channels(), 16, 16}, 12);
  auto extras = make_extras<float>(cfg, 1, 16, 13);
  const std::vector<int> t = {40};
  const auto y0 = denoiser_forward(cfg, w, packed, t, extras, sched);
  auto bumped = packed.clone();
  for (int i = 0; i < 256; ++i) bumped.mutable_data()[3 * 256 + i] += 0.5f;
  const auto y1 = denoiser_forward(cfg, w, bumped, t, extras, sched);
  double delta = 0;
  for (std::int64_t i = 0; i < y0.numel(); ++i) delta += std::abs(y1.data()[i] - y0.data()[i]);
  EXPECT_GT(delta, 1e-3);
}

TEST(Denoiser, EveryParameterReceivesGradient) {
  const DenoiserConfig cfg;
  const auto sched = make_linear_schedule(100, 1e-3, 0.2);
  auto w = init_weights(cfg, 14);
  w.set_requires_grad(true);
  auto x0 = random_tensor<float>({4, 2, 16, 16}, 15);
  auto cond = random_tensor<float>({4, 2, 16, 16}, 16);
  auto eps = random_tensor<float>({4, 2, 16, 16}, 17);
  auto extras = make_extras<float>(cfg, 4, 16, 18);
  const std::vector<int> t = {3, 30, 60, 99};
  {
    Tape tape;
    TapeScope scope(tape);
    EpsFn<float> net = [&](const Tensor& packed, std::span<const int> ts) {
      return denoiser_forward(cfg, w, packed, ts, extras, sched);
    };
    backward(ddpm_loss(net, x0, cond, t, eps, sched));
  }
  for (std::size_t i = 0; i < w.size(); ++i) {
    const auto& p = w.tensors()[i];
    ASSERT_TRUE(p.has_grad()) << w.names()[i];
    double norm = 0;
    for (float g : p.grad()) norm += std::abs(g);
    EXPECT_GT(norm, 0.0) << w.names()[i];
  }
}

TEST(Denoiser, FullLossGradientMatchesFiniteDifferences) {
  const auto cfg = tiny_config();
  const auto sched = make_linear_schedule(100, 1e-3, 0.2);
  const auto w = init_weights(cfg, 20).cast<double>();
  auto x0 = random_tensor<double>({2, 2, 16, 16}, 21, 0.5);
  auto cond = random_tensor<double>({2, 2, 16, 16}, 22, 0.5);
  auto eps = random_tensor<double>({2, 2, 16, 16}, 23);
  auto extras = make_extras<double>(cfg, 2, 16, 24);
  const std::vector<int> t = {12, 77};
  for (std::size_t p = 0; p < w.size(); ++p) {
    ScalarFn<double> f = [&](const TensorD& leaf) {
      auto ws = w;  // shares storage except for the swapped-in leaf
      ws.tensors()[p] = leaf;
      EpsFn<double> net = [&](const TensorD& packed, std::span<const int> ts) {
        return denoiser_forward(cfg, ws, packed, ts, extras, sched);
      };
      return ddpm_loss(net, x0, cond, t, eps, sched);
    };
    EXPECT_LE(grad_check(f, w.tensors()[p], 1e-5, 6, p), 1e-3) << w.names()[p];
  }
}

TEST(Checkpointing, NamedRoundTrip) {
  const DenoiserConfig cfg;
  const auto w = init_weights(cfg, 30);
  const auto back = from_named(decode_checkpoint(encode_checkpoint(to_named(w))));
  EXPECT_NO_THROW(check_weights(cfg, back));
  for (std::size_t i = 0; i < w.size(); ++i) EXPECT_EQ(values(w.tensors()[i]), values(back.tensors()[i]));
  DenoiserConfig other = cfg;
  other.base_width = 8;
  other.d_model = 16;
  other.c_f = 8;
  EXPECT_THROW(check_weights(other, back), ConfigError);
}
