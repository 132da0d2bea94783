#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>

#include "cloak/adam.hpp"
#include "cloak/ops.hpp"

using namespace cloak::nn;
using cloak::ContractError;

namespace {

using V = Var<double>;
using Tn = Tensor<double>;

Tn random_tensor(Shape s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  Tn t(std::move(s));
  std::uniform_real_distribution<double> d(lo, hi);
  for (auto& v : t.vec()) v = d(rng);
  return t;
}

// Values bounded away from the kinks of relu-like functions.
Tn away_from_zero(Shape s, std::mt19937_64& rng) {
  Tn t = random_tensor(std::move(s), rng, 0.05, 1.0);
  std::bernoulli_distribution sign(0.5);
  for (auto& v : t.vec()) v = sign(rng) ? v : -v;
  return t;
}

double dot(const Tn& a, const Tn& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Reduces an op output to a scalar with fixed random weights so that every
// output element contributes to the checked gradient.
using Builder = std::function<V(std::vector<V>&)>;

double max_rel_error(const Builder& build, std::vector<Tn> inputs, std::mt19937_64& rng) {
  std::vector<V> vars;
  for (auto& t : inputs) vars.emplace_back(t, true);
  const V probe = build(vars);
  const Tn weights = random_tensor(probe.shape(), rng);
  auto scalar = [&](std::vector<V>& vs) { return mean(mul_const(build(vs), weights)); };

  const V loss = scalar(vars);
  backward(loss);

  double worst = 0.0;
  const double h = 1e-6;
  for (std::size_t a = 0; a < inputs.size(); ++a) {
    const Tn analytic = vars[a].grad().empty() ? Tn(inputs[a].shape()) : vars[a].grad();
    Tn numeric(inputs[a].shape());
    for (std::size_t i = 0; i < inputs[a].size(); ++i) {
      auto eval = [&](double delta) {
        std::vector<V> vs;
        for (std::size_t b = 0; b < inputs.size(); ++b) {
          Tn t = inputs[b];
          if (b == a) t[i] += delta;
          vs.emplace_back(t, false);
        }
        return scalar(vs).value()[0];
      };
      numeric[i] = (eval(h) - eval(-h)) / (2 * h);
    }
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < numeric.size(); ++i) {
      num += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
      den += analytic[i] * analytic[i] + numeric[i] * numeric[i];
    }
    if (den > 0) worst = std::max(worst, std::sqrt(num / den));
  }
  return worst;
}

struct ConvCase {
  std::size_t n, c, h, w, f, k, stride, pad;
};

ConvCase random_conv_case(std::mt19937_64& rng) {
  auto pick = [&](std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); };
  ConvCase cc{pick(1, 2), pick(1, 3), pick(3, 7), pick(3, 7), pick(1, 3), pick(1, 4), pick(1, 2), pick(0, 1)};
  cc.k = std::min(cc.k, std::min(cc.h, cc.w) + 2 * cc.pad);
  return cc;
}

constexpr int kShapes = 50;

}  // namespace

TEST(Conv2d, IdentityKernel) {
  std::mt19937_64 rng(1);
  const Tn x = random_tensor({2, 1, 5, 6}, rng);
  const V y = conv2d(V(x), V(Tn({1, 1, 1, 1}, 1.0)), 1, 0);
  EXPECT_EQ(y.value(), x);
}

TEST(Conv2d, ZeroKernelGivesZeroOutputAndInputGradient) {
  std::mt19937_64 rng(2);
  V x(random_tensor({1, 2, 5, 5}, rng), true);
  V k(Tn({3, 2, 3, 3}), true);
  const V y = conv2d(x, k, 1, 1);
  for (auto v : y.value().vec()) EXPECT_EQ(v, 0.0);
  backward(mean(y));
  for (auto v : x.grad().vec()) EXPECT_EQ(v, 0.0);
}

TEST(Conv2d, SmallCaseFiniteDifferences) {
  std::mt19937_64 rng(3);
  const Builder f = [](std::vector<V>& v) { return conv2d(v[0], v[1], 1, 0); };
  EXPECT_LT(max_rel_error(f, {random_tensor({1, 1, 5, 5}, rng), random_tensor({1, 1, 3, 3}, rng)}, rng), 1e-5);
}

TEST(Conv2d, FiniteDifferencesOnRandomShapes) {
  std::mt19937_64 rng(4);
  for (int t = 0; t < kShapes; ++t) {
    const auto cc = random_conv_case(rng);
    const Builder f = [cc](std::vector<V>& v) { return conv2d(v[0], v[1], cc.stride, cc.pad); };
    const double err = max_rel_error(
        f, {random_tensor({cc.n, cc.c, cc.h, cc.w}, rng), random_tensor({cc.f, cc.c, cc.k, cc.k}, rng)}, rng);
    EXPECT_LT(err, 1e-5) << "case " << t;
  }
}

TEST(Conv2d, ShapeMismatchIsContractError) {
  EXPECT_THROW(conv2d(V(Tn({1, 2, 5, 5})), V(Tn({1, 3, 3, 3})), 1, 0), ContractError);
  EXPECT_THROW(conv2d(V(Tn({1, 2, 5})), V(Tn({1, 2, 3, 3})), 1, 0), ContractError);
}

TEST(ConvTranspose2d, OutputSizeFormula) {
  const V y = conv_transpose2d(V(Tn({1, 1, 4, 4}, 1.0)), V(Tn({1, 1, 3, 3}, 1.0)), 2, 0);
  EXPECT_EQ(y.shape(), (Shape{1, 1, 9, 9}));
  EXPECT_EQ(conv_transpose_size(4, 4, 2, 1), 8u);
}

TEST(ConvTranspose2d, ZeroInputGivesZeroOutput) {
  std::mt19937_64 rng(5);
  const V y = conv_transpose2d(V(Tn({2, 3, 4, 4})), V(random_tensor({3, 2, 4, 4}, rng)), 2, 1);
  for (auto v : y.value().vec()) EXPECT_EQ(v, 0.0);
}

TEST(ConvTranspose2d, AdjointOfConv2d) {
  std::mt19937_64 rng(6);
  int checked = 0;
  while (checked < kShapes) {
    const auto cc = random_conv_case(rng);
    const Tn k = random_tensor({cc.f, cc.c, cc.k, cc.k}, rng);
    const Tn x = random_tensor({cc.n, cc.c, cc.h, cc.w}, rng);
    const V ax = conv2d(V(x), V(k), cc.stride, cc.pad);
    // Only sizes where the transpose maps back onto x exactly (stride divides evenly).
    if (conv_transpose_size(ax.shape()[2], cc.k, cc.stride, cc.pad) != cc.h ||
        conv_transpose_size(ax.shape()[3], cc.k, cc.stride, cc.pad) != cc.w)
      continue;
    const Tn y = random_tensor(ax.shape(), rng);
    const V aty = conv_transpose2d(V(y), V(k), cc.stride, cc.pad);
    const double lhs = dot(ax.value(), y), rhs = dot(x, aty.value());
    EXPECT_LT(std::abs(lhs - rhs) / std::abs(lhs), 1e-10) << "case " << checked;
    ++checked;
  }
}

TEST(ConvTranspose2d, AdjointOnGanShapes) {
  std::mt19937_64 rng(7);
  const Tn k = random_tensor({8, 4, 4, 4}, rng);
  const Tn x = random_tensor({3, 4, 16, 16}, rng);
  const V ax = conv2d(V(x), V(k), 2, 1);
  const Tn y = random_tensor(ax.shape(), rng);
  const V aty = conv_transpose2d(V(y), V(k), 2, 1);
  ASSERT_EQ(aty.shape(), x.shape());
  const double lhs = dot(ax.value(), y), rhs = dot(x, aty.value());
  EXPECT_LT(std::abs(lhs - rhs) / std::abs(lhs), 1e-10);
}

TEST(ConvTranspose2d, FiniteDifferencesOnRandomShapes) {
  std::mt19937_64 rng(8);
  for (int t = 0; t < kShapes; ++t) {
    const auto cc = random_conv_case(rng);
    const std::size_t h = 1 + cc.h / 2, w = 1 + cc.w / 2;
    if ((h - 1) * cc.stride + cc.k <= 2 * cc.pad || (w - 1) * cc.stride + cc.k <= 2 * cc.pad) continue;
    const Builder f = [cc](std::vector<V>& v) { return conv_transpose2d(v[0], v[1], cc.stride, cc.pad); };
    const double err =
        max_rel_error(f, {random_tensor({cc.n, cc.f, h, w}, rng), random_tensor({cc.f, cc.c, cc.k, cc.k}, rng)}, rng);
    EXPECT_LT(err, 1e-5) << "case " << t;
  }
}

TEST(Dense, IdentityAndEmptyBatch) {
  std::mt19937_64 rng(9);
  const Tn x = random_tensor({4, 3}, rng);
  Tn eye({3, 3});
  for (int i = 0; i < 3; ++i) eye[i * 3 + i] = 1.0;
  EXPECT_EQ(dense(V(x), V(eye), V(Tn({3}))).value(), x);
  V w(eye, true), b(Tn({3}), true);
  const V empty = dense(V(Tn({0, 3})), w, b);
  EXPECT_EQ(empty.shape(), (Shape{0, 3}));
  EXPECT_THROW(dense(V(Tn({2, 4})), w, b), ContractError);
}

TEST(Dense, FiniteDifferencesOnRandomShapes) {
  std::mt19937_64 rng(10);
  std::uniform_int_distribution<std::size_t> d(1, 6);
  for (int t = 0; t < kShapes; ++t) {
    const std::size_t n = d(rng), in = d(rng), out = d(rng);
    const Builder f = [](std::vector<V>& v) { return dense(v[0], v[1], v[2]); };
    const double err =
        max_rel_error(f, {random_tensor({n, in}, rng), random_tensor({in, out}, rng), random_tensor({out}, rng)}, rng);
    EXPECT_LT(err, 1e-5) << "case " << t;
  }
}

TEST(Elementwise, KnownValues) {
  EXPECT_EQ(sigmoid(V(Tn({1}, 0.0))).value()[0], 0.5);
  EXPECT_DOUBLE_EQ(leaky_relu(V(Tn({1}, -1.0)), 0.2).value()[0], -0.2);
  EXPECT_EQ(relu(V(Tn({2}, {-1.0, 2.0}))).value(), Tn({2}, {0.0, 2.0}));
  EXPECT_DOUBLE_EQ(tanh(V(Tn({1}, 0.5))).value()[0], std::tanh(0.5));
}

TEST(Elementwise, FiniteDifferencesOnRandomShapes) {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<std::size_t> d(1, 5);
  const std::vector<std::pair<const char*, Builder>> ops = {
      {"relu", [](std::vector<V>& v) { return relu(v[0]); }},
      {"leaky_relu", [](std::vector<V>& v) { return leaky_relu(v[0], 0.2); }},
      {"sigmoid", [](std::vector<V>& v) { return sigmoid(v[0]); }},
      {"tanh", [](std::vector<V>& v) { return tanh(v[0]); }},
      {"reshape", [](std::vector<V>& v) { return reshape(v[0], {v[0].value().size()}); }},
      {"mean", [](std::vector<V>& v) { return mean(v[0]); }},
      {"exp_affine", [](std::vector<V>& v) { return exp_affine(v[0], -0.3, 1.7); }},
  };
  for (const auto& [name, f] : ops)
    for (int t = 0; t < kShapes; ++t) {
      const Shape s{d(rng), d(rng), d(rng)};
      EXPECT_LT(max_rel_error(f, {away_from_zero(s, rng)}, rng), 1e-5) << name << " case " << t;
    }
}

TEST(Elementwise, BinaryOpsFiniteDifferences) {
  std::mt19937_64 rng(12);
  std::uniform_int_distribution<std::size_t> d(1, 5);
  for (int t = 0; t < kShapes; ++t) {
    const std::size_t n = d(rng), c = d(rng), h = d(rng), w = d(rng);
    const Builder bias = [](std::vector<V>& v) { return add_channel_bias(v[0], v[1]); };
    EXPECT_LT(max_rel_error(bias, {random_tensor({n, c, h, w}, rng), random_tensor({c}, rng)}, rng), 1e-5);
    const Builder ws = [](std::vector<V>& v) { return weighted_sum(v[0], 0.3, v[1], -1.7); };
    EXPECT_LT(max_rel_error(ws, {random_tensor({n, c}, rng), random_tensor({n, c}, rng)}, rng), 1e-5);
    const Tn mask = random_tensor({h, w}, rng);
    const Builder mc = [mask](std::vector<V>& v) { return mul_const(v[0], mask); };
    EXPECT_LT(max_rel_error(mc, {random_tensor({n, h, w}, rng)}, rng), 1e-5);
  }
}

TEST(Losses, BceKnownValues) {
  const V l = bce_loss(V(Tn({2}, {0.5, 0.5})), Tn({2}, {1.0, 0.0}));
  EXPECT_NEAR(l.value()[0], std::log(2.0), 1e-12);
  const V exact = bce_loss(V(Tn({3}, {1.0, 0.0, 1.0})), Tn({3}, {1.0, 0.0, 1.0}));
  EXPECT_LE(exact.value()[0], 1e-6);
}

TEST(Losses, BceMatchesDirectSummation) {
  std::mt19937_64 rng(13);
  std::uniform_int_distribution<std::size_t> d(1, 40);
  std::bernoulli_distribution coin(0.5);
  for (int t = 0; t < kShapes; ++t) {
    const std::size_t n = d(rng);
    const Tn p = random_tensor({n}, rng, 0.01, 0.99);
    Tn y({n});
    for (auto& v : y.vec()) v = coin(rng) ? 1.0 : 0.0;
    double direct = 0.0;
    for (std::size_t i = 0; i < n; ++i) direct += y[i] * std::log(p[i]) + (1 - y[i]) * std::log(1 - p[i]);
    direct = -direct / static_cast<double>(n);
    EXPECT_NEAR(bce_loss(V(p), y).value()[0], direct, 1e-12);
    const Builder f = [y](std::vector<V>& v) { return bce_loss(v[0], y); };
    EXPECT_LT(max_rel_error(f, {random_tensor({n}, rng, 0.05, 0.95)}, rng), 1e-5);
  }
}

TEST(Losses, Mse) {
  std::mt19937_64 rng(14);
  const Tn target = random_tensor({4, 3}, rng);
  EXPECT_EQ(mse_loss(V(target), target).value()[0], 0.0);
  Tn shifted = target;
  for (auto& v : shifted.vec()) v += 0.75;
  EXPECT_NEAR(mse_loss(V(shifted), target).value()[0], 0.5625, 1e-14);
  V p(shifted, true);
  backward(mse_loss(p, target));
  for (auto g : p.grad().vec()) EXPECT_NEAR(g, 2 * 0.75 / 12.0, 1e-14);
  for (int t = 0; t < kShapes; ++t) {
    const Tn tg = random_tensor({static_cast<std::size_t>(1 + t % 9)}, rng);
    const Builder f = [tg](std::vector<V>& v) { return mse_loss(v[0], tg); };
    EXPECT_LT(max_rel_error(f, {random_tensor(tg.shape(), rng)}, rng), 1e-5);
  }
}

TEST(StRound, ForwardValues) {
  const V y = st_round(V(Tn({5}, {0.7, 0.3, 0.5, -0.2, 1.4})));
  EXPECT_EQ(y.value(), Tn({5}, {1.0, 0.0, 1.0, 0.0, 1.0}));
  std::mt19937_64 rng(15);
  const V r = st_round(V(random_tensor({1000}, rng, 0.0, 1.0)));
  for (auto v : r.value().vec()) EXPECT_TRUE(v == 0.0 || v == 1.0);
}

TEST(StRound, BackwardFactor) {
  EXPECT_EQ(st_round_factor(0.5), 0.25);
  const double s = 1.0 / (1.0 + std::exp(5.0));
  EXPECT_NEAR(st_round_factor(0.0), s * (1 - s), 1e-12);
  EXPECT_NEAR(s, 6.6929e-3, 1e-7);
  EXPECT_NEAR(st_round_factor(0.0), 6.6481e-3, 1e-7);
  for (double x = -2.0; x <= 3.0; x += 0.01) {
    const double f = st_round_factor(x);
    EXPECT_GT(f, 0.0);
    EXPECT_LE(f, 0.25);
  }
}

TEST(StRound, BackwardScalesUpstreamGradient) {
  V x(Tn({3}, {0.0, 0.5, 0.9}), true);
  const Tn seed({3}, {1.0, 2.0, 3.0});
  backward(st_round(x), &seed);
  EXPECT_EQ(x.grad()[1], 0.5);
  EXPECT_NEAR(x.grad()[0], st_round_factor(0.0), 1e-15);
  EXPECT_NEAR(x.grad()[2], 3.0 * st_round_factor(0.9), 1e-15);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Tn w({4}, {0.0, 1.0, -2.0, 5.0});
  const Tn g({4}, {3.0, -0.5, 0.01, 7.0});
  AdamState<double> st;
  AdamConfig cfg;
  const Tn before = w;
  adam_step(w, g, st, cfg);
  EXPECT_EQ(st.step, 1u);
  // Exact up to the epsilon term: |delta| = lr |g| / (|g| + eps).
  for (std::size_t i = 0; i < 4; ++i)
    EXPECT_NEAR(std::abs(w[i] - before[i]), cfg.lr, cfg.lr * cfg.epsilon / std::abs(g[i]) + 1e-15);
}

TEST(Adam, ZeroGradientLeavesParameter) {
  Tn w({3}, {1.0, 2.0, 3.0});
  const Tn before = w;
  AdamState<double> st;
  for (int i = 0; i < 100; ++i) adam_step(w, Tn({3}), st, AdamConfig{});
  EXPECT_EQ(w, before);
  EXPECT_EQ(st.step, 100u);
}

TEST(Adam, ConvergesOnQuadratic) {
  Tn w({1}, 0.0);
  AdamState<double> st;
  AdamConfig cfg;
  cfg.lr = 0.1;
  for (int i = 0; i < 200; ++i) adam_step(w, Tn({1}, 2.0 * (w[0] - 3.0)), st, cfg);
  EXPECT_NEAR(w[0], 3.0, 0.1);
}

TEST(Adam, ShapeMismatchIsContractError) {
  Tn w({3});
  AdamState<double> st;
  EXPECT_THROW(adam_step(w, Tn({2}), st, AdamConfig{}), ContractError);
}

TEST(Tape, Deterministic) {
  std::mt19937_64 rng(16);
  const Tn x = random_tensor({2, 3, 8, 8}, rng), k = random_tensor({4, 3, 4, 4}, rng);
  auto run = [&] {
    V xv(x, true), kv(k, true);
    backward(mean(leaky_relu(conv2d(xv, kv, 2, 1), 0.2)));
    return std::make_pair(xv.grad(), kv.grad());
  };
  EXPECT_EQ(run(), run());
}
