#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "cali/optim.hpp"
#include "cali/tensor.hpp"
#include "test_util.hpp"

using namespace cali;
using testutil::max_grad_rel_err;
using testutil::random_tensor;

TEST_CASE("conv2d: 1x1 identity kernel reproduces the input") {
  Rng rng(11);
  Tensor x = random_tensor<float>({1, 4, 4}, rng);
  Tensor k = Tensor::from_data({1, 1, 1, 1}, {1.0f});
  Tensor b = Tensor::zeros({1});
  Tensor y = conv2d(x, k, b, 1, 0);
  REQUIRE(y.shape() == std::vector<int>{1, 4, 4});
  for (size_t i = 0; i < y.data().size(); ++i) CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("conv2d: all-ones 3x3 kernel on constant input counts the support") {
  Tensor x = Tensor::full({1, 5, 5}, 2.0f);
  Tensor k = Tensor::full({1, 1, 3, 3}, 1.0f);
  Tensor b = Tensor::zeros({1});
  Tensor y = conv2d(x, k, b, 1, 1);
  REQUIRE(y.shape() == std::vector<int>{1, 5, 5});
  // interior: 9 taps * 2.0, corner: 4 taps * 2.0
  CHECK(y.data()[2 * 5 + 2] == doctest::Approx(18.0f));
  CHECK(y.data()[0] == doctest::Approx(8.0f));
}

TEST_CASE("conv2d: matches the nested-loop oracle on random batched input") {
  Rng rng(7);
  for (int stride : {1, 2}) {
    for (int pad : {0, 1}) {
      CAPTURE(stride);
      CAPTURE(pad);
      std::vector<double> in_d(2 * 3 * 5 * 5), k_d(4 * 3 * 3 * 3), b_d(4);
      for (auto& v : in_d) v = rng.uniform(-1, 1);
      for (auto& v : k_d) v = rng.uniform(-1, 1);
      for (auto& v : b_d) v = rng.uniform(-1, 1);

      std::vector<float> in_f(in_d.begin(), in_d.end());
      std::vector<float> k_f(k_d.begin(), k_d.end());
      std::vector<float> b_f(b_d.begin(), b_d.end());
      Tensor y = conv2d(Tensor::from_data({2, 3, 5, 5}, in_f), Tensor::from_data({4, 3, 3, 3}, k_f),
                        Tensor::from_data({4}, b_f), stride, pad);
      std::vector<double> want = testutil::conv2d_oracle(in_d, 2, 3, 5, 5, k_d, 4, 3, b_d, stride, pad);
      REQUIRE(y.data().size() == want.size());
      for (size_t i = 0; i < want.size(); ++i)
        CHECK(std::abs(y.data()[i] - want[i]) < 1e-5);
    }
  }
}

TEST_CASE("conv2d: shape and channel mismatches are rejected") {
  Tensor x = Tensor::zeros({3, 8, 8});
  Tensor k = Tensor::zeros({4, 2, 3, 3});  // expects 2 input channels
  Tensor b = Tensor::zeros({4});
  CHECK_THROWS_AS(conv2d(x, k, b, 1, 1), DimensionError);
  Tensor k_ok = Tensor::zeros({4, 3, 3, 3});
  CHECK_THROWS_AS(conv2d(x, k_ok, Tensor::zeros({5}), 1, 1), DimensionError);
  // 4x4 kernel on a 1x1 input with pad 1 has no valid output position
  CHECK_THROWS_AS(conv2d(Tensor::zeros({1, 1, 1}), Tensor::zeros({1, 1, 4, 4}), Tensor::zeros({1}), 2, 1),
                  ConfigError);
}

TEST_CASE("activations: hand values") {
  Tensor x = Tensor::from_data({4}, {-2.0f, 0.0f, 3.0f, -0.5f});
  Tensor y = leaky_relu(x, 0.2f);
  CHECK(y.data()[0] == doctest::Approx(-0.4f));
  CHECK(y.data()[1] == doctest::Approx(0.0f));
  CHECK(y.data()[2] == doctest::Approx(3.0f));
  CHECK(y.data()[3] == doctest::Approx(-0.1f));

  Tensor s = sigmoid(Tensor::from_data({3}, {0.0f, 30.0f, -30.0f}));
  CHECK(s.data()[0] == doctest::Approx(0.5f));
  CHECK(s.data()[1] < 1.0f);  // clamped strictly inside (0,1)
  CHECK(s.data()[2] > 0.0f);

  Tensor lg = log_clamped(Tensor::from_data({2}, {0.0f, 1.0f}), 1e-7f);
  CHECK(lg.data()[0] == doctest::Approx(std::log(1e-7f)));
  CHECK(lg.data()[1] == doctest::Approx(0.0f));
}

TEST_CASE("softmax: normalizes, is shift-invariant, handles axis choice") {
  Rng rng(3);
  Tensor x = random_tensor<float>({3, 2, 2}, rng, -4, 4);
  Tensor p = softmax(x, 0);
  for (int px = 0; px < 4; ++px) {
    float total = p.data()[px] + p.data()[4 + px] + p.data()[8 + px];
    CHECK(total == doctest::Approx(1.0f).epsilon(1e-6));
  }

  Tensor shifted = scale_add(x, 1.0f, 100.0f);
  Tensor p2 = softmax(shifted, 0);
  for (size_t i = 0; i < p.data().size(); ++i)
    CHECK(std::abs(p.data()[i] - p2.data()[i]) < 1e-6f);

  Tensor flat = Tensor::from_data({4}, {1.0f, 1.0f, 1.0f, 1.0f});
  Tensor u = softmax(flat, 0);
  for (float v : u.data()) CHECK(v == doctest::Approx(0.25f));

  CHECK_THROWS_AS(softmax(flat, 1), DimensionError);
}

TEST_CASE("upsample_nearest: repeats blocks and rejects bad factors") {
  Tensor x = Tensor::from_data({1, 2, 2}, {1.0f, 2.0f, 3.0f, 4.0f});
  Tensor y = upsample_nearest(x, 2);
  REQUIRE(y.shape() == std::vector<int>{1, 4, 4});
  CHECK(y.data()[0] == 1.0f);
  CHECK(y.data()[1] == 1.0f);
  CHECK(y.data()[5] == 1.0f);
  CHECK(y.data()[2] == 2.0f);
  CHECK(y.data()[15] == 4.0f);
  CHECK_THROWS_AS(upsample_nearest(x, 0), ConfigError);
}

TEST_CASE("backward: repeated calls accumulate, zero_grad resets") {
  Tensor64 x = Tensor64::from_data({2}, {1.5, -0.5}, true);
  auto loss = [&]() { return sum_all(mul(x, x)); };
  loss().backward();
  CHECK(x.grad()[0] == doctest::Approx(3.0));
  loss().backward();
  CHECK(x.grad()[0] == doctest::Approx(6.0));  // accumulated
  x.zero_grad();
  loss().backward();
  CHECK(x.grad()[0] == doctest::Approx(3.0));
}

TEST_CASE("gradients: every elementwise op matches finite differences") {
  Rng rng(23);
  Tensor64 a = random_tensor<double>({2, 3}, rng, 0.2, 2.0, true);
  Tensor64 b = random_tensor<double>({2, 3}, rng, 0.3, 1.5, true);

  CHECK(max_grad_rel_err([&] { return sum_all(add(a, b)); }, {&a, &b}) < 1e-4);
  CHECK(max_grad_rel_err([&] { return sum_all(sub(a, b)); }, {&a, &b}) < 1e-4);
  CHECK(max_grad_rel_err([&] { return sum_all(mul(a, b)); }, {&a, &b}) < 1e-4);
  CHECK(max_grad_rel_err([&] { return sum_all(div(a, b)); }, {&a, &b}) < 1e-4);
  CHECK(max_grad_rel_err([&] { return sum_all(sqrt_of(a)); }, {&a}) < 1e-4);
  CHECK(max_grad_rel_err([&] { return sum_all(log_clamped(a, 1e-7)); }, {&a}) < 1e-4);
  CHECK(max_grad_rel_err([&] { return mean_all(scale_add(a, 2.5, -1.0)); }, {&a}) < 1e-4);

  // abs away from the kink
  Tensor64 c = random_tensor<double>({8}, rng, 0.5, 2.0, true);
  for (size_t i = 0; i < 4; ++i) c.data()[i] = -c.data()[i];
  CHECK(max_grad_rel_err([&] { return sum_all(abs_of(c)); }, {&c}) < 1e-4);
}

TEST_CASE("gradients: activations and softmax match finite differences") {
  Rng rng(29);
  Tensor64 x = random_tensor<double>({3, 2, 2}, rng, -2.0, 2.0, true);
  // keep leaky_relu inputs away from the kink at 0
  for (auto& v : x.data())
    if (std::abs(v) < 0.05) v = 0.1;
  Tensor64 w = random_tensor<double>({3, 2, 2}, rng, -1.0, 1.0);

  CHECK(max_grad_rel_err([&] { return sum_all(mul(leaky_relu(x, 0.2), w)); }, {&x}) < 1e-4);
  CHECK(max_grad_rel_err([&] { return sum_all(mul(sigmoid(x), w)); }, {&x}) < 1e-4);
  CHECK(max_grad_rel_err([&] { return sum_all(mul(softmax(x, 0), w)); }, {&x}) < 1e-4);
}

TEST_CASE("gradients: conv2d and upsample match finite differences") {
  Rng rng(31);
  Tensor64 x = random_tensor<double>({2, 5, 5}, rng, -1.0, 1.0, true);
  Tensor64 k = random_tensor<double>({3, 2, 3, 3}, rng, -0.5, 0.5, true);
  Tensor64 b = random_tensor<double>({3}, rng, -0.1, 0.1, true);
  Tensor64 w = random_tensor<double>({3, 3, 3}, rng, -1.0, 1.0);

  auto loss = [&] { return sum_all(mul(conv2d(x, k, b, 2, 1), w)); };
  CHECK(max_grad_rel_err(loss, {&x, &k, &b}) < 1e-4);

  Tensor64 u = random_tensor<double>({2, 3, 3}, rng, -1.0, 1.0, true);
  Tensor64 wu = random_tensor<double>({2, 6, 6}, rng, -1.0, 1.0);
  CHECK(max_grad_rel_err([&] { return sum_all(mul(upsample_nearest(u, 2), wu)); }, {&u}) < 1e-4);
}

TEST_CASE("gradients: two-layer conv net with softmax cross-entropy") {
  // The end-to-end composition exercised by the real model stack, in 64-bit.
  for (uint64_t seed : {1ull, 2ull, 3ull}) {
    CAPTURE(seed);
    Rng rng(seed);
    Tensor64 x = random_tensor<double>({2, 6, 6}, rng, -1.0, 1.0);
    Tensor64 k1 = random_tensor<double>({4, 2, 3, 3}, rng, -0.4, 0.4, true);
    Tensor64 b1 = random_tensor<double>({4}, rng, -0.1, 0.1, true);
    Tensor64 k2 = random_tensor<double>({3, 4, 3, 3}, rng, -0.4, 0.4, true);
    Tensor64 b2 = random_tensor<double>({3}, rng, -0.1, 0.1, true);
    // one-hot target over 3 classes on a 3x3 output grid
    std::vector<double> y(3 * 3 * 3, 0.0);
    for (int px = 0; px < 9; ++px) y[static_cast<size_t>(rng.uniform_int(0, 2)) * 9 + px] = 1.0;
    Tensor64 target = Tensor64::from_data({3, 3, 3}, y);

    testutil::clear_kinks(b1, [&] { return conv2d(x, k1, b1, 2, 1); });

    auto loss = [&] {
      Tensor64 h = leaky_relu(conv2d(x, k1, b1, 2, 1), 0.2);
      Tensor64 logits = conv2d(h, k2, b2, 1, 1);
      Tensor64 p = softmax(logits, 0);
      return neg(scale_add(sum_all(mul(target, log_clamped(p, 1e-7))), 1.0 / 9.0, 0.0));
    };
    CHECK(max_grad_rel_err(loss, {&k1, &b1, &k2, &b2}) < 1e-4);
  }
}

TEST_CASE("determinism: identical graphs produce bitwise-identical outputs") {
  auto run = [] {
    Rng rng(99);
    Tensor x = random_tensor<float>({3, 8, 8}, rng);
    Tensor k = random_tensor<float>({4, 3, 3, 3}, rng);
    Tensor b = random_tensor<float>({4}, rng);
    return testutil::tensor_bits(softmax(conv2d(leaky_relu(x, 0.2f), k, b, 2, 1), 0));
  };
  CHECK(run() == run());
}

TEST_CASE("optimizer: SGD momentum reproduces the hand-unrolled update") {
  // constant gradient g, lr=0.1, momentum=0.9, no decay:
  // v1 = g, v2 = 1.9 g  ->  total displacement 0.1 * g * (1 + 1.9)
  Tensor p = Tensor::from_data({2}, {1.0f, -2.0f}, true);
  std::vector<NamedParam> params{{"p", p}};
  Optimizer opt({OptKind::SgdMomentum, 0.1, 0.9, 0.0, 0.9, 0.99, 1e-8});

  auto set_grad = [&](float g0, float g1) {
    p.zero_grad();
    p.grad()[0] = g0;
    p.grad()[1] = g1;
  };
  set_grad(0.5f, -1.0f);
  opt.step(params);
  CHECK(p.data()[0] == doctest::Approx(1.0f - 0.1f * 0.5f));
  set_grad(0.5f, -1.0f);
  opt.step(params);
  CHECK(p.data()[0] == doctest::Approx(1.0f - 0.1f * 0.5f * (1.0f + 1.9f)));
  CHECK(p.data()[1] == doctest::Approx(-2.0f + 0.1f * 1.0f * (1.0f + 1.9f)));
}

TEST_CASE("optimizer: weight decay folds into the effective gradient") {
  Tensor p = Tensor::from_data({1}, {2.0f}, true);
  std::vector<NamedParam> params{{"p", p}};
  Optimizer opt({OptKind::SgdMomentum, 0.1, 0.0, 0.05, 0.9, 0.99, 1e-8});
  p.zero_grad();
  p.grad()[0] = 0.3f;
  opt.step(params);
  // g_eff = 0.3 + 0.05 * 2.0 = 0.4
  CHECK(p.data()[0] == doctest::Approx(2.0f - 0.1f * 0.4f));
}

TEST_CASE("optimizer: first Adam step has near-unit normalized magnitude") {
  Tensor p = Tensor::from_data({3}, {0.0f, 0.0f, 0.0f}, true);
  std::vector<NamedParam> params{{"p", p}};
  Optimizer opt({OptKind::Adam, 1e-3, 0.9, 0.0, 0.9, 0.99, 1e-8});
  p.zero_grad();
  p.grad()[0] = 0.25f;
  p.grad()[1] = -4.0f;
  p.grad()[2] = 1e-3f;
  opt.step(params);
  // update = lr * g / (|g| + eps) = lr * sign(g) to within eps
  CHECK(p.data()[0] == doctest::Approx(-1e-3f).epsilon(1e-3));
  CHECK(p.data()[1] == doctest::Approx(1e-3f).epsilon(1e-3));
  CHECK(p.data()[2] == doctest::Approx(-1e-3f).epsilon(1e-2));
}

TEST_CASE("optimizer: non-finite gradient aborts with the parameter name") {
  Tensor p = Tensor::from_data({1}, {1.0f}, true);
  std::vector<NamedParam> params{{"head.w", p}};
  Optimizer opt({OptKind::SgdMomentum, 0.1, 0.9, 0.0, 0.9, 0.99, 1e-8});
  p.zero_grad();
  p.grad()[0] = std::numeric_limits<float>::quiet_NaN();
  try {
    opt.step(params);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("head.w") != std::string::npos);
  }
}

TEST_CASE("poly_lr: endpoints, midpoint and monotonicity") {
  CHECK(poly_lr(2.5e-4, 0, 1000) == doctest::Approx(2.5e-4));
  CHECK(poly_lr(2.5e-4, 1000, 1000) == doctest::Approx(0.0));
  CHECK(poly_lr(1.0, 500, 1000) == doctest::Approx(std::pow(0.5, 0.9)));
  double prev = poly_lr(1.0, 0, 100);
  for (int i = 1; i <= 100; ++i) {
    double cur = poly_lr(1.0, i, 100);
    CHECK(cur <= prev + 1e-12);
    prev = cur;
  }
  CHECK(poly_lr(1.0, 2000, 1000) == doctest::Approx(0.0));  // clamped with warning
  CHECK_THROWS_AS(poly_lr(1.0, 0, 0), ConfigError);
}

TEST_CASE("tensor: scalar and shape misuse raise usage errors") {
  Tensor x = Tensor::zeros({2, 2});
  CHECK_THROWS_AS(x.item(), UsageError);
  Tensor y = Tensor::zeros({2, 2}, true);
  CHECK_THROWS_AS(mul(y, y).backward(), UsageError);  // non-scalar loss
  CHECK_THROWS_AS(add(x, Tensor::zeros({2, 3})), DimensionError);
}
