#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "lappyr/gradcheck.hpp"
#include "lappyr/tensor.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace lappyr;

TEST_CASE("conv2d: constant image with normalized support") {
  auto x = Tensor<float>::full({1, 1, 3, 3}, 1.0f);
  auto w = Tensor<float>::full({1, 1, 3, 3}, 1.0f);
  auto b = Tensor<float>::zeros({1});
  ConvSpec spec{3, 3, 1, Padding::reflect, 1, 1};
  auto y = conv2d(x, w, b, spec);
  REQUIRE(y.shape() == std::vector<int>{1, 1, 3, 3});
  for (float v : y.data()) CHECK(v == doctest::Approx(9.0f));
}

TEST_CASE("conv2d: delta kernel is the identity map") {
  auto x = testutil::random_tensor<float>({2, 3, 8, 8}, 41);
  std::vector<float> wd(3 * 3 * 3 * 3, 0.0f);
  for (int co = 0; co < 3; ++co) wd[((co * 3 + co) * 3 + 1) * 3 + 1] = 1.0f;
  auto w = Tensor<float>::from_data({3, 3, 3, 3}, std::move(wd));
  for (Padding pad : {Padding::reflect, Padding::zero}) {
    auto y = conv2d(x, w, Tensor<float>(), ConvSpec{3, 3, 1, pad});
    CHECK(testutil::max_abs_diff<float>(y.data(), x.data()) == 0.0);
  }
}

TEST_CASE("conv2d: values match the direct gather oracle") {
  Rng rng(1234);
  for (int stride : {1, 2}) {
    for (bool reflect : {true, false}) {
      const int N = 2, Ci = 3, H = 8, W = 6, Co = 4, k = stride == 1 ? 3 : 5;
      auto x = testutil::random_tensor<double>({N, Ci, H, W}, 100 + stride);
      auto w = testutil::random_tensor<double>({Co, Ci, k, k}, 200 + stride);
      auto b = testutil::random_tensor<double>({Co}, 300 + stride);
      ConvSpec spec{k, k, stride, reflect ? Padding::reflect : Padding::zero};
      auto y = conv2d(x, w, b, spec);
      auto expect = oracle::conv2d(
          std::vector<double>(x.data().begin(), x.data().end()), N, Ci, H, W,
          std::vector<double>(w.data().begin(), w.data().end()), Co, k, k,
          std::vector<double>(b.data().begin(), b.data().end()), stride, reflect);
      REQUIRE(static_cast<std::size_t>(y.numel()) == expect.size());
      CHECK(testutil::max_abs_diff<double>(y.data(), expect) < 1e-12);
    }
  }
}

TEST_CASE("conv2d: shape mismatches name the offending dimension") {
  auto x = Tensor<float>::zeros({1, 2, 4, 4});
  auto w = Tensor<float>::zeros({3, 3, 3, 3});
  CHECK_THROWS_WITH_AS(conv2d(x, w, Tensor<float>(), ConvSpec{}),
                       doctest::Contains("channel extent"), std::invalid_argument);
  auto w_even = Tensor<float>::zeros({3, 2, 4, 4});
  CHECK_THROWS_AS(conv2d(x, w_even, Tensor<float>(), ConvSpec{4, 4, 1, Padding::reflect}),
                  std::invalid_argument);
  auto bad_bias = Tensor<float>::zeros({2});
  auto w_ok = Tensor<float>::zeros({3, 2, 3, 3});
  CHECK_THROWS_AS(conv2d(x, w_ok, bad_bias, ConvSpec{}), std::invalid_argument);
}

TEST_CASE("conv2d_transpose: single-pixel spread equals the kernel center taps") {
  const float v = 1.75f;
  auto x = Tensor<float>::full({1, 1, 1, 1}, v);
  const double b1[4] = {0.25, 0.75, 0.75, 0.25};
  std::vector<float> wd(16);
  for (int ky = 0; ky < 4; ++ky)
    for (int kx = 0; kx < 4; ++kx) wd[ky * 4 + kx] = static_cast<float>(b1[ky] * b1[kx]);
  auto w = Tensor<float>::from_data({1, 1, 4, 4}, wd);
  auto y = conv2d_transpose(x, w, ConvSpec{4, 4, 2, Padding::zero});
  REQUIRE(y.shape() == std::vector<int>{1, 1, 2, 2});
  for (int oy = 0; oy < 2; ++oy)
    for (int ox = 0; ox < 2; ++ox)
      CHECK(y.data()[oy * 2 + ox] ==
            doctest::Approx(v * wd[(oy + 1) * 4 + (ox + 1)]).epsilon(1e-6));
}

TEST_CASE("conv2d_transpose: exact doubling and stride contract") {
  auto x = testutil::random_tensor<float>({1, 3, 6, 5}, 7);
  auto w = testutil::random_tensor<float>({3, 2, 4, 4}, 8);
  auto y = conv2d_transpose(x, w, ConvSpec{4, 4, 2, Padding::zero});
  CHECK(y.shape() == std::vector<int>{1, 2, 12, 10});
  CHECK_THROWS_AS(conv2d_transpose(x, w, ConvSpec{4, 4, 1, Padding::zero}),
                  std::invalid_argument);
}

TEST_CASE("conv2d stride 2 and conv2d_transpose are adjoint with tied weights") {
  // <conv(a), b> == <a, transpose(b)> for the zero-padded stride-2 pair.
  for (int k : {4, 5}) {
    auto a64 = testutil::random_tensor<double>({1, 2, 8, 8}, 90 + k);
    auto w64 = testutil::random_tensor<double>({3, 2, k, k}, 91 + k);
    ConvSpec cs{k, k, 2, Padding::zero};
    auto ca = conv2d(a64, w64, Tensor<double>(), cs);
    auto b64 = testutil::random_tensor<double>(ca.shape(), 92 + k);
    auto tb = conv2d_transpose(b64, w64, cs);
    double lhs = 0.0, rhs = 0.0;
    for (std::size_t i = 0; i < ca.data().size(); ++i) lhs += ca.data()[i] * b64.data()[i];
    for (std::size_t i = 0; i < tb.data().size(); ++i) rhs += tb.data()[i] * a64.data()[i];
    CHECK(std::abs(lhs - rhs) / std::max(std::abs(lhs), 1e-12) < 1e-12);

    // and in single precision at the documented 1e-5 relative tolerance
    auto a32 = testutil::random_tensor<float>({1, 2, 8, 8}, 94 + k);
    auto w32 = testutil::random_tensor<float>({3, 2, k, k}, 95 + k);
    auto ca32 = conv2d(a32, w32, Tensor<float>(), cs);
    auto b32 = testutil::random_tensor<float>(ca32.shape(), 96 + k);
    auto tb32 = conv2d_transpose(b32, w32, cs);
    double lhs32 = 0.0, rhs32 = 0.0;
    for (std::size_t i = 0; i < ca32.data().size(); ++i)
      lhs32 += static_cast<double>(ca32.data()[i]) * b32.data()[i];
    for (std::size_t i = 0; i < tb32.data().size(); ++i)
      rhs32 += static_cast<double>(tb32.data()[i]) * a32.data()[i];
    CHECK(std::abs(lhs32 - rhs32) / std::max(std::abs(lhs32), 1e-12) < 1e-5);
  }
}

TEST_CASE("elu: fixed points and saturation") {
  auto x = Tensor<float>::from_data({1, 1, 1, 3}, {0.0f, 1.0f, -20.0f});
  auto y = elu(x, 1.0f);
  CHECK(y.data()[0] == 0.0f);
  CHECK(y.data()[1] == 1.0f);
  CHECK(std::abs(y.data()[2] - (-1.0f + std::exp(-20.0f))) < 1e-8);
  CHECK_THROWS_AS(elu(x, -1.0f), std::invalid_argument);
}

TEST_CASE("elementwise: identity elements and shape contract") {
  auto x = testutil::random_tensor<float>({2, 3, 4, 4}, 5);
  auto zero = Tensor<float>::zeros(x.shape());
  auto one = Tensor<float>::full(x.shape(), 1.0f);
  CHECK(testutil::max_abs_diff<float>(add(x, zero).data(), x.data()) == 0.0);
  CHECK(testutil::max_abs_diff<float>(mul(x, one).data(), x.data()) == 0.0);
  auto other = Tensor<float>::zeros({2, 3, 4, 5});
  CHECK_THROWS_AS(add(x, other), std::invalid_argument);
  CHECK_THROWS_AS(mul(x, other), std::invalid_argument);
}

TEST_CASE("reduce: constants and zeros") {
  auto c = Tensor<float>::full({2, 3, 4, 4}, 2.5f);
  CHECK(mean(c).item() == doctest::Approx(2.5f));
  auto z = Tensor<float>::zeros({7});
  CHECK(sum(z).item() == 0.0f);
}

TEST_CASE("backward: analytic gradients of simple graphs") {
  auto x = testutil::random_tensor<float>({2, 3, 4, 4}, 11, -1, 1, true);

  SUBCASE("sum gives all-ones gradient") {
    sum(x).backward();
    for (float g : x.grad()) CHECK(g == 1.0f);
  }
  SUBCASE("sum of squares gives 2x") {
    sum(mul(x, x)).backward();
    auto g = x.grad();
    for (std::size_t i = 0; i < g.size(); ++i)
      CHECK(g[i] == doctest::Approx(2.0f * x.data()[i]).epsilon(1e-6));
  }
  SUBCASE("mean gradient is 1/N") {
    mean(x).backward();
    for (float g : x.grad()) CHECK(g == doctest::Approx(1.0f / x.numel()));
  }
  SUBCASE("repeated backward without reset accumulates") {
    auto loss = sum(x);
    loss.backward();
    loss.backward();
    for (float g : x.grad()) CHECK(g == 2.0f);
  }
  SUBCASE("non-scalar losses are rejected") {
    CHECK_THROWS_AS(x.backward(), std::invalid_argument);
  }
}

TEST_CASE("no-grad mode skips graph recording") {
  auto x = testutil::random_tensor<float>({1, 1, 4, 4}, 3, -1, 1, true);
  NoGradGuard guard;
  auto y = mul(x, x);
  CHECK(y.node->parents.empty());
  CHECK_FALSE(y.node->tracked);
}

TEST_CASE("graph evaluation is deterministic") {
  auto run = [] {
    auto x = testutil::random_tensor<float>({1, 3, 8, 8}, 55, -1, 1, true);
    auto w = testutil::random_tensor<float>({4, 3, 3, 3}, 56);
    auto b = testutil::random_tensor<float>({4}, 57);
    auto y = conv2d(elu(x), w, b, ConvSpec{});
    sum(mul(y, y)).backward();
    std::vector<float> out(y.data().begin(), y.data().end());
    out.insert(out.end(), x.grad().begin(), x.grad().end());
    return out;
  };
  auto r1 = run();
  auto r2 = run();
  CHECK(r1 == r2);
}

TEST_CASE("gradient suite: every op and loss matches central finite differences") {
  auto report = run_gradient_suite(20240817);
  for (const auto& item : report.items) {
    INFO(item.name, " max rel error ", item.max_rel_error, " tol ", item.tolerance);
    CHECK(item.passed);
  }
  CHECK(report.all_passed());
}
