#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>

#include "lappyr/losses.hpp"
#include "lappyr/network.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace lappyr;

namespace {

Tensor<float> to_tensor(const Image& img) { return image_to_tensor<float>(img); }

}  // namespace

TEST_CASE("joint bilateral filter: constants pass through for any guide") {
  Image pred(3, 10, 10, 0.63f);
  Image guide = testutil::random_image(3, 10, 10, 5);
  BilateralParams p;
  SUBCASE("image path") {
    Image out = joint_bilateral_filter(pred, guide, p);
    for (float v : out.data) CHECK(v == doctest::Approx(0.63f).epsilon(1e-6));
  }
  SUBCASE("tensor path") {
    auto out = joint_bilateral_filter(to_tensor(pred), to_tensor(guide), p);
    for (float v : out.data()) CHECK(v == doctest::Approx(0.63f).epsilon(1e-6));
  }
}

TEST_CASE("joint bilateral filter: huge sigma_r degenerates to a spatial blur") {
  Image pred = testutil::random_image(3, 12, 12, 8);
  Image guide = testutil::random_image(3, 12, 12, 9);
  BilateralParams p;
  p.adaptive_sigma_r = false;
  p.sigma_r = 1e8;
  Image filtered = joint_bilateral_filter(pred, guide, p);

  // Plain truncated-window normalized Gaussian blur, range term absent.
  Image blurred(3, 12, 12);
  const int r = p.window / 2;
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 12; ++y)
      for (int x = 0; x < 12; ++x) {
        double acc = 0.0, norm = 0.0;
        for (int dy = -r; dy <= r; ++dy)
          for (int dx = -r; dx <= r; ++dx) {
            const int qy = y + dy, qx = x + dx;
            if (qy < 0 || qy >= 12 || qx < 0 || qx >= 12) continue;
            const double w = std::exp(-(dy * dy + dx * dx) / (2.0 * p.sigma_s * p.sigma_s));
            acc += w * pred.at(c, qy, qx);
            norm += w;
          }
        blurred.at(c, y, x) = static_cast<float>(acc / norm);
      }
  CHECK(max_abs_diff(filtered, blurred) < 1e-6f);
}

TEST_CASE("joint bilateral filter: matches the brute-force double loop") {
  // two-region guide with noisy prediction
  Image guide(3, 3, 3, 0.2f);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 3; ++y) guide.at(c, y, 2) = 0.9f;
  Image pred = testutil::random_image(3, 3, 3, 77);

  for (bool adaptive : {true, false}) {
    BilateralParams p;
    p.adaptive_sigma_r = adaptive;
    p.sigma_r = 0.15;
    p.window = 3;
    Image got = joint_bilateral_filter(pred, guide, p);
    Image expect = oracle::joint_bilateral(pred, guide, p.sigma_s, p.sigma_r, adaptive, 3);
    CHECK(max_abs_diff(got, expect) < 1e-6f);
  }

  // larger seeded instance, default window
  Image guide2 = testutil::random_image(3, 9, 7, 13);
  Image pred2 = testutil::random_image(3, 9, 7, 14);
  BilateralParams p2;
  Image got2 = joint_bilateral_filter(pred2, guide2, p2);
  Image expect2 = oracle::joint_bilateral(pred2, guide2, p2.sigma_s, 0.0, true, p2.window);
  CHECK(max_abs_diff(got2, expect2) < 1e-6f);

  Image small(3, 3, 4, 0.0f);
  CHECK_THROWS_AS(joint_bilateral_filter(pred2, small, p2), std::invalid_argument);
  BilateralParams even;
  even.window = 4;
  CHECK_THROWS_AS(joint_bilateral_filter(pred2, guide2, even), std::invalid_argument);
}

TEST_CASE("data loss: exact zeros and analytic perturbations") {
  BilateralParams p;
  SUBCASE("perfect constant prediction gives exactly zero") {
    Image a(3, 8, 8, 0.5f), s(3, 8, 8, 0.8f);
    Image input = hadamard(a, s);
    auto loss = data_loss(to_tensor(a), to_tensor(s), to_tensor(a), to_tensor(s),
                          to_tensor(input), p);
    CHECK(loss.item() == doctest::Approx(0.0f).epsilon(1e-12));
  }
  SUBCASE("perfect piecewise-constant prediction matches the filter oracle") {
    Image a(3, 8, 8, 0.25f);
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < 8; ++y)
        for (int x = 4; x < 8; ++x) a.at(c, y, x) = 0.9f;
    Image s(3, 8, 8, 0.7f);
    Image input = hadamard(a, s);
    const double loss = data_loss(to_tensor(a), to_tensor(s), to_tensor(a), to_tensor(s),
                                  to_tensor(input), p)
                            .item();
    // oracle value: mse of the brute-force filtered images against themselves
    Image fa = oracle::joint_bilateral(a, a, p.sigma_s, 0, true, p.window);
    Image fs = oracle::joint_bilateral(s, s, p.sigma_s, 0, true, p.window);
    double expect = 0.0;
    for (std::size_t i = 0; i < fa.data.size(); ++i) {
      const double da = static_cast<double>(fa.data[i]) - a.data[i];
      const double ds = static_cast<double>(fs.data[i]) - s.data[i];
      expect += da * da + ds * ds;
    }
    expect /= static_cast<double>(fa.data.size());
    CHECK(std::abs(loss - expect) < 1e-10);
    CHECK(loss < 1e-3);  // leakage bounded by the range kernel
  }
  SUBCASE("uniform +0.1 input perturbation contributes exactly 0.01") {
    Image a(3, 8, 8, 0.5f), s(3, 8, 8, 0.8f);
    Image input = hadamard(a, s);
    for (float& v : input.data) v += 0.1f;
    const double loss = data_loss(to_tensor(a), to_tensor(s), to_tensor(a), to_tensor(s),
                                  to_tensor(input), p)
                            .item();
    CHECK(loss == doctest::Approx(0.01).epsilon(1e-5));
  }
  SUBCASE("shape mismatch is rejected") {
    Image a(3, 8, 8, 0.5f);
    Image b(3, 8, 6, 0.5f);
    CHECK_THROWS_AS(data_loss(to_tensor(a), to_tensor(a), to_tensor(a), to_tensor(a),
                              to_tensor(b), p),
                    std::invalid_argument);
  }
}

TEST_CASE("data loss: window 1 degenerates to plain MSE") {
  Image a = testutil::random_image(3, 8, 8, 20);
  Image s = testutil::random_image(3, 8, 8, 21, 0.2, 1.0);
  Image pa = testutil::random_image(3, 8, 8, 22);
  Image ps = testutil::random_image(3, 8, 8, 23, 0.2, 1.0);
  Image input = hadamard(a, s);
  BilateralParams p;
  p.window = 1;
  const double got = data_loss(to_tensor(pa), to_tensor(ps), to_tensor(a), to_tensor(s),
                               to_tensor(input), p)
                         .item();
  const double expect = mse(to_tensor(pa), to_tensor(a)).item() +
                        mse(to_tensor(ps), to_tensor(s)).item() +
                        mse(mul(to_tensor(pa), to_tensor(ps)), to_tensor(input)).item();
  CHECK(got == doctest::Approx(expect).epsilon(1e-7));
}

TEST_CASE("perceptual loss: zeros, symmetry and direct recomputation") {
  auto fx = FeatureExtractor<float>::surrogate();
  Image a = testutil::random_image(3, 32, 32, 30);
  Image s = testutil::random_image(3, 32, 32, 31);
  Image pa = testutil::random_image(3, 32, 32, 32);
  Image ps = testutil::random_image(3, 32, 32, 33);

  SUBCASE("identical predictions give exactly zero") {
    CHECK(perceptual_loss(to_tensor(a), to_tensor(s), to_tensor(a), to_tensor(s), fx)
              .item() == 0.0f);
  }
  SUBCASE("swapping prediction and target leaves the value unchanged") {
    const double v1 =
        perceptual_loss(to_tensor(pa), to_tensor(ps), to_tensor(a), to_tensor(s), fx).item();
    const double v2 =
        perceptual_loss(to_tensor(a), to_tensor(s), to_tensor(pa), to_tensor(ps), fx).item();
    CHECK(v1 == doctest::Approx(v2).epsilon(1e-6));
  }
  SUBCASE("value matches a straight-line recomputation over the taps") {
    const double got =
        perceptual_loss(to_tensor(pa), to_tensor(ps), to_tensor(a), to_tensor(s), fx).item();
    double expect = 0.0;
    NoGradGuard no_grad;
    for (auto [pred, target] : {std::pair{&pa, &a}, std::pair{&ps, &s}}) {
      auto tp = fx.taps(to_tensor(*pred));
      auto tt = fx.taps(to_tensor(*target));
      for (std::size_t l = 0; l < tp.size(); ++l) {
        double acc = 0.0;
        auto dp = tp[l].data();
        auto dt = tt[l].data();
        for (std::size_t i = 0; i < dp.size(); ++i) {
          const double d = static_cast<double>(dp[i]) - dt[i];
          acc += d * d;
        }
        expect += acc / static_cast<double>(dp.size());
      }
    }
    CHECK(got == doctest::Approx(expect).epsilon(1e-6));
  }
  SUBCASE("tap resolutions halve stage by stage") {
    NoGradGuard no_grad;
    auto taps = fx.taps(to_tensor(a));
    REQUIRE(taps.size() == 4);
    const int channels[4] = {8, 16, 24, 32};
    for (int l = 0; l < 4; ++l) {
      CHECK(taps[static_cast<std::size_t>(l)].dim(1) == channels[l]);
      CHECK(taps[static_cast<std::size_t>(l)].dim(2) == 32 >> l);
    }
  }
  SUBCASE("too-small extents are rejected") {
    Image tiny = testutil::random_image(3, 4, 4, 3);
    CHECK_THROWS_AS(
        perceptual_loss(to_tensor(tiny), to_tensor(tiny), to_tensor(tiny), to_tensor(tiny), fx),
        std::invalid_argument);
  }
}

TEST_CASE("feature extractor: determinism and weight-file round trip") {
  auto fx1 = FeatureExtractor<float>::surrogate(99);
  auto fx2 = FeatureExtractor<float>::surrogate(99);
  Image img = testutil::random_image(3, 16, 16, 12);
  NoGradGuard no_grad;
  auto t1 = fx1.taps(to_tensor(img));
  auto t2 = fx2.taps(to_tensor(img));
  for (std::size_t l = 0; l < t1.size(); ++l)
    CHECK(testutil::max_abs_diff<float>(t1[l].data(), t2[l].data()) == 0.0);

  const std::string path =
      (std::filesystem::temp_directory_path() / "lappyr_fx_test.bin").string();
  fx1.save_file(path);
  auto fx3 = FeatureExtractor<float>::load_file(path);
  auto t3 = fx3.taps(to_tensor(img));
  for (std::size_t l = 0; l < t1.size(); ++l)
    CHECK(testutil::max_abs_diff<float>(t1[l].data(), t3[l].data()) == 0.0);
  std::filesystem::remove(path);
}

TEST_CASE("tv loss: enumerated values and invariances") {
  SUBCASE("constants give zero") {
    Image c1(3, 8, 8, 0.4f), c2(3, 8, 8, 0.9f);
    CHECK(tv_loss(to_tensor(c1), to_tensor(c2)).item() == 0.0f);
  }
  SUBCASE("hand-enumerated 2x2 case") {
    auto a = Tensor<float>::from_data({1, 1, 2, 2}, {0.0f, 1.0f, 0.0f, 1.0f});
    auto s = Tensor<float>::zeros({1, 1, 2, 2});
    CHECK(tv_loss(a, s).item() == doctest::Approx(2.0f));
  }
  SUBCASE("adding a constant leaves the value unchanged") {
    Image a = testutil::random_image(3, 8, 8, 40);
    Image s = testutil::random_image(3, 8, 8, 41);
    const double v1 = tv_loss(to_tensor(a), to_tensor(s)).item();
    Image a2 = a;
    for (float& v : a2.data) v += 0.37f;
    const double v2 = tv_loss(to_tensor(a2), to_tensor(s)).item();
    CHECK(v1 == doctest::Approx(v2).epsilon(1e-5));
  }
}

TEST_CASE("total loss: weighted combination") {
  auto zero = Tensor<float>::scalar(0.0f);
  auto one = Tensor<float>::scalar(1.0f);
  LossWeights w;
  CHECK(total_loss(zero, zero, zero, w).item() == 0.0f);
  CHECK(total_loss(one, one, one, w).item() == doctest::Approx(1.5001).epsilon(1e-7));
  LossWeights data_only;
  data_only.lambda_p = 0.0;
  data_only.lambda_t = 0.0;
  auto d = Tensor<float>::scalar(0.73f);
  CHECK(total_loss(d, one, one, data_only).item() == doctest::Approx(0.73f));
  LossWeights bad;
  bad.lambda_d = -1.0;
  CHECK_THROWS_AS(total_loss(d, one, one, bad), std::invalid_argument);
}

TEST_CASE("losses are non-negative on random inputs") {
  auto fx = FeatureExtractor<float>::surrogate();
  LossWeights w;
  BilateralParams p;
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    Image a = testutil::random_image(3, 8, 8, 100 + seed);
    Image s = testutil::random_image(3, 8, 8, 200 + seed, 0.2, 1.0);
    Image pa = testutil::random_image(3, 8, 8, 300 + seed);
    Image ps = testutil::random_image(3, 8, 8, 400 + seed, 0.2, 1.0);
    Image input = hadamard(a, s);
    auto parts = compute_losses(to_tensor(pa), to_tensor(ps), to_tensor(a), to_tensor(s),
                                to_tensor(input), fx, w, p);
    CHECK(parts.data.item() >= 0.0f);
    CHECK(parts.perceptual.item() >= 0.0f);
    CHECK(parts.tv.item() >= 0.0f);
    CHECK(parts.total.item() >= 0.0f);
  }
}
