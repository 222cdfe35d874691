#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "lappyr/checkpoint.hpp"
#include "lappyr/datapipe.hpp"
#include "lappyr/errors.hpp"
#include "lappyr/network.hpp"
#include "test_util.hpp"

using namespace lappyr;
namespace fs = std::filesystem;

namespace {

template <typename T>
std::vector<T> flatten_params(const LapPyrNet<T>& net) {
  std::vector<T> out;
  for (const auto& p : net.parameters())
    out.insert(out.end(), p.tensor.data().begin(), p.tensor.data().end());
  return out;
}

}  // namespace

TEST_CASE("residual block: zeroed residual path reduces to the projected skip") {
  NetConfig cfg = NetConfig::desk();
  auto net = LapPyrNet<float>::build(cfg, 1);
  ResidualBlock<float>& block = net.blocks()[0];
  REQUIRE(block.subs.size() == 2);
  for (auto& s : block.subs) {
    for (float& v : s.conv1.weight.data()) v = 0.0f;
    for (float& v : s.conv1.bias.data()) v = 0.0f;
    for (float& v : s.conv2.weight.data()) v = 0.0f;
    for (float& v : s.conv2.bias.data()) v = 0.0f;
    REQUIRE(s.projection.weight.defined());
    auto w = s.projection.weight;  // [out,in,1,1]
    for (float& v : w.data()) v = 0.0f;
    const int out_c = w.dim(0), in_c = w.dim(1);
    for (int c = 0; c < std::min(out_c, in_c); ++c)
      w.data()[static_cast<std::size_t>(c) * in_c + c] = 1.0f;
    for (float& v : s.projection.bias.data()) v = 0.0f;
  }
  // With x >= 0 on the surviving channels, elu chains are the identity.
  auto x = testutil::random_tensor<float>({1, 3, 8, 8}, 5, 0.05, 0.95);
  auto y = block.forward(x);
  REQUIRE(y.shape() == x.shape());
  CHECK(testutil::max_abs_diff<float>(y.data(), x.data()) < 1e-6);
}

TEST_CASE("residual block: spatial extents preserved across sizes") {
  auto net = LapPyrNet<float>::build(NetConfig::desk(), 3);
  for (int hw : {16, 32, 64}) {
    auto x = testutil::random_tensor<float>({1, 3, hw, hw}, 10 + hw);
    auto y = net.blocks()[0].forward(x);
    CHECK(y.shape() == std::vector<int>{1, 3, hw, hw});
  }
  auto bad = testutil::random_tensor<float>({1, 4, 8, 8}, 1);
  CHECK_THROWS_AS(net.blocks()[0].forward(bad), std::invalid_argument);
}

TEST_CASE("residual block: parameter count matches the construction audit") {
  NetConfig cfg = NetConfig::paper();
  auto net1 = LapPyrNet<float>::build(cfg, 1);
  auto net2 = LapPyrNet<float>::build(cfg, 99);
  // identical topology => identical counts, regardless of seed
  CHECK(net1.blocks()[0].parameter_count() == net2.blocks()[0].parameter_count());
  CHECK(net1.blocks()[0].parameter_count() == net1.blocks()[1].parameter_count());

  auto audit = [](int n, int h) {
    std::int64_t total = 0;
    for (int i = 0; i < n; ++i) {
      const int in = i == 0 ? 3 : h;
      const int out = i == n - 1 ? 3 : h;
      total += 9 * in * h + h;    // conv1
      total += 9 * h * out + out; // conv2
      if (in != out) total += in * out + out;  // 1x1 projection
    }
    return total;
  };
  CHECK(net1.blocks()[0].parameter_count() == audit(cfg.substructures, cfg.hidden));
  auto desk = LapPyrNet<float>::build(NetConfig::desk(), 1);
  CHECK(desk.blocks()[0].parameter_count() == audit(2, 16));
}

TEST_CASE("residual block: projections appear exactly where widths change") {
  auto net = LapPyrNet<float>::build(NetConfig::paper(), 4);
  const auto& subs = net.blocks()[0].subs;
  REQUIRE(subs.size() == 6);
  CHECK(subs.front().projection.weight.defined());   // 3 -> 32
  CHECK(subs.back().projection.weight.defined());    // 32 -> 3
  for (std::size_t i = 1; i + 1 < subs.size(); ++i)
    CHECK_FALSE(subs[i].projection.weight.defined());
}

TEST_CASE("build: determinism, block and sampler counts") {
  NetConfig cfg;
  cfg.levels = 4;
  auto a = LapPyrNet<float>::build(cfg, 1234);
  auto b = LapPyrNet<float>::build(cfg, 1234);
  CHECK(flatten_params(a) == flatten_params(b));

  CHECK(a.block_count() == 5);
  CHECK(a.downsamplers().size() == 4);
  CHECK(a.upsamplers().size() == 4);
  CHECK_THROWS_AS(LapPyrNet<float>::build(NetConfig{0, 16, 2, Variant::pyramid_d}, 1),
                  std::invalid_argument);

  auto c = LapPyrNet<float>::build(cfg, 1235);
  CHECK(flatten_params(a) != flatten_params(c));
}

TEST_CASE("build: downsampler preserves constants at init") {
  auto net = LapPyrNet<float>::build(NetConfig::desk(), 77);
  auto x = Tensor<float>::full({1, 3, 16, 16}, 0.42f);
  auto y = net.apply_downsampler(0, x);
  REQUIRE(y.shape() == std::vector<int>{1, 3, 8, 8});
  for (float v : y.data()) CHECK(v == doctest::Approx(0.42f).epsilon(1e-6));
}

TEST_CASE("forward: output shape equals input shape for every variant") {
  for (Variant v : {Variant::sequential_a, Variant::stacked_split_b, Variant::parallel_c,
                    Variant::pyramid_d}) {
    NetConfig cfg = NetConfig::desk();
    cfg.variant = v;
    auto net = LapPyrNet<float>::build(cfg, 7);
    auto x = testutil::random_tensor<float>({2, 3, 16, 16}, 30);
    auto out = net.forward(x);
    CHECK(out.output.shape() == x.shape());
    const std::size_t expected =
        v == Variant::pyramid_d ? static_cast<std::size_t>(cfg.levels) + 1 : 2;
    CHECK(out.components.size() == expected);
  }
}

TEST_CASE("forward: component extents nest dyadically for pyramid_d") {
  NetConfig cfg = NetConfig::desk();
  cfg.levels = 2;
  auto net = LapPyrNet<float>::build(cfg, 9);
  auto x = testutil::random_tensor<float>({1, 3, 32, 32}, 31);
  auto out = net.forward(x);
  REQUIRE(out.components.size() == 3);
  for (int k = 0; k <= 2; ++k) {
    CHECK(out.components[static_cast<std::size_t>(k)].dim(2) == 32 >> k);
    CHECK(out.components[static_cast<std::size_t>(k)].dim(3) == 32 >> k);
  }
  auto bad = testutil::random_tensor<float>({1, 3, 30, 30}, 32);
  CHECK_THROWS_AS(net.forward(bad), std::invalid_argument);
}

TEST_CASE("forward: aggregation recomputed from components is bit-identical") {
  NetConfig cfg = NetConfig::desk();
  auto net = LapPyrNet<float>::build(cfg, 11);
  auto x = testutil::random_tensor<float>({1, 3, 32, 32}, 33);
  auto out = net.forward(x);
  Tensor<float> agg = out.components.back();
  for (int k = cfg.levels - 1; k >= 0; --k)
    agg = add(out.components[static_cast<std::size_t>(k)], net.apply_upsampler(k, agg));
  REQUIRE(agg.shape() == out.output.shape());
  for (std::size_t i = 0; i < agg.data().size(); ++i)
    CHECK(agg.data()[i] == out.output.data()[i]);
}

TEST_CASE("forward: rewiring equivalences across the two-block variants") {
  auto x = testutil::random_tensor<float>({1, 3, 16, 16}, 40, 0, 1);

  SUBCASE("sequential_a and stacked_split_b share the forward map") {
    NetConfig ca = NetConfig::desk();
    ca.variant = Variant::sequential_a;
    NetConfig cb = ca;
    cb.variant = Variant::stacked_split_b;
    auto na = LapPyrNet<float>::build(ca, 21);
    auto nb = LapPyrNet<float>::build(cb, 21);
    auto ya = na.forward(x).output;
    auto yb = nb.forward(x).output;
    CHECK(testutil::max_abs_diff<float>(ya.data(), yb.data()) == 0.0);
  }
  SUBCASE("stacked_split_b and parallel_c agree under identity samplers") {
    NetConfig cb = NetConfig::desk();
    cb.variant = Variant::stacked_split_b;
    NetConfig cc = NetConfig::desk();
    cc.variant = Variant::parallel_c;
    cc.identity_samplers = true;
    for (std::uint64_t seed : {1u, 2u, 3u}) {
      auto nb = LapPyrNet<float>::build(cb, seed);
      auto nc = LapPyrNet<float>::build(cc, seed);  // same seed => tied block weights
      auto xi = testutil::random_tensor<float>({1, 3, 16, 16}, 400 + seed, 0, 1);
      auto yb = nb.forward(xi).output;
      auto yc = nc.forward(xi).output;
      CHECK(testutil::max_abs_diff<float>(yb.data(), yc.data()) < 1e-6);
    }
  }
  SUBCASE("parallel_c with real samplers runs the low branch at half resolution") {
    NetConfig cc = NetConfig::desk();
    cc.variant = Variant::parallel_c;
    auto nc = LapPyrNet<float>::build(cc, 5);
    auto out = nc.forward(x);
    CHECK(out.components[0].dim(2) == 16);
    CHECK(out.components[1].dim(2) == 8);
    CHECK(out.output.shape() == x.shape());
  }
}

TEST_CASE("forward_partial: extents follow the requested level") {
  NetConfig cfg = NetConfig::desk();
  auto net = LapPyrNet<float>::build(cfg, 13);
  auto x = testutil::random_tensor<float>({1, 3, 32, 32}, 50);
  for (int level = 0; level <= cfg.levels; ++level) {
    auto agg = net.forward_partial(x, level);
    CHECK(agg.dim(2) == 32 >> level);
    CHECK(agg.dim(3) == 32 >> level);
  }
  // level 0 partial aggregate is the full forward output
  auto full = net.forward(x).output;
  auto agg0 = net.forward_partial(x, 0);
  CHECK(testutil::max_abs_diff<float>(full.data(), agg0.data()) == 0.0);
}

TEST_CASE("gradient flow: every parameter receives a nonzero gradient") {
  NetConfig cfg = NetConfig::desk();
  auto net = LapPyrNet<float>::build(cfg, 17);
  auto x = testutil::random_tensor<float>({2, 3, 16, 16}, 60, 0, 1);
  auto target = testutil::random_tensor<float>({2, 3, 16, 16}, 61, 0, 1);
  auto out = net.forward(x);
  net.zero_grad();
  mse(out.output, target).backward();
  for (const auto& p : net.parameters()) {
    REQUIRE(p.tensor.has_grad());
    double norm = 0.0;
    for (float g : p.tensor.grad()) norm += static_cast<double>(g) * g;
    INFO("parameter ", p.name);
    CHECK(norm > 0.0);
  }
}

TEST_CASE("decompose: untrained nets produce valid-shape outputs") {
  auto net_a = LapPyrNet<float>::build(NetConfig::desk(), 70);
  auto net_s = LapPyrNet<float>::build(NetConfig::desk(), 71);
  Image input = testutil::random_image(3, 32, 32, 72);
  auto [albedo, shading] = decompose(net_a, net_s, input);
  CHECK(albedo.same_extents(input));
  CHECK(shading.same_extents(input));
  // reconstruction error is reported, not thresholded, before training
  const float err = max_abs_diff(hadamard(albedo, shading), input);
  CHECK(std::isfinite(err));
}

TEST_CASE("checkpoint: save/load round trip preserves parameters and outputs") {
  const std::string path =
      (fs::temp_directory_path() / "lappyr_ckpt_test.ckpt").string();
  auto net_a = LapPyrNet<float>::build(NetConfig::desk(), 80);
  auto net_s = LapPyrNet<float>::build(NetConfig::desk(), 81);
  // make the weights differ from any fresh build
  for (auto& p : net_a.parameters())
    for (float& v : p.tensor.data()) v += 0.01f;
  save_checkpoint(path, net_a, net_s);
  auto [back_a, back_s] = load_checkpoint(path);
  CHECK(flatten_params(back_a) == flatten_params(net_a));
  CHECK(flatten_params(back_s) == flatten_params(net_s));

  auto x = testutil::random_tensor<float>({1, 3, 16, 16}, 82);
  auto y1 = net_a.forward(x).output;
  auto y2 = back_a.forward(x).output;
  CHECK(testutil::max_abs_diff<float>(y1.data(), y2.data()) == 0.0);
  fs::remove(path);
}

TEST_CASE("checkpoint: corrupt and truncated files are data errors") {
  const auto dir = fs::temp_directory_path();
  const std::string garbage = (dir / "lappyr_bad.ckpt").string();
  {
    std::ofstream out(garbage, std::ios::binary);
    out << "not a checkpoint at all";
  }
  CHECK_THROWS_AS(load_checkpoint(garbage), DataError);

  const std::string truncated = (dir / "lappyr_trunc.ckpt").string();
  {
    auto net_a = LapPyrNet<float>::build(NetConfig::desk(), 90);
    auto net_s = LapPyrNet<float>::build(NetConfig::desk(), 91);
    save_checkpoint(truncated, net_a, net_s);
    const auto size = fs::file_size(truncated);
    fs::resize_file(truncated, size / 2);
  }
  CHECK_THROWS_AS(load_checkpoint(truncated), DataError);
  fs::remove(garbage);
  fs::remove(truncated);
}
