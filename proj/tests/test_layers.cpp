#include <doctest.h>

#include <cmath>
#include <numeric>

#include "oracles.hpp"
#include "xvt/gradcheck.hpp"
#include "xvt/layers.hpp"

using namespace xvt;
using D = Tensor<double>;

namespace {

Conv2dParams<double> conv_from(std::vector<double> weight, Shape shape, int stride, int pad) {
  Conv2dParams<double> p;
  p.weight = D(std::move(shape), std::move(weight), true);
  p.stride_y = p.stride_x = stride;
  p.pad_y = p.pad_x = pad;
  return p;
}

}  // namespace

TEST_CASE("1x1 conv with identity weights is the identity") {
  Rng rng(1);
  D x = D::uniform({1, 3, 4, 4}, -1, 1, rng);
  std::vector<double> w(9, 0.0);
  w[0] = w[4] = w[8] = 1.0;  // 3x3 identity as (oc, ic) pairs
  auto params = conv_from(std::move(w), {3, 3, 1, 1}, 1, 0);
  D y = conv2d(x, params);
  for (std::size_t i = 0; i < x.values().size(); ++i) {
    CHECK(y.values()[i] == doctest::Approx(x.values()[i]).epsilon(1e-12));
  }
}

TEST_CASE("3x3 all-ones kernel on a constant image gives 9c in the interior") {
  const double c = 0.7;
  D x = D::full({1, 1, 5, 5}, c);
  auto params = conv_from(std::vector<double>(9, 1.0), {1, 1, 3, 3}, 1, 1);
  D y = conv2d(x, params);
  CHECK(y.shape() == Shape{1, 1, 5, 5});
  CHECK(y.at(0, 0, 2, 2) == doctest::Approx(9 * c).epsilon(1e-12));
  CHECK(y.at(0, 0, 0, 0) == doctest::Approx(4 * c).epsilon(1e-12));  // corner sees 4 pixels
}

TEST_CASE("conv2d matches the six-loop oracle on a random 2-channel 8x8 input") {
  Rng rng(2);
  for (int stride : {1, 2}) {
    D x = D::uniform({1, 2, 8, 8}, -1, 1, rng);
    auto params = make_conv2d<double>(2, 3, 3, stride, 1, true, rng);
    params.bias = D::uniform({3}, -0.5, 0.5, rng, true);
    D y = conv2d(x, params);
    const auto expected =
        oracle::conv2d(x.values(), 2, 8, 8, params.weight.values(), 3, 3, 3,
                       params.bias.values(), stride, 1);
    REQUIRE(y.size() == static_cast<std::int64_t>(expected.size()));
    for (std::size_t i = 0; i < expected.size(); ++i) {
      CHECK(std::abs(y.values()[i] - expected[i]) <= 1e-6);
    }
  }
}

TEST_CASE("conv2d rejects channel mismatches") {
  Rng rng(3);
  D x = D::uniform({1, 2, 4, 4}, -1, 1, rng);
  auto params = make_conv2d<double>(3, 4, 3, 1, 1, false, rng);
  CHECK_THROWS_AS(conv2d(x, params), DimensionError);
}

TEST_CASE("1x1 conv commutes with spatial permutation of pixels") {
  Rng rng(4);
  D x = D::uniform({1, 3, 3, 4}, -1, 1, rng);
  auto params = make_conv2d<double>(3, 2, 1, 1, 0, true, rng);

  std::vector<int> perm(12);
  std::iota(perm.begin(), perm.end(), 0);
  for (std::size_t i = perm.size(); i > 1; --i) {
    std::swap(perm[i - 1], perm[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(i)))]);
  }
  auto permute_pixels = [&perm](const D& t) {
    D out = D::zeros(t.shape());
    const int c = t.dim(1), pixels = t.dim(2) * t.dim(3);
    for (int ch = 0; ch < c; ++ch) {
      for (int p = 0; p < pixels; ++p) {
        out.values()[static_cast<std::size_t>(ch * pixels + perm[static_cast<std::size_t>(p)])] =
            t.values()[static_cast<std::size_t>(ch * pixels + p)];
      }
    }
    return out;
  };

  D lhs = conv2d(permute_pixels(x), params);
  D rhs = permute_pixels(conv2d(x, params));
  for (std::size_t i = 0; i < lhs.values().size(); ++i) {
    CHECK(lhs.values()[i] == doctest::Approx(rhs.values()[i]).epsilon(1e-12));
  }
}

TEST_CASE("batch_norm training normalizes per channel and applies the affine") {
  Rng rng(5);
  D x = D::uniform({4, 3, 5, 5}, -2, 3, rng);
  auto bn = make_batch_norm<double>(3);

  SUBCASE("gamma=1, beta=0 gives mean 0, variance 1") {
    D y = batch_norm(x, bn, true);
    const std::int64_t group = 4 * 5 * 5;
    for (int c = 0; c < 3; ++c) {
      double mean = 0, var = 0;
      for (int n = 0; n < 4; ++n) {
        for (int p = 0; p < 25; ++p) mean += y.at(n, c, p / 5, p % 5);
      }
      mean /= static_cast<double>(group);
      for (int n = 0; n < 4; ++n) {
        for (int p = 0; p < 25; ++p) {
          const double d = y.at(n, c, p / 5, p % 5) - mean;
          var += d * d;
        }
      }
      var /= static_cast<double>(group);
      CHECK(std::abs(mean) <= 1e-5);
      CHECK(std::abs(var - 1.0) <= 1e-3);  // epsilon shrinks variance slightly
    }
  }

  SUBCASE("gamma=2, beta=3 on standardized input gives mean 3, std 2") {
    bn.gamma = D::full({3}, 2.0, true);
    bn.beta = D::full({3}, 3.0, true);
    D y = batch_norm(x, bn, true);
    double mean = 0;
    for (int n = 0; n < 4; ++n) {
      for (int p = 0; p < 25; ++p) mean += y.at(n, 0, p / 5, p % 5);
    }
    mean /= 100.0;
    double var = 0;
    for (int n = 0; n < 4; ++n) {
      for (int p = 0; p < 25; ++p) {
        const double d = y.at(n, 0, p / 5, p % 5) - mean;
        var += d * d;
      }
    }
    var /= 100.0;
    CHECK(mean == doctest::Approx(3.0).epsilon(1e-6));
    CHECK(std::sqrt(var) == doctest::Approx(2.0).epsilon(1e-3));
  }
}

TEST_CASE("batch_norm eval applies the running statistics closed form") {
  auto bn = make_batch_norm<double>(2);
  bn.running_mean = D({2}, {1.0, -1.0});
  bn.running_var = D({2}, {4.0, 0.25});
  bn.gamma = D({2}, {2.0, 3.0}, true);
  bn.beta = D({2}, {0.5, -0.5}, true);
  D x({1, 2, 1, 2}, {3.0, 1.0, 0.0, -2.0});
  D y = batch_norm(x, bn, false);
  const double e = 1e-5;
  CHECK(y.at(0, 0, 0, 0) == doctest::Approx((3.0 - 1.0) / std::sqrt(4.0 + e) * 2.0 + 0.5).epsilon(1e-9));
  CHECK(y.at(0, 0, 0, 1) == doctest::Approx((1.0 - 1.0) / std::sqrt(4.0 + e) * 2.0 + 0.5).epsilon(1e-9));
  CHECK(y.at(0, 1, 0, 0) == doctest::Approx((0.0 + 1.0) / std::sqrt(0.25 + e) * 3.0 - 0.5).epsilon(1e-9));
  CHECK(y.at(0, 1, 0, 1) == doctest::Approx((-2.0 + 1.0) / std::sqrt(0.25 + e) * 3.0 - 0.5).epsilon(1e-9));
}

TEST_CASE("batch_norm training rejects a batch of one") {
  auto bn = make_batch_norm<double>(2);
  D x = D::zeros({1, 2, 3, 3});
  CHECK_THROWS_AS(batch_norm(x, bn, true), ContractError);
}

TEST_CASE("layer_norm maps constant channel vectors to the shift") {
  auto ln = make_layer_norm<double>(3);
  D x = D::full({1, 3, 2, 2}, 4.2);
  D y = layer_norm(x, ln);
  for (double v : y.values()) CHECK(std::abs(v) <= 1e-6);
}

TEST_CASE("layer_norm closed form: channel vector [1,3] -> [-1,1]") {
  auto ln = make_layer_norm<double>(2);
  D x({1, 2, 1, 1}, {1.0, 3.0});
  D y = layer_norm(x, ln);
  // population std of {1,3} is 1; epsilon pulls values slightly inward
  CHECK(y.at(0, 0, 0, 0) == doctest::Approx(-1.0).epsilon(1e-4));
  CHECK(y.at(0, 1, 0, 0) == doctest::Approx(1.0).epsilon(1e-4));
}

TEST_CASE("layer_norm statistics and shift invariance") {
  Rng rng(6);
  D x = D::uniform({2, 8, 3, 3}, -2, 2, rng);
  auto ln = make_layer_norm<double>(8);
  D y = layer_norm(x, ln);
  for (int n = 0; n < 2; ++n) {
    for (int p = 0; p < 9; ++p) {
      double mean = 0, var = 0;
      for (int c = 0; c < 8; ++c) mean += y.at(n, c, p / 3, p % 3);
      mean /= 8;
      for (int c = 0; c < 8; ++c) {
        const double d = y.at(n, c, p / 3, p % 3) - mean;
        var += d * d;
      }
      var /= 8;
      CHECK(std::abs(mean) <= 1e-6);
      CHECK(std::abs(var - 1.0) <= 1e-3);
    }
  }
  // adding a per-pixel constant to all channels changes nothing
  D shifted = D::zeros(x.shape());
  for (int n = 0; n < 2; ++n) {
    for (int c = 0; c < 8; ++c) {
      for (int p = 0; p < 9; ++p) {
        shifted.at(n, c, p / 3, p % 3) = x.at(n, c, p / 3, p % 3) + 3.7 * (n + 1) + p;
      }
    }
  }
  D y2 = layer_norm(shifted, ln);
  for (std::size_t i = 0; i < y.values().size(); ++i) {
    CHECK(std::abs(y.values()[i] - y2.values()[i]) <= 1e-9);
  }
}

TEST_CASE("global average pooling of a constant map returns the constant") {
  D x = D::full({2, 3, 4, 4}, 1.25);
  D y = global_avg_pool(x);
  CHECK(y.shape() == Shape{2, 3});
  for (double v : y.values()) CHECK(v == doctest::Approx(1.25).epsilon(1e-12));
}

TEST_CASE("global average pooling is invariant to spatial permutation") {
  Rng rng(7);
  D x = D::uniform({1, 2, 3, 3}, -1, 1, rng);
  D shuffled = D::zeros(x.shape());
  std::vector<int> perm = {4, 2, 7, 0, 8, 1, 6, 3, 5};
  for (int c = 0; c < 2; ++c) {
    for (int p = 0; p < 9; ++p) {
      shuffled.values()[static_cast<std::size_t>(c * 9 + perm[static_cast<std::size_t>(p)])] =
          x.values()[static_cast<std::size_t>(c * 9 + p)];
    }
  }
  D a = global_avg_pool(x), b = global_avg_pool(shuffled);
  for (std::size_t i = 0; i < a.values().size(); ++i) {
    CHECK(a.values()[i] == doctest::Approx(b.values()[i]).epsilon(1e-12));
  }
}

TEST_CASE("max pool of a monotone ramp picks the window maxima (hand-checked 4x4)") {
  std::vector<double> ramp(16);
  std::iota(ramp.begin(), ramp.end(), 0.0);  // x[i][j] = 4i + j
  D x({1, 1, 4, 4}, std::move(ramp));
  D y = max_pool_3x3_s2(x);
  CHECK(y.shape() == Shape{1, 1, 2, 2});
  CHECK(y.at(0, 0, 0, 0) == 5.0);
  CHECK(y.at(0, 0, 0, 1) == 7.0);
  CHECK(y.at(0, 0, 1, 0) == 13.0);
  CHECK(y.at(0, 0, 1, 1) == 15.0);
  D tiny = D::zeros({1, 1, 2, 2});
  CHECK_THROWS_AS(max_pool_3x3_s2(tiny), ContractError);
}

TEST_CASE("resnet block with zeroed convs acts as relu of the input") {
  Rng rng(8);
  auto block = make_resnet_block<double>(3, 3, 1, rng);
  for (auto& v : block.conv1.weight.values()) v = 0;
  for (auto& v : block.conv2.weight.values()) v = 0;
  CHECK(!block.shortcut.has_value());  // identity shortcut when nothing changes
  D x = D::uniform({2, 3, 4, 4}, -1, 1, rng);
  D y = block.forward(x, false);
  for (std::size_t i = 0; i < x.values().size(); ++i) {
    CHECK(y.values()[i] == doctest::Approx(std::max(x.values()[i], 0.0)).epsilon(1e-12));
  }
}

TEST_CASE("stride-2 block halves spatial dims and doubles channels") {
  Rng rng(9);
  auto block = make_resnet_block<double>(8, 16, 2, rng);
  CHECK(block.shortcut.has_value());
  D x = D::uniform({2, 8, 8, 8}, -1, 1, rng);
  D y = block.forward(x, true);
  CHECK(y.shape() == Shape{2, 16, 4, 4});
}

TEST_CASE("resnet block gradient passes finite differences") {
  Rng rng(10);
  auto block = make_resnet_block<double>(2, 4, 2, rng);
  D x = D::uniform({2, 2, 4, 4}, -1, 1, rng, true);
  D proj = D::uniform({2, 4, 2, 2}, 0.5, 1.5, rng);
  const double err = finite_diff_check(
      [&] { return sum(mul(block.forward(x, true), proj)); },
      {x, block.conv1.weight, block.conv2.weight, block.shortcut->weight, block.bn1.gamma,
       block.bn1.beta, block.bn2.gamma, block.bn2.beta});
  CHECK(err <= 1e-4);
}

TEST_CASE("backbone stage shapes follow the channel plan at any /32 resolution") {
  Rng rng(11);
  struct Case {
    double mult;
    int h, w;
  };
  for (const Case c : {Case{1.0, 64, 32}, Case{0.125, 32, 32}, Case{0.125, 96, 64}}) {
    auto bb = make_backbone<double>(1, c.mult, rng);
    D x = D::uniform({2, 1, c.h, c.w}, -1, 1, rng);
    D h = bb.stem(x, true);
    CHECK(h.shape() == Shape{2, scaled_width(64, c.mult), c.h / 4, c.w / 4});
    const int plan[4] = {64, 64, 128, 256};  // input channels per block
    const int out_plan[4] = {64, 128, 256, 512};
    const int div[4] = {4, 8, 16, 32};
    for (int k = 1; k <= 4; ++k) {
      CHECK(bb.blocks[static_cast<std::size_t>(k - 1)].conv1.in_channels() ==
            scaled_width(plan[k - 1], c.mult));
      h = bb.block(k, h, true);
      CHECK(h.shape() ==
            Shape{2, scaled_width(out_plan[k - 1], c.mult), c.h / div[k - 1], c.w / div[k - 1]});
    }
    D pooled = global_avg_pool(h);
    CHECK(pooled.shape() == Shape{2, scaled_width(512, c.mult)});
  }
}
