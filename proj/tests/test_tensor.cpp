#include <doctest.h>

#include <cmath>
#include <limits>

#include "oracles.hpp"
#include "xvt/gradcheck.hpp"
#include "xvt/tensor.hpp"

using namespace xvt;
using D = Tensor<double>;

TEST_CASE("matmul identity leaves the other operand unchanged") {
  D eye({2, 2}, {1, 0, 0, 1});
  D b({2, 2}, {3, 1, 2, 4});
  D c = matmul(eye, b);
  for (int i = 0; i < 4; ++i) CHECK(c.at(i) == doctest::Approx(b.at(i)).epsilon(1e-15));
}

TEST_CASE("matmul 1x2 by 2x1") {
  D a({1, 2}, {1, 2});
  D b({2, 1}, {3, 4});
  CHECK(matmul(a, b).item() == doctest::Approx(11.0).epsilon(1e-15));
}

TEST_CASE("matmul matches the triple-loop oracle on random shapes") {
  Rng rng(7);
  for (int trial = 0; trial < 12; ++trial) {
    const int r = 1 + rng.uniform_int(32), k = 1 + rng.uniform_int(32), c = 1 + rng.uniform_int(32);
    D a = D::uniform({r, k}, -1, 1, rng);
    D b = D::uniform({k, c}, -1, 1, rng);
    const auto expected = oracle::matmul(a.values(), b.values(), r, k, c);
    D got = matmul(a, b);
    for (std::size_t i = 0; i < expected.size(); ++i) {
      const double denom = std::max(std::abs(expected[i]), 1.0);
      CHECK(std::abs(got.values()[i] - expected[i]) / denom <= 1e-12);
    }
  }
}

TEST_CASE("matmul rejects mismatched inner dimensions, naming both shapes") {
  D a({2, 3}, std::vector<double>(6, 0.0));
  D b({4, 2}, std::vector<double>(8, 0.0));
  CHECK_THROWS_WITH_AS(matmul(a, b),
                       doctest::Contains("(2,3)"), DimensionError);
}

TEST_CASE("softmax of an all-equal row is uniform") {
  D x({1, 4}, {2.5, 2.5, 2.5, 2.5});
  D y = softmax(x, 1);
  for (int i = 0; i < 4; ++i) CHECK(y.at(i) == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("softmax closed form [0, ln 3] -> [0.25, 0.75]") {
  D x({2}, {0.0, std::log(3.0)});
  D y = softmax(x, 0);
  CHECK(y.at(0) == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(y.at(1) == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("softmax survives a +1000 logit and matches the extended-precision oracle") {
  D x({1, 4}, {1000.0, 0.0, 0.0, 0.0});
  D y = softmax(x, 1);
  const auto expected = oracle::softmax_row({1000.0L, 0.0L, 0.0L, 0.0L});
  for (int i = 0; i < 4; ++i) {
    CHECK(std::isfinite(y.at(i)));
    CHECK(std::abs(y.at(i) - static_cast<double>(expected[static_cast<std::size_t>(i)])) <= 1e-12);
  }
}

TEST_CASE("softmax rows along the chosen axis sum to 1") {
  Rng rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    const int a = 1 + rng.uniform_int(5), b = 1 + rng.uniform_int(5), c = 1 + rng.uniform_int(5);
    D x = D::uniform({a, b, c}, -30, 30, rng);
    for (int axis = 0; axis < 3; ++axis) {
      D y = softmax(x, axis);
      const int len = x.dim(axis);
      std::int64_t outer = 1, inner = 1;
      for (int d2 = 0; d2 < axis; ++d2) outer *= x.dim(d2);
      for (int d2 = axis + 1; d2 < 3; ++d2) inner *= x.dim(d2);
      for (std::int64_t o = 0; o < outer; ++o) {
        for (std::int64_t in = 0; in < inner; ++in) {
          double total = 0;
          for (int i = 0; i < len; ++i) {
            total += y.values()[static_cast<std::size_t>(o * len * inner + i * inner + in)];
          }
          CHECK(std::abs(total - 1.0) <= 1e-6);
        }
      }
    }
  }
}

TEST_CASE("softmax rejects non-finite input and bad axes") {
  D bad({2}, {1.0, std::numeric_limits<double>::infinity()});
  CHECK_THROWS_AS(softmax(bad, 0), NumericError);
  D x({2, 2}, {0, 0, 0, 0});
  CHECK_THROWS_AS(softmax(x, 2), ContractError);
}

TEST_CASE("elementwise basics") {
  D x({3}, {-1, 0, 2});
  D y = relu(x);
  CHECK(y.at(0) == 0.0);
  CHECK(y.at(1) == 0.0);
  CHECK(y.at(2) == 2.0);

  D a({2, 2}, {1, 2, 3, 4});
  D zero = D::scalar(0.0);
  D same = add(a, zero);
  for (int i = 0; i < 4; ++i) CHECK(same.at(i) == a.at(i));

  D bad({3}, {0, 0, 0});
  CHECK_THROWS_WITH_AS(add(a, bad), doctest::Contains("(2,2)"), DimensionError);
}

TEST_CASE("product rule: gradient of mul at (3,5) is (5,3)") {
  D a = D::scalar(3.0, true);
  D b = D::scalar(5.0, true);
  mul(a, b).backward();
  CHECK(a.grad()[0] == doctest::Approx(5.0));
  CHECK(b.grad()[0] == doctest::Approx(3.0));
}

TEST_CASE("backward of sum gives ones") {
  D x({2, 3}, {1, 2, 3, 4, 5, 6}, true);
  sum(x).backward();
  for (double g : x.grad()) CHECK(g == 1.0);
}

TEST_CASE("backward of sum(x*x) at [1,2] gives [2,4]") {
  D x({2}, {1, 2}, true);
  sum(mul(x, x)).backward();
  CHECK(x.grad()[0] == doctest::Approx(2.0));
  CHECK(x.grad()[1] == doctest::Approx(4.0));
}

TEST_CASE("backward requires a scalar output") {
  D x({2}, {1, 2}, true);
  D y = mul(x, x);
  CHECK_THROWS_AS(y.backward(), ContractError);
}

TEST_CASE("shared subexpressions are visited once (diamond graph)") {
  D x({3}, {1, 2, 3}, true);
  D z = add(x, x);
  sum(z).backward();
  for (double g : x.grad()) CHECK(g == 2.0);
}

TEST_CASE("backward on the same seeded graph is bit-identical across runs") {
  auto run = [] {
    Rng rng(99);
    D q = D::uniform({1, 4, 3}, -1, 1, rng, true);
    D k = D::uniform({1, 5, 3}, -1, 1, rng, true);
    D v = D::uniform({1, 5, 2}, -1, 1, rng, true);
    D att = softmax(scale(bmm_nt(q, k), 1.0 / std::sqrt(3.0)), 2);
    sum(bmm(att, v)).backward();
    std::vector<double> grads;
    for (const auto& t : {q, k, v}) {
      for (double g : t.grad()) grads.push_back(g);
    }
    return grads;
  };
  const auto first = run();
  const auto second = run();
  REQUIRE(first.size() == second.size());
  for (std::size_t i = 0; i < first.size(); ++i) CHECK(first[i] == second[i]);
}

TEST_CASE("reshape is metadata-only and still routes gradients") {
  D x({2, 3}, {1, 2, 3, 4, 5, 6}, true);
  D y = reshape(x, {3, 2});
  CHECK(y.data() == x.data());  // shared buffer
  sum(mul(y, y)).backward();
  CHECK(x.grad()[4] == doctest::Approx(10.0));
}

TEST_CASE("finite_diff_check: sum of squares has gradient error below 1e-8") {
  Rng rng(3);
  // values kept away from 0 so relative errors are measured against O(1) grads
  D x = D::uniform({8}, 0.5, 1.5, rng, true);
  const double err = finite_diff_check([&] { return sum(mul(x, x)); }, x, 1e-5);
  CHECK(err <= 1e-8);
}

TEST_CASE("finite_diff_check: softmax-then-sum is a constant map") {
  Rng rng(4);
  D x = D::uniform({1, 3}, -1, 1, rng, true);
  // the function is exactly constant, so a large step is valid and keeps
  // floating-point cancellation out of the numeric estimate
  const double err = finite_diff_check([&] { return sum(softmax(x, 1)); }, x, 0.5);
  CHECK(err <= 1e-6);
}

TEST_CASE("dropout: eval is the identity, training uses inverted scaling") {
  Rng rng(5);
  D x = D::uniform({50, 20}, 0.5, 1.5, rng, true);
  Rng eval_rng(1);
  D eval_out = dropout(x, 0.4, false, eval_rng);
  CHECK(eval_out.data() == x.data());

  Rng train_rng(2);
  D train_out = dropout(x, 0.4, true, train_rng);
  double kept = 0, zeros = 0, total_ratio = 0;
  for (std::size_t i = 0; i < x.values().size(); ++i) {
    if (train_out.values()[i] == 0.0) {
      ++zeros;
    } else {
      total_ratio += train_out.values()[i] / x.values()[i];
      ++kept;
    }
  }
  CHECK(kept / (kept + zeros) == doctest::Approx(0.6).epsilon(0.05));
  CHECK(total_ratio / kept == doctest::Approx(1.0 / 0.6).epsilon(1e-9));
  CHECK_THROWS_AS(dropout(x, 1.0, true, train_rng), ContractError);
}

TEST_CASE("concat splits gradients back to its inputs") {
  D a({2, 2}, {1, 2, 3, 4}, true);
  D b({2, 3}, {5, 6, 7, 8, 9, 10}, true);
  D c = concat(std::vector<D>{a, b}, 1);
  CHECK(c.shape() == Shape{2, 5});
  CHECK(c.at(1, 2) == 8.0);
  sum(mul(c, c)).backward();
  CHECK(a.grad()[3] == doctest::Approx(8.0));
  CHECK(b.grad()[0] == doctest::Approx(10.0));
}

TEST_CASE("flatten_rows enumerates pixels in row-major order") {
  Rng rng(8);
  D x = D::uniform({2, 3, 2, 4}, -1, 1, rng);
  D rows = flatten_rows(x);
  CHECK(rows.shape() == Shape{2, 8, 3});
  // index-arithmetic oracle: row p = y*W + x holds channel vector at (y, x)
  for (int n = 0; n < 2; ++n) {
    for (int y = 0; y < 2; ++y) {
      for (int xx = 0; xx < 4; ++xx) {
        for (int c = 0; c < 3; ++c) {
          CHECK(rows.at(n, y * 4 + xx, c) == x.at(n, c, y, xx));
        }
      }
    }
  }
  D back = unflatten_rows(rows, 2, 4);
  for (std::size_t i = 0; i < x.values().size(); ++i) CHECK(back.values()[i] == x.values()[i]);
}
