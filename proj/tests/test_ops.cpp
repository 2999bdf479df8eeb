#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "clotseg/conv.hpp"
#include "clotseg/ops.hpp"
#include "clotseg/tensor.hpp"
#include "oracles.hpp"

using clotseg::Shape;
using clotseg::Tensor;
namespace ops = clotseg;

namespace {

Tensor<double> randn(Shape shape, clotseg::Rng& rng, bool rg = false) {
  return Tensor<double>::randn(std::move(shape), rng, 1.0, 0.0, rg);
}

}  // namespace

TEST_CASE("matmul: identity leaves any 2x2 matrix unchanged") {
  auto eye = Tensor<double>::from_data({2, 2}, {1, 0, 0, 1});
  clotseg::Rng rng(1);
  auto a = randn({2, 2}, rng);
  auto out = ops::matmul(eye, a);
  for (int i = 0; i < 4; ++i) CHECK(out.data()[i] == doctest::Approx(a.data()[i]));
}

TEST_CASE("matmul: hand-evaluated dot products") {
  auto a = Tensor<double>::from_data({2, 2}, {1, 2, 3, 4});
  auto b = Tensor<double>::from_data({2, 1}, {5, 6});
  auto out = ops::matmul(a, b);
  CHECK(out.shape() == Shape{2, 1});
  CHECK(out.data()[0] == doctest::Approx(17.0));
  CHECK(out.data()[1] == doctest::Approx(39.0));
}

TEST_CASE("matmul: grad of sum(A*B) wrt A equals ones*B^T") {
  clotseg::Rng rng(2);
  auto a = randn({3, 4}, rng, true);
  auto b = randn({4, 5}, rng);
  auto y = ops::sum_all(ops::matmul(a, b));
  clotseg::backward(y);
  // ones(3,5) * B^T gives row sums of B in every row of grad_A.
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 4; ++k) {
      double expect = 0;
      for (int j = 0; j < 5; ++j) expect += b.data()[k * 5 + j];
      CHECK(a.grad()[i * 4 + k] == doctest::Approx(expect).epsilon(1e-9));
    }
}

TEST_CASE("matmul: shape error names both shapes") {
  auto a = Tensor<double>::zeros({2, 3});
  auto b = Tensor<double>::zeros({4, 2});
  try {
    ops::matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const clotseg::ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[4,2]") != std::string::npos);
  }
}

TEST_CASE("matmul: batched with broadcast matches the naive loop") {
  clotseg::Rng rng(3);
  auto a = randn({2, 3, 4}, rng);
  auto b = randn({4, 5}, rng);  // broadcast over the leading batch dim
  auto out = ops::matmul(a, b);
  CHECK(out.shape() == Shape{2, 3, 5});
  for (int t = 0; t < 2; ++t) {
    std::vector<double> slice(a.data().begin() + t * 12, a.data().begin() + (t + 1) * 12);
    auto ref = oracles::matmul(slice, {b.data().begin(), b.data().end()}, 3, 4, 5);
    for (int i = 0; i < 15; ++i)
      CHECK(out.data()[t * 15 + i] == doctest::Approx(ref[static_cast<std::size_t>(i)]));
  }
}

TEST_CASE("conv2d: 1x1 unit kernel is the identity") {
  clotseg::Rng rng(4);
  auto x = randn({1, 5, 5}, rng);
  auto k = Tensor<double>::from_data({1, 1, 1, 1}, {1.0});
  auto y = ops::conv2d(x, k);
  for (int i = 0; i < 25; ++i) CHECK(y.data()[i] == doctest::Approx(x.data()[i]));
}

TEST_CASE("conv2d: all-ones 3x3 kernel spreads a centered delta into a box") {
  std::vector<double> img(25, 0.0);
  img[12] = 1.0;  // center of a 5x5
  auto x = Tensor<double>::from_data({1, 5, 5}, img);
  auto k = Tensor<double>::from_data({1, 1, 3, 3}, std::vector<double>(9, 1.0));
  auto y = ops::conv2d(x, k, clotseg::Padding::kSame);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) {
      const double expect = (std::abs(i - 2) <= 1 && std::abs(j - 2) <= 1) ? 1.0 : 0.0;
      CHECK(y.at({0, i, j}) == doctest::Approx(expect));
    }
}

TEST_CASE("conv2d: stride=k valid padding implements the patch-embedding shape law") {
  clotseg::Rng rng(5);
  const std::int64_t k = 4, t = 3;
  auto x = randn({2, k * t, k * t}, rng);
  auto kern = randn({6, 2, k, k}, rng);
  auto y = ops::conv2d(x, kern, clotseg::Padding::kValid, k);
  CHECK(y.shape() == Shape{6, t, t});
}

TEST_CASE("conv2d matches the sliding-window oracle") {
  clotseg::Rng rng(6);
  for (int pad_same = 0; pad_same <= 1; ++pad_same) {
    for (std::int64_t stride : {1, 2}) {
      auto x = randn({3, 8, 8}, rng);
      auto kern = randn({2, 3, 3, 3}, rng);
      auto y = ops::conv2d(x, kern, pad_same ? clotseg::Padding::kSame : clotseg::Padding::kValid,
                           stride);
      const std::int64_t pad = pad_same ? 1 : 0;
      auto ref = oracles::conv2d({x.data().begin(), x.data().end()}, 3, 8, 8,
                                 {kern.data().begin(), kern.data().end()}, 2, 3, pad, stride);
      REQUIRE(y.size() == static_cast<std::int64_t>(ref.size()));
      for (std::size_t i = 0; i < ref.size(); ++i)
        CHECK(y.data()[i] == doctest::Approx(ref[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("conv2d: error paths") {
  auto x = Tensor<double>::zeros({2, 4, 4});
  auto k3 = Tensor<double>::zeros({1, 3, 3, 3});
  CHECK_THROWS_AS(ops::conv2d(x, k3), clotseg::ShapeError);  // channel mismatch
  auto k2 = Tensor<double>::zeros({1, 2, 2, 2});
  CHECK_THROWS_AS(ops::conv2d(x, k2, clotseg::Padding::kSame), clotseg::ValueError);  // even k
  auto k = Tensor<double>::zeros({1, 2, 3, 3});
  CHECK_THROWS_AS(ops::conv2d(x, k, clotseg::Padding::kSame, 0), clotseg::ValueError);
}

TEST_CASE("conv2d: bias is added per output channel") {
  auto x = Tensor<double>::zeros({1, 3, 3});
  auto k = Tensor<double>::zeros({2, 1, 1, 1});
  auto b = Tensor<double>::from_data({2}, {0.5, -1.0});
  auto y = ops::conv2d(x, k, b);
  CHECK(y.at({0, 1, 1}) == doctest::Approx(0.5));
  CHECK(y.at({1, 2, 0}) == doctest::Approx(-1.0));
}

TEST_CASE("maxpool_window: window 1 is the identity") {
  clotseg::Rng rng(7);
  auto x = randn({2, 4, 4}, rng);
  auto y = ops::maxpool_window(x, 1);
  for (int i = 0; i < 32; ++i) CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("maxpool_window: 1D example [0,5,0,0] with window 3") {
  auto x = Tensor<double>::from_data({1, 1, 4}, {0, 5, 0, 0});
  auto y = ops::maxpool_window(x, 3);
  CHECK(y.data()[0] == 5);
  CHECK(y.data()[1] == 5);
  CHECK(y.data()[2] == 5);
  CHECK(y.data()[3] == 0);
}

TEST_CASE("maxpool_window: constant input stays constant") {
  auto x = Tensor<double>::filled({1, 6, 6}, 2.5);
  auto y = ops::maxpool_window(x, 4);
  for (int i = 0; i < 36; ++i) CHECK(y.data()[i] == 2.5);
}

TEST_CASE("maxpool_window equals the brute-force oracle for w in {1,2,3,8}") {
  clotseg::Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    auto x = randn({1, 8, 8}, rng);
    for (std::int64_t w : {1, 2, 3, 8}) {
      auto y = ops::maxpool_window(x, w);
      auto ref = oracles::maxpool({x.data().begin(), x.data().end()}, 1, 8, 8, w);
      for (std::size_t i = 0; i < ref.size(); ++i) CHECK(y.data()[i] == ref[i]);
    }
  }
}

TEST_CASE("maxpool_window backward routes to the first row-major maximum on ties") {
  clotseg::Rng rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    // Small integer values force frequent ties.
    std::vector<double> vals(36);
    for (auto& v : vals) v = static_cast<double>(rng.uniform_int(0, 2));
    auto x = Tensor<double>::from_data({1, 6, 6}, vals, true);
    auto y = ops::maxpool_window(x, 3);
    // Pick one output position per trial and check its gradient target.
    const auto i = rng.uniform_int(0, 5), j = rng.uniform_int(0, 5);
    std::vector<double> seed(36, 0.0);
    seed[static_cast<std::size_t>(i * 6 + j)] = 1.0;
    auto loss = ops::sum_all(ops::mul(y, Tensor<double>::from_data({1, 6, 6}, seed)));
    clotseg::backward(loss);
    const auto expect = oracles::maxpool_argmax(vals, 6, 6, 3, i, j);
    for (std::int64_t t = 0; t < 36; ++t)
      CHECK(x.grad()[t] == doctest::Approx(t == expect ? 1.0 : 0.0));
  }
}

TEST_CASE("maxpool_window rejects window < 1") {
  auto x = Tensor<double>::zeros({1, 2, 2});
  CHECK_THROWS_AS(ops::maxpool_window(x, 0), clotseg::ValueError);
}

TEST_CASE("softmax_lastdim: uniform logits give uniform probabilities") {
  auto x = Tensor<double>::zeros({3});
  auto y = ops::softmax_lastdim(x);
  for (int i = 0; i < 3; ++i) CHECK(y.data()[i] == doctest::Approx(1.0 / 3));
}

TEST_CASE("softmax_lastdim: max subtraction prevents overflow") {
  auto x = Tensor<double>::from_data({2}, {1000.0, 1000.0});
  auto y = ops::softmax_lastdim(x);
  CHECK(y.data()[0] == doctest::Approx(0.5));
  CHECK(y.data()[1] == doctest::Approx(0.5));
}

TEST_CASE("softmax_lastdim: [0, ln 3] -> [0.25, 0.75]") {
  auto x = Tensor<double>::from_data({2}, {0.0, std::log(3.0)});
  auto y = ops::softmax_lastdim(x);
  CHECK(y.data()[0] == doctest::Approx(0.25));
  CHECK(y.data()[1] == doctest::Approx(0.75));
}

TEST_CASE("softmax_lastdim rows sum to one and stay in [0,1]") {
  clotseg::Rng rng(10);
  auto x = randn({7, 5}, rng);
  auto y = ops::softmax_lastdim(x);
  for (int r = 0; r < 7; ++r) {
    double sum = 0;
    for (int i = 0; i < 5; ++i) {
      const double v = y.data()[r * 5 + i];
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
      sum += v;
    }
    CHECK(std::abs(sum - 1.0) < 1e-6);
  }
}

TEST_CASE("layer_norm: constant slice maps to zero before affine") {
  auto x = Tensor<double>::filled({2, 4}, 3.7);
  auto gamma = Tensor<double>::filled({4}, 1.0);
  auto beta = Tensor<double>::zeros({4});
  auto y = ops::layer_norm(x, gamma, beta);
  for (int i = 0; i < 8; ++i) CHECK(y.data()[i] == doctest::Approx(0.0));
}

TEST_CASE("layer_norm: [1,3] normalizes to [-1,1] (population variance)") {
  auto x = Tensor<double>::from_data({2}, {1.0, 3.0});
  auto gamma = Tensor<double>::filled({2}, 1.0);
  auto beta = Tensor<double>::zeros({2});
  auto y = ops::layer_norm(x, gamma, beta);
  CHECK(y.data()[0] == doctest::Approx(-1.0).epsilon(1e-4));
  CHECK(y.data()[1] == doctest::Approx(1.0).epsilon(1e-4));
}

TEST_CASE("layer_norm: output mean over the last dim vanishes") {
  clotseg::Rng rng(11);
  auto x = randn({5, 8}, rng);
  auto gamma = Tensor<double>::filled({8}, 1.0);
  auto beta = Tensor<double>::zeros({8});
  auto y = ops::layer_norm(x, gamma, beta);
  for (int r = 0; r < 5; ++r) {
    double mean = 0;
    for (int i = 0; i < 8; ++i) mean += y.data()[r * 8 + i];
    CHECK(std::abs(mean / 8) < 1e-6);
  }
}

TEST_CASE("resize_nearest: factor 1 is the identity, factor 2 replicates blocks") {
  auto x = Tensor<double>::from_data({1, 2, 2}, {1, 2, 3, 4});
  auto same = ops::resize_nearest(x, 1);
  for (int i = 0; i < 4; ++i) CHECK(same.data()[i] == x.data()[i]);
  auto y = ops::resize_nearest(x, 2);
  CHECK(y.shape() == Shape{1, 4, 4});
  const double expect[4][4] = {{1, 1, 2, 2}, {1, 1, 2, 2}, {3, 3, 4, 4}, {3, 3, 4, 4}};
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) CHECK(y.at({0, i, j}) == expect[i][j]);
  // Sum preserved up to factor^2.
  CHECK(ops::sum_all(y).item() == doctest::Approx(4.0 * ops::sum_all(x).item()));
  CHECK_THROWS_AS(ops::resize_nearest(x, 0), clotseg::ValueError);
}

TEST_CASE("slice/concat along dim0 round-trip") {
  clotseg::Rng rng(12);
  auto x = randn({6, 3, 3}, rng);
  auto a = ops::slice_dim0(x, 0, 2);
  auto b = ops::slice_dim0(x, 2, 6);
  auto back = ops::concat_dim0<double>({a, b});
  CHECK(back.shape() == x.shape());
  for (std::int64_t i = 0; i < x.size(); ++i) CHECK(back.data()[i] == x.data()[i]);
}

TEST_CASE("token layout round-trip through chw") {
  clotseg::Rng rng(13);
  auto tokens = randn({12, 5}, rng);  // 3x4 grid
  auto chw = ops::tokens_to_chw(tokens, 3, 4);
  CHECK(chw.shape() == Shape{5, 3, 4});
  CHECK(chw.at({2, 1, 3}) == tokens.at({1 * 4 + 3, 2}));
  auto back = ops::chw_to_tokens(chw);
  for (std::int64_t i = 0; i < tokens.size(); ++i) CHECK(back.data()[i] == tokens.data()[i]);
}

TEST_CASE("token_grid_upsample replicates tokens into blocks") {
  auto tokens = Tensor<double>::from_data({4, 1}, {1, 2, 3, 4});  // 2x2 grid
  auto up = ops::token_grid_upsample(tokens, 2);
  CHECK(up.shape() == Shape{16, 1});
  // Grid rows: [1 1 2 2 / 1 1 2 2 / 3 3 4 4 / 3 3 4 4]
  const double expect[16] = {1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4};
  for (int i = 0; i < 16; ++i) CHECK(up.data()[i] == expect[i]);
}

TEST_CASE("softmax2_fg agrees with softmax over the class axis") {
  clotseg::Rng rng(14);
  auto logits = randn({2, 3, 3}, rng);
  auto p = ops::softmax2_fg(logits);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      const double a0 = logits.at({0, i, j}), a1 = logits.at({1, i, j});
      const double expect = std::exp(a1) / (std::exp(a0) + std::exp(a1));
      CHECK(p.at({i, j}) == doctest::Approx(expect));
    }
}

TEST_CASE("activation forwards") {
  auto x = Tensor<double>::from_data({4}, {-2.0, -0.5, 0.5, 2.0});
  auto r = ops::relu(x);
  CHECK(r.data()[0] == 0.0);
  CHECK(r.data()[3] == 2.0);
  auto e = ops::elu(x);
  CHECK(e.data()[0] == doctest::Approx(std::exp(-2.0) - 1.0));
  CHECK(e.data()[2] == doctest::Approx(0.5));
  auto s = ops::sigmoid(x);
  CHECK(s.data()[1] == doctest::Approx(1.0 / (1.0 + std::exp(0.5))));
  auto t = ops::tanh(x);
  CHECK(t.data()[3] == doctest::Approx(std::tanh(2.0)));
}
