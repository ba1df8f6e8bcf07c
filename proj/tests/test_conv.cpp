#include <catch2/catch_amalgamated.hpp>

#include "semfuse/gradcheck.hpp"
#include "semfuse/nn.hpp"

#include "oracles.hpp"

using namespace semfuse;

TEST_CASE("conv2d 1x1 identity kernel is the identity map") {
  Rng rng(1);
  Tensor x = Tensor::uniform({1, 1, 4, 4}, rng, -1, 1);
  Tensor w = Tensor::from({1, 1, 1, 1}, {1.0});
  REQUIRE(max_abs_diff(conv2d_forward(x, w, 1, 0), x) == 0.0);
}

TEST_CASE("conv2d all-ones 3x3 kernel on all-ones 3x3 input gives 9") {
  Tensor x = Tensor::full({1, 1, 3, 3}, 1.0);
  Tensor w = Tensor::full({1, 1, 3, 3}, 1.0);
  Tensor y = conv2d_forward(x, w, 1, 0);
  REQUIRE(y.shape() == Shape{1, 1, 1, 1});
  REQUIRE(y.item() == 9.0);
}

TEST_CASE("conv2d matches the padded-input oracle on random cases") {
  Rng rng(42);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t B = 1 + rng.uniform_int(2);
    const std::size_t C = 1 + rng.uniform_int(3);
    const std::size_t Co = 1 + rng.uniform_int(3);
    const std::size_t k = 1 + rng.uniform_int(3);
    const std::size_t H = k + rng.uniform_int(5);
    const std::size_t W = k + rng.uniform_int(5);
    const std::size_t stride = 1 + rng.uniform_int(2);
    const std::size_t pad = rng.uniform_int(2);
    Tensor x = Tensor::uniform({B, C, H, W}, rng, -1, 1);
    Tensor w = Tensor::uniform({Co, C, k, k}, rng, -1, 1);
    Tensor y = conv2d_forward(x, w, stride, pad);
    std::size_t OH = 0, OW = 0;
    auto ref = oracle::conv2d(x.values(), B, C, H, W, w.values(), Co, k, stride, pad, OH, OW);
    REQUIRE(y.shape() == Shape{B, Co, OH, OW});
    double worst = 0;
    for (std::size_t i = 0; i < ref.size(); ++i)
      worst = std::max(worst, std::abs(ref[i] - y.values()[i]));
    REQUIRE(worst <= 1e-12);
  }
}

TEST_CASE("conv2d rejects non-positive output size") {
  Tensor x = Tensor::zeros({1, 1, 2, 2});
  Tensor w = Tensor::zeros({1, 1, 3, 3});
  REQUIRE_THROWS_AS(conv2d_forward(x, w, 1, 0), std::invalid_argument);
}

TEST_CASE("deconv2d stride-1 1x1 identity kernel is the identity") {
  Rng rng(2);
  Tensor x = Tensor::uniform({1, 1, 3, 3}, rng, -1, 1);
  Tensor w = Tensor::from({1, 1, 1, 1}, {1.0});
  REQUIRE(max_abs_diff(deconv2d_forward(x, w, 1), x) == 0.0);
}

TEST_CASE("deconv2d scatter pattern for a 2x2 input at stride 2") {
  // ones kernel scatters each input pixel onto its own 2x2 block
  Tensor x = Tensor::from({1, 1, 2, 2}, {1, 2, 3, 4});
  Tensor w = Tensor::full({1, 1, 2, 2}, 1.0);
  Tensor y = deconv2d_forward(x, w, 2);
  std::size_t OH = 0, OW = 0;
  auto ref = oracle::deconv2d(x.values(), 1, 1, 2, 2, w.values(), 1, 2, 2, OH, OW);
  REQUIRE(y.shape() == Shape{1, 1, 4, 4});
  REQUIRE(y.values() == ref);
  REQUIRE(y.values() == std::vector<double>{1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4});
}

TEST_CASE("deconv2d shape law: 8x8 -> 16x16 at stride 2, k=2") {
  Tensor x = Tensor::zeros({1, 2, 8, 8});
  Tensor w = Tensor::zeros({2, 3, 2, 2});
  REQUIRE(deconv2d_forward(x, w, 2).shape() == Shape{1, 3, 16, 16});
}

TEST_CASE("deconv2d matches oracle on random cases") {
  Rng rng(43);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t B = 1 + rng.uniform_int(2);
    const std::size_t Ci = 1 + rng.uniform_int(3);
    const std::size_t Co = 1 + rng.uniform_int(3);
    const std::size_t k = 1 + rng.uniform_int(3);
    const std::size_t H = 1 + rng.uniform_int(4);
    const std::size_t W = 1 + rng.uniform_int(4);
    const std::size_t stride = 1 + rng.uniform_int(2);
    Tensor x = Tensor::uniform({B, Ci, H, W}, rng, -1, 1);
    Tensor w = Tensor::uniform({Ci, Co, k, k}, rng, -1, 1);
    Tensor y = deconv2d_forward(x, w, stride);
    std::size_t OH = 0, OW = 0;
    auto ref = oracle::deconv2d(x.values(), B, Ci, H, W, w.values(), Co, k, stride, OH, OW);
    REQUIRE(y.shape() == Shape{B, Co, OH, OW});
    double worst = 0;
    for (std::size_t i = 0; i < ref.size(); ++i)
      worst = std::max(worst, std::abs(ref[i] - y.values()[i]));
    REQUIRE(worst <= 1e-12);
  }
}

TEST_CASE("stride-2 conv then stride-2 deconv restores spatial dims") {
  Rng rng(3);
  Tensor x = Tensor::uniform({1, 2, 6, 6}, rng, -1, 1);
  Tensor wc = Tensor::uniform({4, 2, 2, 2}, rng, -1, 1);
  Tensor wd = Tensor::uniform({4, 2, 2, 2}, rng, -1, 1);
  Tensor mid = conv2d_forward(x, wc, 2, 0);
  REQUIRE(mid.shape() == Shape{1, 4, 3, 3});
  Tensor back = deconv2d_forward(mid, wd, 2);
  REQUIRE(back.shape() == Shape{1, 2, 6, 6});
}

TEST_CASE("conv and deconv gradients pass finite differences") {
  Rng rng(44);
  Tensor x0 = Tensor::uniform({1, 2, 5, 5}, rng, -1, 1);
  Tensor w = Tensor::uniform({3, 2, 3, 3}, rng, -1, 1).set_requires_grad(true);
  auto f = [&](const Tensor& x) { return sum_all(conv2d_forward(x, w, 2, 1)); };
  REQUIRE(check_gradients(f, x0) < 1e-6);
  auto fw = [&]() { return sum_all(mul(conv2d_forward(x0, w, 2, 1), conv2d_forward(x0, w, 2, 1))); };
  REQUIRE(check_gradients_params(fw, {&w}) < 1e-6);

  Tensor wd = Tensor::uniform({2, 3, 2, 2}, rng, -1, 1).set_requires_grad(true);
  auto fd = [&]() { return sum_all(mul(deconv2d_forward(x0, wd, 2), deconv2d_forward(x0, wd, 2))); };
  REQUIRE(check_gradients_params(fd, {&wd}) < 1e-6);
}

TEST_CASE("conv stack with batchnorm passes the gradient suite") {
  Rng rng(45);
  ConvUnit u1 = make_conv_unit(2, 4, 3, 1, 1, rng);
  ConvUnit u2 = make_conv_unit(4, 3, 2, 2, 0, rng);
  Tensor x = Tensor::uniform({1, 2, 6, 6}, rng, -1, 1);
  auto loss_fn = [&]() {
    Tensor h = u2.forward(u1.forward(x, true), true);
    return mean_all(mul(h, h));
  };
  std::vector<Tensor*> params;
  for (auto* t : u1.parameters()) params.push_back(t);
  for (auto* t : u2.parameters()) params.push_back(t);
  REQUIRE(check_gradients_params(loss_fn, params) < 1e-4);
}
