#include <catch2/catch_amalgamated.hpp>

#include "semfuse/gradcheck.hpp"
#include "semfuse/nn.hpp"
#include "semfuse/optim.hpp"
#include "semfuse/tensor.hpp"

#include "oracles.hpp"

using namespace semfuse;

TEST_CASE("linear_forward identity and forced arithmetic") {
  DenseLayer layer;
  layer.weight = Tensor::from({2, 2}, {1, 0, 0, 1});
  layer.bias = Tensor::zeros({2});
  Tensor x = Tensor::from({1, 2}, {1, 0});
  Tensor y = linear_forward(x, layer);
  REQUIRE(y.values() == std::vector<double>{1, 0});

  DenseLayer sumlayer;
  sumlayer.weight = Tensor::from({2, 1}, {1, 1});
  sumlayer.bias = Tensor::from({1}, {0.5});
  Tensor x2 = Tensor::from({1, 2}, {1, 2});
  REQUIRE(linear_forward(x2, sumlayer).item() == 3.5);
}

TEST_CASE("linear_forward matches per-element dot-product oracle") {
  Rng rng(101);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t B = 1 + rng.uniform_int(5);
    const std::size_t in = 1 + rng.uniform_int(6);
    const std::size_t out = 1 + rng.uniform_int(6);
    Tensor x = Tensor::uniform({B, in}, rng, -2, 2);
    Tensor w = Tensor::uniform({in, out}, rng, -2, 2);
    Tensor y = matmul(x, w);
    auto ref = oracle::matmul(x.values(), w.values(), B, in, out);
    double worst = 0;
    for (std::size_t i = 0; i < ref.size(); ++i)
      worst = std::max(worst, std::abs(ref[i] - y.values()[i]));
    REQUIRE(worst <= 1e-12);
  }
}

TEST_CASE("linear_forward rejects mismatched shapes naming both") {
  DenseLayer layer;
  layer.weight = Tensor::from({3, 2}, {1, 0, 0, 1, 0, 0});
  layer.bias = Tensor::zeros({2});
  Tensor x = Tensor::from({1, 2}, {1, 0});
  REQUIRE_THROWS_WITH(linear_forward(x, layer),
                      Catch::Matchers::ContainsSubstring("[1x2]") &&
                          Catch::Matchers::ContainsSubstring("[3x2]"));
}

TEST_CASE("batchnorm training normalizes batch columns") {
  BatchNorm bn = BatchNorm::make(1);
  Tensor x = Tensor::from({2, 1}, {0, 2});
  Tensor y = batchnorm_forward(x, bn, true);
  REQUIRE(y.at(0) == Catch::Approx(-1.0).margin(1e-4));
  REQUIRE(y.at(1) == Catch::Approx(1.0).margin(1e-4));

  // constant column: zero variance handled via eps
  BatchNorm bn2 = BatchNorm::make(2);
  Tensor xc = Tensor::from({3, 2}, {5, -1, 5, -1, 5, -1});
  Tensor yc = batchnorm_forward(xc, bn2, true);
  for (double v : yc.values()) REQUIRE(v == 0.0);
}

TEST_CASE("batchnorm eval with fresh running stats is near identity") {
  BatchNorm bn = BatchNorm::make(2);
  Tensor x = Tensor::from({2, 2}, {1, 2, 3, 4});
  Tensor y = batchnorm_forward(x, bn, false);
  for (std::size_t i = 0; i < 4; ++i)
    REQUIRE(y.at(i) == Catch::Approx(x.at(i)).epsilon(1e-5));
}

TEST_CASE("batchnorm training rejects batch of one") {
  BatchNorm bn = BatchNorm::make(2);
  Tensor x = Tensor::from({1, 2}, {1, 2});
  REQUIRE_THROWS_AS(batchnorm_forward(x, bn, true), std::invalid_argument);
}

TEST_CASE("batchnorm updates running stats with momentum 0.1") {
  BatchNorm bn = BatchNorm::make(1);
  Tensor x = Tensor::from({2, 1}, {0, 2});  // mean 1, unbiased var 2
  batchnorm_forward(x, bn, true);
  REQUIRE(bn.running_mean[0] == Catch::Approx(0.1));
  REQUIRE(bn.running_var[0] == Catch::Approx(0.9 + 0.1 * 2.0));
}

TEST_CASE("activation basics") {
  REQUIRE(sigmoid(Tensor::scalar(0.0)).item() == 0.5);
  Tensor s = softmax(Tensor::from({1, 3}, {7, 7, 7}), 1);
  for (double v : s.values()) REQUIRE(v == Catch::Approx(1.0 / 3.0));

  Tensor big = softmax(Tensor::from({1, 2}, {1000, 0}), 1);
  REQUIRE(big.all_finite());
  REQUIRE(big.at(0) == Catch::Approx(1.0));
  REQUIRE(big.at(1) >= 0.0);
}

TEST_CASE("softmax rows sum to one within 1e-12, any axis") {
  Rng rng(77);
  Tensor x = Tensor::uniform({4, 5, 3}, rng, -30, 30);
  for (std::size_t axis = 0; axis < 3; ++axis) {
    Tensor y = softmax(x, axis);
    const auto l = Shape{4, 5, 3};
    // sum along the softmaxed axis must be 1
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= l[i];
    for (std::size_t i = axis + 1; i < 3; ++i) inner *= l[i];
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t in = 0; in < inner; ++in) {
        double sum = 0;
        for (std::size_t k = 0; k < l[axis]; ++k)
          sum += y.values()[o * l[axis] * inner + k * inner + in];
        REQUIRE(std::abs(sum - 1.0) <= 1e-12);
      }
  }
}

TEST_CASE("sigmoid stays strictly inside (0,1) on ordinary inputs") {
  Rng rng(78);
  Tensor x = Tensor::uniform({100}, rng, -30, 30);
  Tensor y = sigmoid(x);
  for (double v : y.values()) {
    REQUIRE(v > 0.0);
    REQUIRE(v < 1.0);
  }
}

TEST_CASE("maxpool values, tie rule, permutation invariance") {
  Tensor x = Tensor::from({2, 2}, {1, 3, 2, 0});
  auto pooled = maxpool_over_axis(x, 0);  // max over rows -> per-column maxima
  REQUIRE(pooled.values.values() == std::vector<double>{2, 3});

  auto tie = maxpool_over_axis(Tensor::from({2, 1}, {5, 5}), 0);
  REQUIRE(tie.argmax[0] == 0);

  Rng rng(5);
  Tensor a = Tensor::uniform({6, 4}, rng, -1, 1);
  std::vector<double> shuffled = a.values();
  // reverse the pooled axis
  for (std::size_t c = 0; c < 4; ++c)
    for (std::size_t r = 0; r < 6; ++r) shuffled[r * 4 + c] = a.values()[(5 - r) * 4 + c];
  Tensor b = Tensor::from({6, 4}, shuffled);
  REQUIRE(max_abs_diff(max_over_axis(a, 0), max_over_axis(b, 0)) == 0.0);
}

TEST_CASE("maxpool backward routes gradient to the argmax only") {
  Tensor x = Tensor::from({2, 2}, {1, 3, 2, 0}).set_requires_grad(true);
  Tensor loss = sum_all(max_over_axis(x, 0));
  backward(loss);
  REQUIRE(x.grad() == std::vector<double>{0, 1, 1, 0});
}

TEST_CASE("maxpool rejects empty axis") {
  Tensor x = Tensor::zeros({0, 3});
  REQUIRE_THROWS_AS(maxpool_over_axis(x, 0), std::invalid_argument);
}

TEST_CASE("backward of sum gives all-ones gradient") {
  Tensor x = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6}).set_requires_grad(true);
  backward(sum_all(x));
  REQUIRE(x.grad() == std::vector<double>(6, 1.0));
}

TEST_CASE("backward matches closed form for sigmoid(w)*c") {
  const double w = 0.37, c = 2.5;
  Tensor wt = Tensor::scalar(w).set_requires_grad(true);
  Tensor loss = scale(sigmoid(wt), c);
  backward(loss);
  const double s = 1.0 / (1.0 + std::exp(-w));
  REQUIRE(wt.grad()[0] == Catch::Approx(s * (1 - s) * c).epsilon(1e-12));
}

TEST_CASE("backward requires scalar loss") {
  Tensor x = Tensor::from({2}, {1, 2}).set_requires_grad(true);
  Tensor y = scale(x, 2.0);
  REQUIRE_THROWS_AS(backward(y), std::invalid_argument);
}

TEST_CASE("check_gradients on x^2 at 3") {
  auto f = [](const Tensor& x) { return mul(x, x); };
  Tensor x = Tensor::scalar(3.0);
  REQUIRE(check_gradients(f, x) < 1e-8);
}

TEST_CASE("check_gradients on a random MLP with mean-squared loss") {
  Rng rng(2024);
  Mlp mlp = make_mlp({3, 5, 2}, rng, false);
  Tensor target = Tensor::uniform({4, 2}, rng, -1, 1);
  Tensor x0 = Tensor::uniform({4, 3}, rng, -1, 1);
  auto f = [&](const Tensor& x) {
    Tensor d = sub(mlp.forward(x, true), target);
    return mean_all(mul(d, d));
  };
  REQUIRE(check_gradients(f, x0) < 1e-4);

  auto loss_fn = [&]() {
    Tensor d = sub(mlp.forward(x0, true), target);
    return mean_all(mul(d, d));
  };
  REQUIRE(check_gradients_params(loss_fn, mlp.parameters()) < 1e-4);
}

TEST_CASE("cross_entropy gradient agrees with finite differences") {
  Rng rng(31);
  Tensor logits0 = Tensor::uniform({5, 3}, rng, -1, 1);
  std::vector<std::size_t> labels{0, 2, 1, 1, 0};
  std::vector<double> weights{1.0, 2.0, 0.5};
  auto f = [&](const Tensor& z) { return cross_entropy(z, labels, weights); };
  REQUIRE(check_gradients(f, logits0) < 1e-6);
}

TEST_CASE("broadcast add/mul shapes and gradients") {
  Tensor x = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6}).set_requires_grad(true);
  Tensor s = Tensor::from({2, 1}, {10, 100}).set_requires_grad(true);
  Tensor y = mul(x, s);
  REQUIRE(y.values() == std::vector<double>{10, 20, 30, 400, 500, 600});
  backward(sum_all(y));
  REQUIRE(s.grad() == std::vector<double>{6, 15});
  REQUIRE(x.grad() == std::vector<double>{10, 10, 10, 100, 100, 100});
}

TEST_CASE("adamw fixed point and decoupled decay") {
  // zero grad + zero weight decay leaves parameters untouched
  Tensor p = Tensor::from({2}, {1.5, -0.5});
  AdamW opt({&p}, 0.9, 0.999, 1e-8, 0.0);
  p.zero_grad();
  opt.step(0.1);
  REQUIRE(p.values() == std::vector<double>{1.5, -0.5});

  // zero grad + weight decay shrinks by lr*wd*w
  Tensor q = Tensor::from({1}, {2.0});
  AdamW opt2({&q}, 0.9, 0.999, 1e-8, 0.01);
  q.zero_grad();
  opt2.step(0.1);
  REQUIRE(q.at(0) == Catch::Approx(2.0 - 0.1 * 0.01 * 2.0).epsilon(1e-15));
}

TEST_CASE("adamw single step matches the scalar recurrence oracle") {
  Tensor p = Tensor::from({1}, {1.0});
  AdamW opt({&p}, 0.9, 0.999, 1e-8, 0.0);
  p.grad_mutable()[0] = 1.0;
  opt.step(0.1);
  oracle::ScalarAdamW ref;
  const double expected = ref.step(1.0, 1.0, 0.1, 0.9, 0.999, 1e-8, 0.0);
  REQUIRE(p.at(0) == expected);
  REQUIRE(p.at(0) == Catch::Approx(1.0 - 0.1).epsilon(1e-6));  // ~ 1 - lr at step 1

  // several more steps with varying gradients stay in lockstep
  oracle::ScalarAdamW ref2;
  Tensor w = Tensor::from({1}, {0.7});
  AdamW opt2({&w}, 0.9, 0.999, 1e-8, 0.01);
  double wref = 0.7;
  Rng rng(9);
  for (int i = 0; i < 20; ++i) {
    const double g = rng.uniform(-1, 1);
    w.grad_mutable()[0] = g;
    opt2.step(0.05);
    wref = ref2.step(wref, g, 0.05);
    w.zero_grad();
  }
  REQUIRE(w.at(0) == Catch::Approx(wref).epsilon(1e-15));
}

TEST_CASE("adamw rejects non-positive learning rate") {
  Tensor p = Tensor::from({1}, {1.0});
  AdamW opt({&p});
  REQUIRE_THROWS_AS(opt.step(0.0), std::invalid_argument);
}

TEST_CASE("one-cycle schedule endpoints and shape") {
  OneCycleSchedule sched{.max_lr = 0.01, .total_steps = 1000, .warmup_fraction = 0.3};
  REQUIRE(sched.lr(0) == Catch::Approx(0.01 / 25.0));
  REQUIRE(sched.lr(300) == Catch::Approx(0.01));
  REQUIRE(sched.lr(1000) == Catch::Approx(0.01 / 1e4));
  for (std::size_t s = 1; s <= 300; ++s) REQUIRE(sched.lr(s) > sched.lr(s - 1));
  for (std::size_t s = 301; s <= 1000; ++s) REQUIRE(sched.lr(s) < sched.lr(s - 1));
  for (std::size_t s = 0; s <= 1000; s += 50) REQUIRE(sched.lr(s) > 0.0);
  REQUIRE_THROWS_AS(sched.lr(1001), std::invalid_argument);
}
