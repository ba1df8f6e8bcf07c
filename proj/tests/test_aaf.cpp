#include <catch2/catch_amalgamated.hpp>

#include "semfuse/aaf.hpp"
#include "semfuse/gradcheck.hpp"

using namespace semfuse;

namespace {

PaintedPointCloud grid_cloud(std::size_t n, std::size_t m, Rng& rng) {
  PaintedPointCloud pcc;
  pcc.sem2d = Matrix(n, m, 0.0);
  pcc.sem3d = Matrix(n, m, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    pcc.cloud.points.push_back({rng.uniform(0, 8), rng.uniform(0, 8), rng.uniform(0, 4)});
    pcc.sem2d.at(i, rng.uniform_int(m)) = 1.0;
    pcc.sem3d.at(i, rng.uniform_int(m)) = 1.0;
  }
  return pcc;
}

VoxelGrid small_grid(std::size_t n, std::size_t m, std::uint64_t seed, std::size_t M = 4) {
  Rng rng(seed);
  VoxelConfig cfg;
  cfg.range_min = {0, 0, 0};
  cfg.range_max = {8, 8, 4};
  cfg.voxel_size = {2, 2, 4};
  cfg.points_per_voxel = M;
  cfg.seed = seed;
  return voxelize(grid_cloud(n, m, rng), cfg);
}

AafConfig tiny_cfg() {
  AafConfig cfg;
  cfg.c1 = 6;
  cfg.c2 = 5;
  cfg.att_hidden = 4;
  return cfg;
}

}  // namespace

TEST_CASE("local_features: fully padded voxel equals the single-row output") {
  Rng rng(21);
  PaintedPointCloud pcc;
  pcc.cloud.points = {{1.0, 1.0, 1.0}};
  pcc.sem2d = Matrix(1, 2, 0.0);
  pcc.sem3d = Matrix(1, 2, 0.0);
  pcc.sem2d.at(0, 1) = 1.0;
  pcc.sem3d.at(0, 0) = 1.0;
  VoxelConfig vc;
  vc.range_min = {0, 0, 0};
  vc.range_max = {4, 4, 4};
  vc.voxel_size = {2, 2, 4};
  vc.points_per_voxel = 4;

  AafParams one = AafParams::make(7, tiny_cfg(), rng);
  auto grid1 = voxelize(pcc, vc);
  REQUIRE(grid1.valid_counts[0] == 1);
  // eval mode: batchnorm must not depend on the duplicated batch
  Tensor padded = local_features(grid1, one, false);

  vc.points_per_voxel = 1;
  auto grid2 = voxelize(pcc, vc);
  Tensor single = local_features(grid2, one, false);
  REQUIRE(max_abs_diff(padded, single) == 0.0);
}

TEST_CASE("local_features is invariant to point order inside a voxel") {
  Rng rng(22);
  auto grid = small_grid(40, 3, 7);
  AafParams params = AafParams::make(grid.feature_width(), tiny_cfg(), rng);
  Tensor base = local_features(grid, params, false);

  // reverse every voxel's rows in place
  VoxelGrid permuted = grid;
  const std::size_t fw = grid.feature_width();
  const std::size_t M = grid.points_per_voxel;
  for (std::size_t e = 0; e < grid.num_voxels(); ++e)
    for (std::size_t j = 0; j < M; ++j)
      for (std::size_t c = 0; c < fw; ++c)
        permuted.features[(e * M + j) * fw + c] = grid.features[(e * M + (M - 1 - j)) * fw + c];
  Tensor flipped = local_features(permuted, params, false);
  REQUIRE(max_abs_diff(base, flipped) == 0.0);
}

TEST_CASE("local_features two-point voxel matches a scalar hand computation") {
  Rng rng(23);
  PaintedPointCloud pcc;
  pcc.cloud.points = {{0.5, 0.5, 1.0}, {1.5, 0.5, 1.0}};
  pcc.sem2d = Matrix(2, 2, 0.0);
  pcc.sem3d = Matrix(2, 2, 0.0);
  pcc.sem2d.at(0, 0) = 1.0;
  pcc.sem2d.at(1, 1) = 1.0;
  pcc.sem3d.at(0, 1) = 1.0;
  pcc.sem3d.at(1, 0) = 1.0;
  VoxelConfig vc;
  vc.range_min = {0, 0, 0};
  vc.range_max = {4, 4, 4};
  vc.voxel_size = {4, 4, 4};
  vc.points_per_voxel = 2;
  auto grid = voxelize(pcc, vc);
  REQUIRE(grid.num_voxels() == 1);

  AafConfig cfg = tiny_cfg();
  cfg.c1 = 2;
  AafParams params = AafParams::make(7, cfg, rng);
  Tensor out = local_features(grid, params, false);

  // scalar re-computation: linear + eval-mode BN + relu per row, then max
  const auto& layer = params.mlp_l.layers[0];
  double expect[2];
  for (std::size_t c = 0; c < 2; ++c) {
    double vals[2];
    for (std::size_t r = 0; r < 2; ++r) {
      const double* row = grid.voxel_features(0) + r * grid.feature_width();
      double acc = layer.bias.at(c);
      for (std::size_t k = 0; k < 7; ++k) acc += row[k] * layer.weight.at(k * 2 + c);
      const double norm = (acc - layer.bn.running_mean[c]) /
                          std::sqrt(layer.bn.running_var[c] + layer.bn.eps);
      const double scaled = layer.bn.gamma.at(c) * norm + layer.bn.beta.at(c);
      vals[r] = scaled > 0 ? scaled : 0.0;
    }
    expect[c] = std::max(vals[0], vals[1]);
  }
  REQUIRE(out.at(0) == Catch::Approx(expect[0]).margin(1e-15));
  REQUIRE(out.at(1) == Catch::Approx(expect[1]).margin(1e-15));
}

TEST_CASE("global_feature: single voxel is just MLP_g of it") {
  Rng rng(24);
  AafConfig cfg = tiny_cfg();
  AafParams params = AafParams::make(7, cfg, rng);
  Tensor local = Tensor::uniform({1, cfg.c1}, rng, -1, 1);
  Tensor direct = params.mlp_g.forward(local, false);
  Tensor global = global_feature(local, params, false);
  REQUIRE(global.shape() == Shape{cfg.c2});
  for (std::size_t c = 0; c < cfg.c2; ++c) REQUIRE(global.at(c) == direct.at(c));
}

TEST_CASE("global_feature: duplicating a voxel changes nothing") {
  Rng rng(25);
  AafConfig cfg = tiny_cfg();
  AafParams params = AafParams::make(7, cfg, rng);
  Tensor local = Tensor::uniform({3, cfg.c1}, rng, -1, 1);
  std::vector<double> dup = local.values();
  dup.insert(dup.end(), local.values().begin(), local.values().begin() + cfg.c1);
  Tensor local_dup = Tensor::from({4, cfg.c1}, dup);
  REQUIRE(max_abs_diff(global_feature(local, params, false),
                       global_feature(local_dup, params, false)) == 0.0);
}

TEST_CASE("global_feature rejects an empty voxel set") {
  Rng rng(26);
  AafParams params = AafParams::make(7, tiny_cfg(), rng);
  Tensor empty = Tensor::zeros({0, 6});
  REQUIRE_THROWS_AS(global_feature(empty, params, false), std::invalid_argument);
}

TEST_CASE("global_feature matches a scalar oracle on E=3") {
  Rng rng(27);
  AafConfig cfg = tiny_cfg();
  AafParams params = AafParams::make(7, cfg, rng);
  Tensor local = Tensor::uniform({3, cfg.c1}, rng, -1, 1);
  Tensor global = global_feature(local, params, false);
  const auto& layer = params.mlp_g.layers[0];
  for (std::size_t c = 0; c < cfg.c2; ++c) {
    double best = -1e300;
    for (std::size_t e = 0; e < 3; ++e) {
      double acc = layer.bias.at(c);
      for (std::size_t k = 0; k < cfg.c1; ++k)
        acc += local.at(e * cfg.c1 + k) * layer.weight.at(k * cfg.c2 + c);
      const double norm =
          (acc - layer.bn.running_mean[c]) / std::sqrt(layer.bn.running_var[c] + layer.bn.eps);
      const double scaled = layer.bn.gamma.at(c) * norm + layer.bn.beta.at(c);
      best = std::max(best, scaled > 0 ? scaled : 0.0);
    }
    REQUIRE(global.at(c) == Catch::Approx(best).margin(1e-15));
  }
}

TEST_CASE("attention_scores: zero-initialized head gives exactly 0.5") {
  Rng rng(28);
  AafConfig cfg = tiny_cfg();
  AafParams params = AafParams::make(7, cfg, rng);  // final layer zeroed by make
  Tensor local = Tensor::uniform({5, cfg.c1}, rng, -1, 1);
  Tensor global = Tensor::uniform({cfg.c2}, rng, -1, 1);
  Tensor s = attention_scores(local, global, params, false);
  REQUIRE(s.shape() == Shape{5, 1});
  for (double v : s.values()) REQUIRE(v == 0.5);
}

TEST_CASE("attention_scores is monotone in the final-layer bias") {
  Rng rng(29);
  AafConfig cfg = tiny_cfg();
  AafParams params = AafParams::make(7, cfg, rng);
  Tensor local = Tensor::uniform({4, cfg.c1}, rng, -1, 1);
  Tensor global = Tensor::uniform({cfg.c2}, rng, -1, 1);
  double prev = -1.0;
  for (double b : {-6.0, -2.0, 0.0, 2.0, 6.0, 30.0}) {
    params.mlp_att.layers.back().bias.data()[0] = b;
    Tensor s = attention_scores(local, global, params, false);
    REQUIRE(s.at(0) > prev);
    prev = s.at(0);
    REQUIRE(s.at(0) > 0.0);
    REQUIRE(s.at(0) < 1.0);
  }
}

TEST_CASE("attention_scores matches a hand-built scalar case") {
  Rng rng(30);
  AafConfig cfg;
  cfg.c1 = 2;
  cfg.c2 = 1;
  cfg.att_hidden = 2;
  AafParams params = AafParams::make(7, cfg, rng);
  // overwrite the attention MLP with tiny known weights, no BN interference in eval
  auto& hidden = params.mlp_att.layers[0];
  hidden.weight = Tensor::from({3, 2}, {0.5, -0.25, 1.0, 0.0, -1.0, 0.75}).set_requires_grad(true);
  hidden.bias = Tensor::from({2}, {0.1, -0.2}).set_requires_grad(true);
  auto& out_layer = params.mlp_att.layers[1];
  out_layer.weight = Tensor::from({2, 1}, {1.5, -2.0}).set_requires_grad(true);
  out_layer.bias = Tensor::from({1}, {0.3}).set_requires_grad(true);

  Tensor local = Tensor::from({1, 2}, {0.4, -0.6});
  Tensor global = Tensor::from({1}, {0.9});
  Tensor s = attention_scores(local, global, params, false);

  const double joint[3] = {0.4, -0.6, 0.9};
  double h[2];
  for (int c = 0; c < 2; ++c) {
    double acc = hidden.bias.at(c);
    for (int k = 0; k < 3; ++k) acc += joint[k] * hidden.weight.at(k * 2 + c);
    const double norm =
        (acc - hidden.bn.running_mean[c]) / std::sqrt(hidden.bn.running_var[c] + hidden.bn.eps);
    const double scaled = hidden.bn.gamma.at(c) * norm + hidden.bn.beta.at(c);
    h[c] = scaled > 0 ? scaled : 0;
  }
  const double logit = 0.3 + h[0] * 1.5 + h[1] * -2.0;
  REQUIRE(s.at(0) == Catch::Approx(1.0 / (1.0 + std::exp(-logit))).margin(1e-15));
}

TEST_CASE("fuse_semantics reproduces the worked weighting example") {
  Matrix v2d(1, 4, 0.0), v3d(1, 4, 0.0);
  v2d.at(0, 2) = 1.0;
  v3d.at(0, 3) = 1.0;
  Tensor s = Tensor::from({1, 1}, {0.2});
  Tensor fused = fuse_semantics(v2d, v3d, s, CombineMode::Add);
  REQUIRE(fused.values() == std::vector<double>{0, 0, 0.2, 0.8});

  Tensor cat = fuse_semantics(v2d, v3d, s, CombineMode::Concat);
  REQUIRE(cat.shape() == Shape{1, 8});
  REQUIRE(cat.values() == std::vector<double>{0, 0, 0.2, 0, 0, 0, 0, 0.8});
}

TEST_CASE("fuse_semantics convexity fixed point and agreement preservation") {
  Matrix v(1, 3, 0.0);
  v.at(0, 1) = 0.6;
  v.at(0, 2) = 0.4;
  Tensor s = Tensor::from({1, 1}, {0.5});
  Tensor fused = fuse_semantics(v, v, s, CombineMode::Add);
  for (std::size_t c = 0; c < 3; ++c) REQUIRE(fused.at(c) == Catch::Approx(v.at(0, c)));

  // both one-hot class k -> fused argmax is k for any s
  Matrix hot(1, 3, 0.0);
  hot.at(0, 2) = 1.0;
  for (double sv : {0.05, 0.3, 0.77, 0.99}) {
    Tensor fa = fuse_semantics(hot, hot, Tensor::from({1, 1}, {sv}), CombineMode::Add);
    REQUIRE(fa.at(2) >= fa.at(0));
    REQUIRE(fa.at(2) >= fa.at(1));
    REQUIRE(fa.at(2) == Catch::Approx(1.0));
  }
}

TEST_CASE("attention weights s and (1-s) sum to exactly 1") {
  Rng rng(31);
  for (int i = 0; i < 1000; ++i) {
    const double s = rng.uniform();
    REQUIRE(s + (1.0 - s) == 1.0);
  }
  // and through the tensor path
  Tensor s = Tensor::uniform({50, 1}, rng, 0, 1);
  Tensor w3 = sub(Tensor::full({50, 1}, 1.0), s);
  for (std::size_t i = 0; i < 50; ++i) REQUIRE(s.at(i) + w3.at(i) == 1.0);
}

TEST_CASE("aaf_forward with zero-initialized attention is the 50/50 blend") {
  Rng rng(32);
  auto grid = small_grid(60, 3, 17);
  AafParams params = AafParams::make(grid.feature_width(), tiny_cfg(), rng);
  auto out = aaf_forward(grid, params, false);
  auto sem = voxel_semantic_summaries(grid);
  REQUIRE(out.fused_sem.shape() == Shape{grid.num_voxels(), 3});
  for (std::size_t e = 0; e < grid.num_voxels(); ++e) {
    REQUIRE(out.attention.at(e) == 0.5);
    for (std::size_t c = 0; c < 3; ++c) {
      REQUIRE(out.fused_sem.at(e * 3 + c) ==
              Catch::Approx(0.5 * sem.v2d.at(e, c) + 0.5 * sem.v3d.at(e, c)).margin(1e-15));
    }
  }
}

TEST_CASE("aaf fused rows stay probability vectors in Add mode") {
  Rng rng(33);
  auto grid = small_grid(80, 4, 18);
  AafConfig cfg = tiny_cfg();
  AafParams params = AafParams::make(grid.feature_width(), cfg, rng);
  // non-trivial attention head
  Rng wrng(5);
  params.mlp_att.layers.back().weight =
      Tensor::uniform({cfg.att_hidden, 1}, wrng, -1, 1).set_requires_grad(true);
  auto out = aaf_forward(grid, params, true);
  for (std::size_t e = 0; e < grid.num_voxels(); ++e) {
    double sum = 0;
    for (std::size_t c = 0; c < 4; ++c) {
      const double v = out.fused_sem.at(e * 4 + c);
      REQUIRE(v >= 0.0);
      sum += v;
    }
    REQUIRE(std::abs(sum - 1.0) <= 1e-9);
  }
}

TEST_CASE("aaf_forward is equivariant to voxel order") {
  Rng rng(34);
  auto grid = small_grid(50, 3, 19);
  AafConfig cfg = tiny_cfg();
  AafParams params = AafParams::make(grid.feature_width(), cfg, rng);
  Rng wrng(6);
  params.mlp_att.layers.back().weight =
      Tensor::uniform({cfg.att_hidden, 1}, wrng, -1, 1).set_requires_grad(true);

  auto out1 = aaf_forward(grid, params, false);

  // reverse voxel order
  VoxelGrid rev = grid;
  const std::size_t E = grid.num_voxels();
  const std::size_t stride = grid.points_per_voxel * grid.feature_width();
  for (std::size_t e = 0; e < E; ++e) {
    std::copy(grid.features.begin() + (E - 1 - e) * stride,
              grid.features.begin() + (E - e) * stride, rev.features.begin() + e * stride);
    rev.coords[e] = grid.coords[E - 1 - e];
    rev.valid_counts[e] = grid.valid_counts[E - 1 - e];
    std::copy(grid.row_point_ids.begin() + (E - 1 - e) * grid.points_per_voxel,
              grid.row_point_ids.begin() + (E - e) * grid.points_per_voxel,
              rev.row_point_ids.begin() + e * grid.points_per_voxel);
  }
  auto out2 = aaf_forward(rev, params, false);
  for (std::size_t e = 0; e < E; ++e) {
    REQUIRE(out1.attention.at(e) == out2.attention.at(E - 1 - e));
    for (std::size_t c = 0; c < 3; ++c)
      REQUIRE(out1.fused_sem.at(e * 3 + c) == out2.fused_sem.at((E - 1 - e) * 3 + c));
  }
}

TEST_CASE("full AAF gradient check stays under 1e-4") {
  Rng rng(35);
  auto grid = small_grid(30, 3, 20, /*M=*/3);
  AafConfig cfg = tiny_cfg();
  AafParams params = AafParams::make(grid.feature_width(), cfg, rng);
  // give the attention head real weights so gradients flow everywhere
  Rng wrng(7);
  params.mlp_att.layers.back().weight =
      Tensor::uniform({cfg.att_hidden, 1}, wrng, -0.5, 0.5).set_requires_grad(true);
  params.mlp_att.layers.back().bias =
      Tensor::uniform({1}, wrng, -0.1, 0.1).set_requires_grad(true);

  Tensor probe = Tensor::uniform({static_cast<std::size_t>(grid.num_voxels()), 3}, wrng, -1, 1);
  auto loss_fn = [&]() {
    auto out = aaf_forward(grid, params, true);
    Tensor weighted = mul(out.fused_sem, probe);
    return sum_all(weighted);
  };
  REQUIRE(check_gradients_params(loss_fn, params.parameters()) < 1e-4);
}
