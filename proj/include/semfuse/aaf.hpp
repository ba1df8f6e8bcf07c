#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

#include "semfuse/matrix.hpp"
#include "semfuse/nn.hpp"
#include "semfuse/tensor.hpp"
#include "semfuse/voxelizer.hpp"

namespace semfuse {

enum class CombineMode { Add, Concat };

struct AafConfig {
  std::size_t c1 = 64;
  std::size_t c2 = 128;
  std::size_t att_hidden = 64;
  CombineMode combine_mode = CombineMode::Add;
};

// Adaptive attention fusion parameters: a per-point local MLP, a per-voxel
// global MLP, and the attention head. The attention head's final layer starts
// at zero so training begins from the unbiased 50/50 fusion.
struct AafParams {
  Mlp mlp_l;    // feature_width -> C1, linear+BN+ReLU
  Mlp mlp_g;    // C1 -> C2, linear+BN+ReLU
  Mlp mlp_att;  // (C1+C2) -> hidden -> 1, hidden BN+ReLU, final linear
  CombineMode combine_mode = CombineMode::Add;
  std::size_t c1 = 0, c2 = 0;

  static AafParams make(std::size_t feature_width, const AafConfig& cfg, Rng& rng) {
    AafParams p;
    p.c1 = cfg.c1;
    p.c2 = cfg.c2;
    p.combine_mode = cfg.combine_mode;
    p.mlp_l = make_mlp({feature_width, cfg.c1}, rng, /*feature_output=*/true);
    p.mlp_g = make_mlp({cfg.c1, cfg.c2}, rng, /*feature_output=*/true);
    p.mlp_att = make_mlp({cfg.c1 + cfg.c2, cfg.att_hidden, 1}, rng, /*feature_output=*/false);
    zero_layer(p.mlp_att.layers.back());
    return p;
  }

  std::vector<Tensor*> parameters() {
    std::vector<Tensor*> ps;
    for (auto* t : mlp_l.parameters()) ps.push_back(t);
    for (auto* t : mlp_g.parameters()) ps.push_back(t);
    for (auto* t : mlp_att.parameters()) ps.push_back(t);
    return ps;
  }

  // "AAF1" checkpoint order: mlp_l, mlp_g, mlp_att layer states in sequence.
  std::vector<StateEntry> state_entries() {
    std::vector<StateEntry> es;
    for (auto& e : mlp_l.state_entries()) es.push_back(e);
    for (auto& e : mlp_g.state_entries()) es.push_back(e);
    for (auto& e : mlp_att.state_entries()) es.push_back(e);
    return es;
  }
};

struct AafOutput {
  Tensor attention;    // [E x 1], strictly inside (0,1)
  Tensor fused_sem;    // [E x d] (Add) or [E x 2d] (Concat)
  Tensor local_feats;  // [E x C1]
  Tensor global_feat;  // [C2]
};

// Per-voxel local feature: MLP_l over each of the M point rows, then max over
// the points axis.
inline Tensor local_features(const VoxelGrid& grid, AafParams& params, bool training) {
  const std::size_t E = grid.num_voxels();
  if (E == 0) throw std::invalid_argument("local_features: empty voxel grid");
  const std::size_t M = grid.points_per_voxel;
  const std::size_t fw = grid.feature_width();
  if (fw != params.mlp_l.in_dim()) {
    throw std::invalid_argument("local_features: grid feature width " + std::to_string(fw) +
                                " != mlp_l input " + std::to_string(params.mlp_l.in_dim()));
  }
  Tensor x = Tensor::from({E * M, fw}, grid.features);
  Tensor h = params.mlp_l.forward(x, training);         // [E*M, C1]
  Tensor h3 = reshape(h, {E, M, params.c1});
  return max_over_axis(h3, 1);                          // [E, C1]
}

// Scene-level feature: MLP_g per voxel, then max over voxels.
inline Tensor global_feature(const Tensor& local, AafParams& params, bool training) {
  if (local.rank() != 2 || local.dim(0) == 0) {
    throw std::invalid_argument("global_feature: undefined on empty voxel set");
  }
  Tensor h = params.mlp_g.forward(local, training);     // [E, C2]
  return max_over_axis(h, 0);                           // [C2]
}

// s_i = sigmoid(MLP_att([local_i || global])), one score per voxel.
inline Tensor attention_scores(const Tensor& local, const Tensor& global, AafParams& params,
                               bool training) {
  const std::size_t E = local.dim(0);
  Tensor joint = concat(local, expand_rows(global, E), 1);  // [E, C1+C2]
  Tensor logits = params.mlp_att.forward(joint, training);  // [E, 1]
  return sigmoid(logits);
}

// Eq-style weighted fusion of per-voxel semantic vectors:
//   weighted_2d = s * v2d, weighted_3d = (1 - s) * v3d,
// combined by concatenation or element-wise addition.
inline Tensor fuse_semantics(const Matrix& v2d, const Matrix& v3d, const Tensor& scores,
                             CombineMode mode) {
  if (v2d.rows != v3d.rows || v2d.cols != v3d.cols) {
    throw std::invalid_argument("fuse_semantics: 2D/3D summary shapes differ");
  }
  const std::size_t E = v2d.rows;
  if (scores.rank() != 2 || scores.dim(0) != E || scores.dim(1) != 1) {
    throw std::invalid_argument("fuse_semantics: scores must be [E x 1]");
  }
  Tensor t2 = Tensor::from({E, v2d.cols}, v2d.data);
  Tensor t3 = Tensor::from({E, v3d.cols}, v3d.data);
  Tensor weighted_2d = mul(t2, scores);
  Tensor weighted_3d = mul(t3, sub(Tensor::full({E, 1}, 1.0), scores));
  return mode == CombineMode::Add ? add(weighted_2d, weighted_3d)
                                  : concat(weighted_2d, weighted_3d, 1);
}

// Per-voxel semantic summaries straight from the grid's own semantic blocks
// (mean over the valid rows).
struct VoxelSemantics {
  Matrix v2d, v3d;  // E x width each
};

inline VoxelSemantics voxel_semantic_summaries(const VoxelGrid& grid) {
  const std::size_t E = grid.num_voxels();
  const std::size_t M = grid.points_per_voxel;
  const std::size_t fw = grid.feature_width();
  VoxelSemantics out;
  out.v2d = Matrix(E, grid.sem2d_width, 0.0);
  out.v3d = Matrix(E, grid.sem3d_width, 0.0);
  for (std::size_t e = 0; e < E; ++e) {
    const std::size_t valid = grid.valid_counts[e];
    for (std::size_t j = 0; j < valid; ++j) {
      const double* row = grid.features.data() + (e * M + j) * fw;
      for (std::size_t c = 0; c < grid.sem2d_width; ++c) out.v2d.at(e, c) += row[3 + c];
      for (std::size_t c = 0; c < grid.sem3d_width; ++c)
        out.v3d.at(e, c) += row[3 + grid.sem2d_width + c];
    }
    for (std::size_t c = 0; c < grid.sem2d_width; ++c) out.v2d.at(e, c) /= static_cast<double>(valid);
    for (std::size_t c = 0; c < grid.sem3d_width; ++c) out.v3d.at(e, c) /= static_cast<double>(valid);
  }
  return out;
}

// Full module on the tape; gradients flow into all three MLPs. The semantic
// summaries default to the grid's own blocks but can be supplied explicitly
// (the ID representation stores scalar ids in the grid while fusion still
// needs vectors).
inline AafOutput aaf_forward(const VoxelGrid& grid, const Matrix& v2d, const Matrix& v3d,
                             AafParams& params, bool training) {
  AafOutput out;
  out.local_feats = local_features(grid, params, training);
  out.global_feat = global_feature(out.local_feats, params, training);
  out.attention = attention_scores(out.local_feats, out.global_feat, params, training);
  out.fused_sem = fuse_semantics(v2d, v3d, out.attention, params.combine_mode);
  return out;
}

inline AafOutput aaf_forward(const VoxelGrid& grid, AafParams& params, bool training) {
  const VoxelSemantics sem = voxel_semantic_summaries(grid);
  return aaf_forward(grid, sem.v2d, sem.v3d, params, training);
}

}  // namespace semfuse
