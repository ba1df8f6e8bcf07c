#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "semfuse/matrix.hpp"
#include "semfuse/rng.hpp"
#include "semfuse/semantics.hpp"

namespace semfuse {

struct VoxelConfig {
  Vec3 range_min{0.0, -16.0, -3.0};
  Vec3 range_max{40.0, 16.0, 1.0};
  Vec3 voxel_size{0.5, 0.5, 4.0};
  std::size_t points_per_voxel = 32;  // M
  std::uint64_t seed = 0;

  std::array<std::size_t, 3> grid_dims() const {
    return {dim_count(range_min.x, range_max.x, voxel_size.x),
            dim_count(range_min.y, range_max.y, voxel_size.y),
            dim_count(range_min.z, range_max.z, voxel_size.z)};
  }

  void validate() const {
    if (points_per_voxel == 0) {
      throw std::invalid_argument("voxel config: points_per_voxel must be positive");
    }
    check_axis(range_min.x, range_max.x, voxel_size.x, "x");
    check_axis(range_min.y, range_max.y, voxel_size.y, "y");
    check_axis(range_min.z, range_max.z, voxel_size.z, "z");
  }

 private:
  static std::size_t dim_count(double lo, double hi, double step) {
    return static_cast<std::size_t>(std::llround((hi - lo) / step));
  }
  static void check_axis(double lo, double hi, double step, const char* name) {
    const double extent = hi - lo;
    if (extent <= 0.0 || step <= 0.0) {
      throw std::invalid_argument(std::string("voxel config: non-positive ") + name + " extent");
    }
    const double cells = extent / step;
    if (std::abs(cells - std::llround(cells)) > 1e-9) {
      throw std::invalid_argument(std::string("voxel config: ") + name +
                                  " extent is not an integer multiple of the voxel size");
    }
  }
};

// Regular grid over a painted cloud. Every non-empty voxel carries exactly M
// feature rows laid out [x, y, z, sem2d..., sem3d...]; rows past valid_counts
// are cyclic repeats of the sampled points.
struct VoxelGrid {
  std::size_t points_per_voxel = 0;                 // M
  std::size_t sem2d_width = 0, sem3d_width = 0;
  std::vector<std::array<long long, 3>> coords;     // E x 3, lexicographically sorted
  std::vector<double> features;                     // E * M * feature_width
  std::vector<std::size_t> valid_counts;            // E, in [1, M]
  std::vector<long long> point_to_voxel;            // N, -1 for out-of-range points
  std::vector<std::size_t> row_point_ids;           // E * M, original point index per row

  std::size_t num_voxels() const { return coords.size(); }
  std::size_t feature_width() const { return 3 + sem2d_width + sem3d_width; }
  const double* voxel_features(std::size_t e) const {
    return features.data() + e * points_per_voxel * feature_width();
  }
};

// Partition into voxels with floor((p - range_min) / voxel_size) indexing.
// Over-full voxels are subsampled uniformly without replacement with a stream
// derived from (cfg.seed, voxel key), so the result does not depend on point
// order beyond the candidate multiset. Deterministic for a fixed seed.
inline VoxelGrid voxelize(const PaintedPointCloud& pcc, const VoxelConfig& cfg) {
  cfg.validate();
  const std::size_t n = pcc.size();
  const auto dims = cfg.grid_dims();
  const std::size_t M = cfg.points_per_voxel;

  VoxelGrid grid;
  grid.points_per_voxel = M;
  grid.sem2d_width = pcc.sem2d.cols;
  grid.sem3d_width = pcc.sem3d.cols;
  grid.point_to_voxel.assign(n, -1);

  std::unordered_map<std::uint64_t, std::vector<std::size_t>> buckets;
  std::vector<std::uint64_t> point_key(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3& p = pcc.cloud.points[i];
    const double fx = std::floor((p.x - cfg.range_min.x) / cfg.voxel_size.x);
    const double fy = std::floor((p.y - cfg.range_min.y) / cfg.voxel_size.y);
    const double fz = std::floor((p.z - cfg.range_min.z) / cfg.voxel_size.z);
    if (fx < 0 || fy < 0 || fz < 0 || fx >= static_cast<double>(dims[0]) ||
        fy >= static_cast<double>(dims[1]) || fz >= static_cast<double>(dims[2])) {
      continue;
    }
    const std::uint64_t ix = static_cast<std::uint64_t>(fx);
    const std::uint64_t iy = static_cast<std::uint64_t>(fy);
    const std::uint64_t iz = static_cast<std::uint64_t>(fz);
    const std::uint64_t key = (ix * dims[1] + iy) * dims[2] + iz;
    point_key[i] = key + 1;  // 0 marks out-of-range
    buckets[key].push_back(i);  // ascending original index per bucket
  }

  std::vector<std::uint64_t> keys;
  keys.reserve(buckets.size());
  for (const auto& [key, _] : buckets) keys.push_back(key);
  std::sort(keys.begin(), keys.end());  // == lexicographic (ix, iy, iz)

  const std::size_t E = keys.size();
  const std::size_t fw = grid.feature_width();
  grid.coords.resize(E);
  grid.valid_counts.resize(E);
  grid.features.assign(E * M * fw, 0.0);
  grid.row_point_ids.assign(E * M, 0);

  std::unordered_map<std::uint64_t, std::size_t> key_to_voxel;
  key_to_voxel.reserve(E);
  for (std::size_t e = 0; e < E; ++e) {
    const std::uint64_t key = keys[e];
    key_to_voxel[key] = e;
    const std::uint64_t iz = key % dims[2];
    const std::uint64_t iy = (key / dims[2]) % dims[1];
    const std::uint64_t ix = key / (dims[1] * dims[2]);
    grid.coords[e] = {static_cast<long long>(ix), static_cast<long long>(iy),
                      static_cast<long long>(iz)};

    std::vector<std::size_t>& cand = buckets[key];
    std::vector<std::size_t> chosen;
    if (cand.size() > M) {
      Rng rng(derive_seed(cfg.seed, key));
      std::vector<std::size_t> pool = cand;
      for (std::size_t j = 0; j < M; ++j) {
        const std::size_t r = j + static_cast<std::size_t>(rng.uniform_int(pool.size() - j));
        std::swap(pool[j], pool[r]);
      }
      chosen.assign(pool.begin(), pool.begin() + static_cast<long>(M));
      std::sort(chosen.begin(), chosen.end());
    } else {
      chosen = cand;
    }
    const std::size_t valid = chosen.size();
    grid.valid_counts[e] = valid;
    for (std::size_t j = 0; j < M; ++j) {
      const std::size_t src = chosen[j % valid];  // cyclic padding past valid rows
      grid.row_point_ids[e * M + j] = src;
      double* row = grid.features.data() + (e * M + j) * fw;
      row[0] = pcc.cloud.points[src].x;
      row[1] = pcc.cloud.points[src].y;
      row[2] = pcc.cloud.points[src].z;
      for (std::size_t c = 0; c < grid.sem2d_width; ++c) row[3 + c] = pcc.sem2d.at(src, c);
      for (std::size_t c = 0; c < grid.sem3d_width; ++c)
        row[3 + grid.sem2d_width + c] = pcc.sem3d.at(src, c);
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (point_key[i] != 0) {
      grid.point_to_voxel[i] = static_cast<long long>(key_to_voxel[point_key[i] - 1]);
    }
  }
  return grid;
}

// Broadcasts one vector per voxel back onto points. Dropped points get zeros.
inline Matrix scatter_to_points(const VoxelGrid& grid, const Matrix& per_voxel) {
  if (per_voxel.rows != grid.num_voxels()) {
    throw std::invalid_argument("scatter_to_points: row count " + std::to_string(per_voxel.rows) +
                                " != voxel count " + std::to_string(grid.num_voxels()));
  }
  if (per_voxel.cols < 1) throw std::invalid_argument("scatter_to_points: need at least 1 column");
  Matrix out(grid.point_to_voxel.size(), per_voxel.cols, 0.0);
  for (std::size_t i = 0; i < grid.point_to_voxel.size(); ++i) {
    const long long e = grid.point_to_voxel[i];
    if (e < 0) continue;
    for (std::size_t c = 0; c < per_voxel.cols; ++c)
      out.at(i, c) = per_voxel.at(static_cast<std::size_t>(e), c);
  }
  return out;
}

// Mean of per-point rows over each voxel's sampled valid rows (padding rows
// excluded, they are repeats).
inline Matrix voxel_mean_rows(const VoxelGrid& grid, const Matrix& per_point) {
  const std::size_t E = grid.num_voxels();
  Matrix out(E, per_point.cols, 0.0);
  for (std::size_t e = 0; e < E; ++e) {
    const std::size_t valid = grid.valid_counts[e];
    for (std::size_t j = 0; j < valid; ++j) {
      const std::size_t src = grid.row_point_ids[e * grid.points_per_voxel + j];
      for (std::size_t c = 0; c < per_point.cols; ++c) out.at(e, c) += per_point.at(src, c);
    }
    for (std::size_t c = 0; c < per_point.cols; ++c) out.at(e, c) /= static_cast<double>(valid);
  }
  return out;
}

// Dominant class per voxel over all points mapped to it (not just the sampled
// ones); ties break to the lowest class id.
inline std::vector<std::size_t> voxel_labels_from_points(const VoxelGrid& grid,
                                                         const Matrix& onehot) {
  const std::size_t E = grid.num_voxels();
  Matrix counts(E, onehot.cols, 0.0);
  for (std::size_t i = 0; i < grid.point_to_voxel.size(); ++i) {
    const long long e = grid.point_to_voxel[i];
    if (e < 0) continue;
    for (std::size_t c = 0; c < onehot.cols; ++c)
      counts.at(static_cast<std::size_t>(e), c) += onehot.at(i, c);
  }
  std::vector<std::size_t> labels(E, 0);
  for (std::size_t e = 0; e < E; ++e) labels[e] = counts.argmax_row(e);
  return labels;
}

}  // namespace semfuse
