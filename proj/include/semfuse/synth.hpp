#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "semfuse/geometry.hpp"
#include "semfuse/matrix.hpp"
#include "semfuse/rng.hpp"
#include "semfuse/semantics.hpp"

namespace semfuse {

// Scene generation knobs. The camera sits at the LiDAR origin looking along
// +x (standard axis remap), so most of the sampled area is inside its frustum
// and the rest exercises the out-of-view painting policy.
struct SceneParams {
  std::size_t min_boxes = 2;
  std::size_t max_boxes = 5;
  std::size_t num_classes = 4;  // including background 0
  Vec3 range_min{0.0, -16.0, -3.0};
  Vec3 range_max{40.0, 16.0, 1.0};
  double ground_z = -1.6;
  double ground_density = 0.7;    // points per m^2 of ground
  double surface_density = 14.0;  // points per m^2 of box shell
  double min_box_gap = 0.5;       // clearance between box footprints (meters)
  std::vector<double> class_probs;  // sampling weights for classes 1..m-1; uniform if empty
  std::size_t image_width = 320;
  std::size_t image_height = 240;
  double focal = 260.0;
  std::size_t max_place_attempts = 200;
};

struct Scene {
  PointCloud cloud;
  std::vector<Box3D> boxes;
  Calibration calib;
  SemanticMap2D true_map;  // exact one-hot render of the boxes
  std::uint64_t seed = 0;
};

struct CorruptionConfig {
  int dilate_px = 0;     // 2D boundary blur radius (Chebyshev)
  Matrix confusion;      // m x m row-stochastic class swap matrix
  std::uint64_t seed = 0;

  static CorruptionConfig identity(std::size_t m) {
    CorruptionConfig cfg;
    cfg.confusion = Matrix(m, m, 0.0);
    for (std::size_t c = 0; c < m; ++c) cfg.confusion.at(c, c) = 1.0;
    return cfg;
  }

  // Identity confusion except a symmetric swap probability p between a and b.
  static CorruptionConfig pair_confusion(std::size_t m, std::size_t a, std::size_t b, double p) {
    CorruptionConfig cfg = identity(m);
    cfg.confusion.at(a, a) = 1.0 - p;
    cfg.confusion.at(a, b) = p;
    cfg.confusion.at(b, b) = 1.0 - p;
    cfg.confusion.at(b, a) = p;
    return cfg;
  }

  void validate() const {
    if (dilate_px < 0) throw std::invalid_argument("corruption: dilate_px must be >= 0");
    if (confusion.rows != confusion.cols) {
      throw std::invalid_argument("corruption: confusion matrix must be square");
    }
    for (std::size_t r = 0; r < confusion.rows; ++r) {
      double sum = 0.0;
      for (std::size_t c = 0; c < confusion.cols; ++c) {
        if (confusion.at(r, c) < 0.0) {
          throw std::invalid_argument("corruption: negative confusion entry");
        }
        sum += confusion.at(r, c);
      }
      if (std::abs(sum - 1.0) > 1e-9) {
        throw std::invalid_argument("corruption: confusion row " + std::to_string(r) +
                                    " sums to " + std::to_string(sum) + ", expected 1");
      }
    }
  }
};

namespace detail {

// per-class nominal dimensions (l, w, h) with mild jitter
inline void class_dimensions(int cls, Rng& rng, double& l, double& w, double& h) {
  switch (cls) {
    case 1:  // car-sized
      l = 4.2 + rng.uniform(-0.4, 0.4);
      w = 1.8 + rng.uniform(-0.15, 0.15);
      h = 1.5 + rng.uniform(-0.1, 0.1);
      break;
    case 2:  // pedestrian-sized
      l = 0.8 + rng.uniform(-0.1, 0.1);
      w = 0.8 + rng.uniform(-0.1, 0.1);
      h = 1.75 + rng.uniform(-0.15, 0.15);
      break;
    case 3:  // cyclist-sized
      l = 1.8 + rng.uniform(-0.2, 0.2);
      w = 0.7 + rng.uniform(-0.1, 0.1);
      h = 1.7 + rng.uniform(-0.1, 0.1);
      break;
    default:  // generic obstacle
      l = 2.0 + rng.uniform(-0.5, 0.5);
      w = 1.2 + rng.uniform(-0.3, 0.3);
      h = 1.5 + rng.uniform(-0.3, 0.3);
      break;
  }
}

inline bool footprint_contains(const Box3D& box, double x, double y, double margin = 0.0) {
  const double c = std::cos(box.yaw), s = std::sin(box.yaw);
  const double dx = x - box.center.x, dy = y - box.center.y;
  const double lx = c * dx + s * dy;
  const double ly = -s * dx + c * dy;
  return std::abs(lx) <= box.length * 0.5 + margin && std::abs(ly) <= box.width * 0.5 + margin;
}

// ray/oriented-box intersection via the slab test in box coordinates
inline bool ray_hits_box(const Vec3& origin, const Vec3& dir, const Box3D& box, double& t_near) {
  const double c = std::cos(box.yaw), s = std::sin(box.yaw);
  const double ox = origin.x - box.center.x, oy = origin.y - box.center.y,
               oz = origin.z - box.center.z;
  const double lo[3] = {c * ox + s * oy, -s * ox + c * oy, oz};
  const double ld[3] = {c * dir.x + s * dir.y, -s * dir.x + c * dir.y, dir.z};
  const double half[3] = {box.length * 0.5, box.width * 0.5, box.height * 0.5};
  double tmin = 0.0, tmax = 1e300;
  for (int a = 0; a < 3; ++a) {
    if (std::abs(ld[a]) < 1e-12) {
      if (std::abs(lo[a]) > half[a]) return false;
      continue;
    }
    double t0 = (-half[a] - lo[a]) / ld[a];
    double t1 = (half[a] - lo[a]) / ld[a];
    if (t0 > t1) std::swap(t0, t1);
    tmin = std::max(tmin, t0);
    tmax = std::min(tmax, t1);
    if (tmin > tmax) return false;
  }
  t_near = tmin;
  return true;
}

}  // namespace detail

// Renders the exact one-hot class map of the boxes by casting one ray per
// pixel center and taking the nearest hit.
inline SemanticMap2D render_true_map(const std::vector<Box3D>& boxes, const Calibration& calib,
                                     std::size_t width, std::size_t height,
                                     std::size_t num_classes) {
  SemanticMap2D map = SemanticMap2D::make(width, height, num_classes);
  const double* M = calib.M.m;
  const double fx = calib.K.m[0], fy = calib.K.m[4];
  const double cx = calib.K.m[2], cy = calib.K.m[5];
  // camera origin and axes in the LiDAR frame (M maps lidar -> camera)
  const double R[3][3] = {{M[0], M[1], M[2]}, {M[4], M[5], M[6]}, {M[8], M[9], M[10]}};
  const double t[3] = {M[3], M[7], M[11]};
  Vec3 origin{-(R[0][0] * t[0] + R[1][0] * t[1] + R[2][0] * t[2]),
              -(R[0][1] * t[0] + R[1][1] * t[1] + R[2][1] * t[2]),
              -(R[0][2] * t[0] + R[1][2] * t[1] + R[2][2] * t[2])};
  for (std::size_t py = 0; py < height; ++py) {
    for (std::size_t px = 0; px < width; ++px) {
      const double dc[3] = {(static_cast<double>(px) - cx) / fx,
                            (static_cast<double>(py) - cy) / fy, 1.0};
      Vec3 dir{R[0][0] * dc[0] + R[1][0] * dc[1] + R[2][0] * dc[2],
               R[0][1] * dc[0] + R[1][1] * dc[1] + R[2][1] * dc[2],
               R[0][2] * dc[0] + R[1][2] * dc[1] + R[2][2] * dc[2]};
      int cls = 0;
      double best_t = 1e300;
      for (const auto& box : boxes) {
        double tn = 0.0;
        if (detail::ray_hits_box(origin, dir, box, tn) && tn < best_t) {
          best_t = tn;
          cls = box.class_id;
        }
      }
      map.at(py, px, static_cast<std::size_t>(cls)) = 1.0;
    }
  }
  return map;
}

// Synthetic frame: non-overlapping boxes on a ground plane, points sampled on
// the ground and on box shells, a camera at the origin, and the exact 2D
// render. Deterministic per seed.
inline Scene generate_scene(const SceneParams& params, std::uint64_t seed) {
  if (params.ground_density <= 0.0 || params.surface_density <= 0.0) {
    throw std::invalid_argument("generate_scene: densities must be positive");
  }
  if (params.num_classes < 2) {
    throw std::invalid_argument("generate_scene: need at least two classes");
  }
  Rng rng(derive_seed(seed, 0xa11ce));
  Scene scene;
  scene.seed = seed;

  // camera: standard axis remap (x_cam = -y, y_cam = -z, z_cam = x), origin
  scene.calib.K = Mat3::identity();
  scene.calib.K.m[0] = params.focal;
  scene.calib.K.m[4] = params.focal;
  scene.calib.K.m[2] = static_cast<double>(params.image_width) / 2.0;
  scene.calib.K.m[5] = static_cast<double>(params.image_height) / 2.0;
  Mat34 M;
  M.m[0] = 0;  M.m[1] = -1; M.m[2] = 0;  M.m[3] = 0;
  M.m[4] = 0;  M.m[5] = 0;  M.m[6] = -1; M.m[7] = 0;
  M.m[8] = 1;  M.m[9] = 0;  M.m[10] = 0; M.m[11] = 0;
  scene.calib.M = M;
  scene.calib.validate();

  // boxes: sampled inside the camera frustum, rejection for overlap
  const std::size_t n_boxes =
      params.min_boxes + rng.uniform_int(params.max_boxes - params.min_boxes + 1);
  const double tan_half =
      (static_cast<double>(params.image_width) / 2.0) / params.focal;
  for (std::size_t b = 0; b < n_boxes; ++b) {
    bool placed = false;
    for (std::size_t attempt = 0; attempt < params.max_place_attempts && !placed; ++attempt) {
      Box3D box;
      if (params.class_probs.empty()) {
        box.class_id = 1 + static_cast<int>(rng.uniform_int(params.num_classes - 1));
      } else {
        if (params.class_probs.size() != params.num_classes - 1) {
          throw std::invalid_argument("generate_scene: class_probs must have m-1 entries");
        }
        double total = 0.0;
        for (double w : params.class_probs) total += w;
        double draw = rng.uniform(0.0, total);
        box.class_id = static_cast<int>(params.num_classes) - 1;
        double cum = 0.0;
        for (std::size_t c = 0; c + 1 < params.num_classes; ++c) {
          cum += params.class_probs[c];
          if (draw < cum) {
            box.class_id = static_cast<int>(c) + 1;
            break;
          }
        }
      }
      detail::class_dimensions(box.class_id, rng, box.length, box.width, box.height);
      const double reach = std::hypot(box.length, box.width) / 2.0;
      const double x_lo = std::max(params.range_min.x + reach, 6.0);
      const double x_hi = params.range_max.x - reach - 2.0;
      box.center.x = rng.uniform(x_lo, x_hi);
      const double y_lim = std::min(params.range_max.y - reach,
                                    0.85 * box.center.x * tan_half);
      box.center.y = rng.uniform(-y_lim, y_lim);
      box.center.z = params.ground_z + box.height / 2.0;
      box.yaw = rng.uniform(0.0, 6.283185307179586);
      bool overlaps = false;
      for (const auto& other : scene.boxes) {
        const double other_reach = std::hypot(other.length, other.width) / 2.0;
        const double dx = box.center.x - other.center.x;
        const double dy = box.center.y - other.center.y;
        if (std::hypot(dx, dy) < reach + other_reach + params.min_box_gap) {
          overlaps = true;
          break;
        }
      }
      if (!overlaps) {
        scene.boxes.push_back(box);
        placed = true;
      }
    }
    if (!placed) {
      throw std::runtime_error("generate_scene: could not place " + std::to_string(n_boxes) +
                               " non-overlapping boxes after " +
                               std::to_string(params.max_place_attempts) + " attempts");
    }
  }

  // ground points, skipping box footprints (those returns come from the shell)
  const double area = (params.range_max.x - params.range_min.x) *
                      (params.range_max.y - params.range_min.y);
  const std::size_t n_ground = static_cast<std::size_t>(area * params.ground_density);
  for (std::size_t i = 0; i < n_ground; ++i) {
    const double x = rng.uniform(params.range_min.x, params.range_max.x);
    const double y = rng.uniform(params.range_min.y, params.range_max.y);
    bool under_box = false;
    for (const auto& box : scene.boxes) {
      if (detail::footprint_contains(box, x, y)) {
        under_box = true;
        break;
      }
    }
    if (under_box) continue;
    scene.cloud.points.push_back({x, y, params.ground_z + rng.uniform(-0.02, 0.02)});
  }

  // box shell points: top + 4 sides, area-weighted, nudged inward so
  // containment is robust to rotation round-off
  for (const auto& box : scene.boxes) {
    const double hl = box.length / 2.0, hw = box.width / 2.0, hh = box.height / 2.0;
    const double a_top = box.length * box.width;
    const double a_front = box.width * box.height;   // two of these
    const double a_side = box.length * box.height;   // two of these
    const double total = a_top + 2.0 * a_front + 2.0 * a_side;
    const std::size_t n_pts = static_cast<std::size_t>(total * params.surface_density);
    const double eps = 1e-6;
    for (std::size_t i = 0; i < n_pts; ++i) {
      double pick = rng.uniform(0.0, total);
      double lx, ly, lz;
      if (pick < a_top) {
        lx = rng.uniform(-hl, hl);
        ly = rng.uniform(-hw, hw);
        lz = hh - eps;
      } else if (pick < a_top + 2.0 * a_front) {
        lx = (pick < a_top + a_front ? hl - eps : -hl + eps);
        ly = rng.uniform(-hw, hw);
        lz = rng.uniform(-hh, hh);
      } else {
        lx = rng.uniform(-hl, hl);
        ly = (pick < a_top + 2.0 * a_front + a_side ? hw - eps : -hw + eps);
        lz = rng.uniform(-hh, hh);
      }
      const double c = std::cos(box.yaw), s = std::sin(box.yaw);
      scene.cloud.points.push_back({box.center.x + c * lx - s * ly,
                                    box.center.y + s * lx + c * ly, box.center.z + lz});
    }
  }
  scene.cloud.intensity.assign(scene.cloud.size(), 0.0);

  scene.true_map = render_true_map(scene.boxes, scene.calib, params.image_width,
                                   params.image_height, params.num_classes);
  return scene;
}

// Morphological dilation of every foreground class mask by a Chebyshev radius,
// overwriting background pixels only (ascending class order claims ties).
// Models the boundary blur of image segmentation; geometry is untouched.
inline SemanticMap2D corrupt_2d(const SemanticMap2D& map, const CorruptionConfig& cfg) {
  cfg.validate();
  if (cfg.dilate_px == 0) return map;
  const std::size_t w = map.width, h = map.height, m = map.classes;
  std::vector<std::size_t> argmax(w * h);
  for (std::size_t i = 0; i < w * h; ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < m; ++c)
      if (map.scores[i * m + c] > map.scores[i * m + best]) best = c;
    argmax[i] = best;
  }
  SemanticMap2D out = map;
  std::vector<char> claimed(w * h, 0);
  const int d = cfg.dilate_px;
  for (std::size_t cls = 1; cls < m; ++cls) {
    // separable Chebyshev dilation of the class mask
    std::vector<char> mask(w * h, 0), tmp(w * h, 0);
    for (std::size_t i = 0; i < w * h; ++i) mask[i] = argmax[i] == cls;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        char hit = 0;
        for (int dx = -d; dx <= d && !hit; ++dx) {
          const long long xx = static_cast<long long>(x) + dx;
          if (xx >= 0 && xx < static_cast<long long>(w)) hit = mask[y * w + xx];
        }
        tmp[y * w + x] = hit;
      }
    std::vector<char> dilated(w * h, 0);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        char hit = 0;
        for (int dy = -d; dy <= d && !hit; ++dy) {
          const long long yy = static_cast<long long>(y) + dy;
          if (yy >= 0 && yy < static_cast<long long>(h)) hit = tmp[yy * w + x];
        }
        dilated[y * w + x] = hit;
      }
    for (std::size_t i = 0; i < w * h; ++i) {
      if (dilated[i] && argmax[i] == 0 && !claimed[i]) {
        for (std::size_t c = 0; c < m; ++c) out.scores[i * m + c] = 0.0;
        out.scores[i * m + cls] = 1.0;
        claimed[i] = 1;
      }
    }
  }
  return out;
}

// Per-point independent class resampling from the confusion matrix rows.
// Coordinates are untouched; output rows stay one-hot.
inline Matrix corrupt_3d(const Matrix& labels, const CorruptionConfig& cfg) {
  cfg.validate();
  if (labels.cols != cfg.confusion.rows) {
    throw std::invalid_argument("corrupt_3d: label width " + std::to_string(labels.cols) +
                                " != confusion size " + std::to_string(cfg.confusion.rows));
  }
  Matrix out(labels.rows, labels.cols, 0.0);
  for (std::size_t i = 0; i < labels.rows; ++i) {
    const std::size_t cls = labels.argmax_row(i);
    Rng rng(derive_seed(cfg.seed, 0xc0ffee ^ i));
    const double draw = rng.uniform();
    double cum = 0.0;
    std::size_t picked = labels.cols - 1;
    for (std::size_t c = 0; c < labels.cols; ++c) {
      cum += cfg.confusion.at(cls, c);
      if (draw < cum) {
        picked = c;
        break;
      }
    }
    out.at(i, picked) = 1.0;
  }
  return out;
}

}  // namespace semfuse
