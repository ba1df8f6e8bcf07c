#pragma once

#include <cmath>
#include <cstddef>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "semfuse/matrix.hpp"

namespace semfuse {

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;
};

struct Mat3 {
  double m[9] = {0};  // row major
  static Mat3 identity() {
    Mat3 r;
    r.m[0] = r.m[4] = r.m[8] = 1.0;
    return r;
  }
};

struct Mat34 {
  double m[12] = {0};  // row major, [R | t]
  static Mat34 identity() {
    Mat34 r;
    r.m[0] = r.m[5] = r.m[10] = 1.0;
    return r;
  }
};

struct PointCloud {
  std::vector<Vec3> points;
  std::vector<double> intensity;  // optional; empty or one per point

  std::size_t size() const { return points.size(); }
};

// Camera intrinsics K and LiDAR-to-camera extrinsics M.
struct Calibration {
  Mat3 K;
  Mat34 M;

  void validate() const {
    if (std::abs(K.m[8] - 1.0) > 1e-12) {
      throw std::invalid_argument("calibration: K[2][2] must be 1");
    }
    if (std::abs(K.m[3]) > 1e-12 || std::abs(K.m[6]) > 1e-12 || std::abs(K.m[7]) > 1e-12) {
      throw std::invalid_argument("calibration: K must be upper triangular");
    }
    if (K.m[0] <= 0.0 || K.m[4] <= 0.0) {
      throw std::invalid_argument("calibration: K focal entries must be positive");
    }
    // rotation part of M orthonormal within 1e-6
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        double dot = 0.0;
        for (int k = 0; k < 3; ++k) dot += M.m[i * 4 + k] * M.m[j * 4 + k];
        const double expect = (i == j) ? 1.0 : 0.0;
        if (std::abs(dot - expect) > 1e-6) {
          throw std::invalid_argument("calibration: rotation part of M is not orthonormal");
        }
      }
  }
};

// Per-pixel class probability map S (h x w x m, class-fastest).
struct SemanticMap2D {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t classes = 0;
  std::vector<double> scores;  // h * w * m

  double at(std::size_t y, std::size_t x, std::size_t c) const {
    return scores[(y * width + x) * classes + c];
  }
  double& at(std::size_t y, std::size_t x, std::size_t c) {
    return scores[(y * width + x) * classes + c];
  }

  static SemanticMap2D make(std::size_t w, std::size_t h, std::size_t m) {
    SemanticMap2D s;
    s.width = w;
    s.height = h;
    s.classes = m;
    s.scores.assign(w * h * m, 0.0);
    return s;
  }

  void validate() const {
    if (scores.size() != width * height * classes) {
      throw std::invalid_argument("semantic map: buffer size mismatch");
    }
    for (std::size_t i = 0; i < width * height; ++i) {
      double sum = 0.0;
      for (std::size_t c = 0; c < classes; ++c) {
        const double v = scores[i * classes + c];
        if (v < 0.0) throw std::invalid_argument("semantic map: negative score");
        sum += v;
      }
      if (std::abs(sum - 1.0) > 1e-6) {
        throw std::invalid_argument("semantic map: pixel scores must sum to 1");
      }
    }
  }
};

struct ProjectionResult {
  std::vector<double> u, v;        // pixel coordinates
  std::vector<double> depth;       // camera-frame z (meters)
  std::vector<unsigned char> in_view;
};

// ---------------------------------------------------------------------------

// Calibration text format, one record per line:
//   K: k00 k01 k02 k10 k11 k12 k20 k21 k22
//   M: m00 ... m23
inline Calibration load_calibration(const std::string& blob) {
  Calibration calib;
  bool have_k = false, have_m = false;
  std::istringstream in(blob);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    auto read_floats = [&](double* dst, std::size_t count, const char* name) {
      std::size_t got = 0;
      double v;
      while (got < count && (ls >> v)) dst[got++] = v;
      double extra;
      if (got < count || (ls >> extra)) {
        throw std::invalid_argument("calibration line " + std::to_string(line_no) + ": key " +
                                    name + " expects exactly " + std::to_string(count) +
                                    " floats");
      }
    };
    if (key == "K:") {
      read_floats(calib.K.m, 9, "K");
      have_k = true;
    } else if (key == "M:") {
      read_floats(calib.M.m, 12, "M");
      have_m = true;
    } else {
      throw std::invalid_argument("calibration line " + std::to_string(line_no) +
                                  ": unknown key '" + key + "'");
    }
  }
  if (!have_k) throw std::invalid_argument("calibration: missing K record");
  if (!have_m) throw std::invalid_argument("calibration: missing M record");
  try {
    calib.validate();
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(std::string(e.what()) + " (while loading calibration)");
  }
  return calib;
}

// Eq-style per-point projection: homogenize, apply M, apply K, perspective
// divide. Never throws; out-of-frustum conditions are reported per point.
// A point is in view when its depth is positive, its raw pixel falls inside
// [0,w) x [0,h) and its half-up-rounded pixel index is a valid map index.
inline ProjectionResult project_points(const PointCloud& cloud, const Calibration& calib,
                                       std::size_t image_width, std::size_t image_height) {
  const std::size_t n = cloud.size();
  ProjectionResult res;
  res.u.resize(n);
  res.v.resize(n);
  res.depth.resize(n);
  res.in_view.assign(n, 0);
  const double* M = calib.M.m;
  const double* K = calib.K.m;
  const double w = static_cast<double>(image_width);
  const double h = static_cast<double>(image_height);
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3& p = cloud.points[i];
    const double cx = M[0] * p.x + M[1] * p.y + M[2] * p.z + M[3];
    const double cy = M[4] * p.x + M[5] * p.y + M[6] * p.z + M[7];
    const double cz = M[8] * p.x + M[9] * p.y + M[10] * p.z + M[11];
    res.depth[i] = cz;
    if (cz <= 0.0) {
      res.u[i] = -1.0;
      res.v[i] = -1.0;
      continue;
    }
    const double px = K[0] * cx + K[1] * cy + K[2] * cz;
    const double py = K[4] * cy + K[5] * cz;
    const double u = px / cz;
    const double v = py / cz;
    res.u[i] = u;
    res.v[i] = v;
    const double ru = std::floor(u + 0.5);
    const double rv = std::floor(v + 0.5);
    res.in_view[i] =
        (u >= 0.0 && u < w && v >= 0.0 && v < h && ru < w && rv < h) ? 1 : 0;
  }
  return res;
}

enum class OutOfViewPolicy { BackgroundOneHot, Zero };

// Projects every point into the semantic map and copies the nearest pixel's
// score vector (round half-up). Out-of-view points get the policy vector.
inline Matrix paint_points_2d(const PointCloud& cloud, const Calibration& calib,
                              const SemanticMap2D& map,
                              OutOfViewPolicy policy = OutOfViewPolicy::BackgroundOneHot) {
  if (map.classes < 2) {
    throw std::invalid_argument("paint_points_2d: need at least background + one class");
  }
  const auto proj = project_points(cloud, calib, map.width, map.height);
  Matrix out(cloud.size(), map.classes, 0.0);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (proj.in_view[i]) {
      const std::size_t px = static_cast<std::size_t>(std::floor(proj.u[i] + 0.5));
      const std::size_t py = static_cast<std::size_t>(std::floor(proj.v[i] + 0.5));
      for (std::size_t c = 0; c < map.classes; ++c) out.at(i, c) = map.at(py, px, c);
    } else if (policy == OutOfViewPolicy::BackgroundOneHot) {
      out.at(i, 0) = 1.0;
    }
  }
  return out;
}

}  // namespace semfuse
