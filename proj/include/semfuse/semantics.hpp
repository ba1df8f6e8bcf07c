#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "semfuse/geometry.hpp"
#include "semfuse/matrix.hpp"

namespace semfuse {

// Oriented 3D box; yaw about +z, heading along the box's l axis. class_id 0 is
// reserved for background.
struct Box3D {
  Vec3 center;
  double length = 0.0, width = 0.0, height = 0.0;
  double yaw = 0.0;
  int class_id = 1;

  double volume() const { return length * width * height; }

  void validate(std::size_t num_classes) const {
    if (length <= 0.0 || width <= 0.0 || height <= 0.0) {
      throw std::invalid_argument("box: size must be strictly positive");
    }
    if (class_id < 1 || static_cast<std::size_t>(class_id) >= num_classes) {
      throw std::invalid_argument("box: class_id " + std::to_string(class_id) +
                                  " out of range [1, " + std::to_string(num_classes - 1) + "]");
    }
  }
};

// Boundary-inclusive containment: p rotated by -yaw about the center must lie
// within the axis-aligned half extents.
inline bool point_in_box(const Vec3& p, const Box3D& box) {
  const double dx = p.x - box.center.x;
  const double dy = p.y - box.center.y;
  const double dz = p.z - box.center.z;
  const double c = std::cos(box.yaw);
  const double s = std::sin(box.yaw);
  const double lx = c * dx + s * dy;   // rotate by -yaw
  const double ly = -s * dx + c * dy;
  return std::abs(lx) <= box.length * 0.5 && std::abs(ly) <= box.width * 0.5 &&
         std::abs(dz) <= box.height * 0.5;
}

// Ground-truth one-hot labels from boxes: each point takes the class of a
// containing box (smallest box volume wins on overlap), else background.
inline Matrix labels_from_boxes(const PointCloud& cloud, const std::vector<Box3D>& boxes,
                                std::size_t num_classes) {
  for (const auto& b : boxes) b.validate(num_classes);
  Matrix labels(cloud.size(), num_classes, 0.0);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    int cls = 0;
    double best_volume = 0.0;
    for (const auto& box : boxes) {
      if (point_in_box(cloud.points[i], box)) {
        if (cls == 0 || box.volume() < best_volume) {
          cls = box.class_id;
          best_volume = box.volume();
        }
      }
    }
    labels.at(i, static_cast<std::size_t>(cls)) = 1.0;
  }
  return labels;
}

// The three semantic representations ablated against each other.
enum class Representation { ID, ONEHOT, SCORE };

inline const char* representation_name(Representation r) {
  switch (r) {
    case Representation::ID: return "id";
    case Representation::ONEHOT: return "onehot";
    case Representation::SCORE: return "score";
  }
  return "?";
}

// Encodes score rows (N x m) into the requested representation:
//   SCORE  -> identity (N x m)
//   ONEHOT -> argmax one-hot, ties to the lowest class id (N x m)
//   ID     -> argmax class index as a single float column (N x 1)
inline Matrix encode(const Matrix& scores, Representation repr) {
  switch (repr) {
    case Representation::SCORE: return scores;
    case Representation::ONEHOT: {
      Matrix out(scores.rows, scores.cols, 0.0);
      for (std::size_t r = 0; r < scores.rows; ++r) out.at(r, scores.argmax_row(r)) = 1.0;
      return out;
    }
    case Representation::ID: {
      Matrix out(scores.rows, 1, 0.0);
      for (std::size_t r = 0; r < scores.rows; ++r)
        out.at(r, 0) = static_cast<double>(scores.argmax_row(r));
      return out;
    }
  }
  throw std::logic_error("unknown representation");
}

// Expands rows to vector space when the representation collapsed them: ID
// becomes argmax one-hot, the vector representations pass through. The fusion
// equations act on vectors, so this runs before any per-voxel weighting.
inline Matrix to_vector_space(const Matrix& scores, Representation repr, std::size_t num_classes) {
  if (repr != Representation::ID) return encode(scores, repr);
  Matrix out(scores.rows, num_classes, 0.0);
  for (std::size_t r = 0; r < scores.rows; ++r) out.at(r, scores.argmax_row(r)) = 1.0;
  return out;
}

// Point cloud with per-point semantic score rows from the 2D and 3D sources.
struct PaintedPointCloud {
  PointCloud cloud;
  Matrix sem2d;  // N x m
  Matrix sem3d;  // N x m

  std::size_t size() const { return cloud.size(); }

  void validate() const {
    if (sem2d.rows != cloud.size() || sem3d.rows != cloud.size()) {
      throw std::invalid_argument("painted cloud: row count mismatch");
    }
    auto check_rows = [](const Matrix& m, const char* name) {
      for (std::size_t r = 0; r < m.rows; ++r) {
        double sum = 0.0;
        for (std::size_t c = 0; c < m.cols; ++c) {
          if (m.at(r, c) < 0.0) throw std::invalid_argument(std::string(name) + ": negative score");
          sum += m.at(r, c);
        }
        if (std::abs(sum - 1.0) > 1e-6) {
          throw std::invalid_argument(std::string(name) + ": row does not sum to 1");
        }
      }
    };
    check_rows(sem2d, "sem2d");
    check_rows(sem3d, "sem3d");
  }
};

}  // namespace semfuse
