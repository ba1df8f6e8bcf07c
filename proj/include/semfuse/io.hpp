#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "semfuse/geometry.hpp"
#include "semfuse/matrix.hpp"
#include "semfuse/nn.hpp"
#include "semfuse/semantics.hpp"
#include "semfuse/tensor.hpp"

namespace semfuse {

// All binary formats are little-endian. Cloud records are KITTI-compatible
// float32 x,y,z,intensity quadruples with no header; semantic maps use the
// "SEM2" container; parameter checkpoints use tagged tensor containers.

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  char b[4];
  b[0] = static_cast<char>(v & 0xff);
  b[1] = static_cast<char>((v >> 8) & 0xff);
  b[2] = static_cast<char>((v >> 16) & 0xff);
  b[3] = static_cast<char>((v >> 24) & 0xff);
  out.append(b, 4);
}

inline void put_f32(std::string& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

inline void put_f64(std::string& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u32(out, static_cast<std::uint32_t>(bits & 0xffffffffULL));
  put_u32(out, static_cast<std::uint32_t>(bits >> 32));
}

class ByteReader {
 public:
  ByteReader(const std::string& buf, std::string what) : buf_(buf), what_(std::move(what)) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(buf_[pos_ + i]);
    pos_ += 4;
    return v;
  }
  float f32() {
    const std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  double f64() {
    const std::uint64_t lo = u32();
    const std::uint64_t hi = u32();
    const std::uint64_t bits = lo | (hi << 32);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool at_end() const { return pos_ == buf_.size(); }
  std::size_t remaining() const { return buf_.size() - pos_; }

 private:
  void need(std::size_t n) {
    if (pos_ + n > buf_.size()) {
      throw std::invalid_argument(what_ + ": truncated (need " + std::to_string(n) +
                                  " bytes at offset " + std::to_string(pos_) + ")");
    }
  }
  const std::string& buf_;
  std::string what_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

// ---------------------------------------------------------------------------
// Point cloud binary (N x 4 float32, no header)
// ---------------------------------------------------------------------------

inline std::string encode_cloud(const PointCloud& cloud) {
  std::string out;
  out.reserve(cloud.size() * 16);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    detail::put_f32(out, static_cast<float>(cloud.points[i].x));
    detail::put_f32(out, static_cast<float>(cloud.points[i].y));
    detail::put_f32(out, static_cast<float>(cloud.points[i].z));
    detail::put_f32(out, cloud.intensity.empty() ? 0.0f
                                                 : static_cast<float>(cloud.intensity[i]));
  }
  return out;
}

inline PointCloud decode_cloud(const std::string& bytes) {
  if (bytes.size() % 16 != 0) {
    throw std::invalid_argument("cloud binary: size " + std::to_string(bytes.size()) +
                                " is not a multiple of 16");
  }
  detail::ByteReader r(bytes, "cloud binary");
  PointCloud cloud;
  const std::size_t n = bytes.size() / 16;
  cloud.points.reserve(n);
  cloud.intensity.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Vec3 p;
    p.x = r.f32();
    p.y = r.f32();
    p.z = r.f32();
    cloud.points.push_back(p);
    cloud.intensity.push_back(r.f32());
  }
  return cloud;
}

// ---------------------------------------------------------------------------
// Semantic map binary: magic "SEM2", u32 h, u32 w, u32 m, then h*w*m float32
// row-major class-fastest.
// ---------------------------------------------------------------------------

inline std::string encode_semantic_map(const SemanticMap2D& map) {
  std::string out = "SEM2";
  detail::put_u32(out, static_cast<std::uint32_t>(map.height));
  detail::put_u32(out, static_cast<std::uint32_t>(map.width));
  detail::put_u32(out, static_cast<std::uint32_t>(map.classes));
  for (double v : map.scores) detail::put_f32(out, static_cast<float>(v));
  return out;
}

inline SemanticMap2D decode_semantic_map(const std::string& bytes) {
  detail::ByteReader r(bytes, "semantic map");
  if (r.bytes(4) != "SEM2") throw std::invalid_argument("semantic map: bad magic, expected SEM2");
  SemanticMap2D map;
  map.height = r.u32();
  map.width = r.u32();
  map.classes = r.u32();
  const std::size_t n = map.height * map.width * map.classes;
  if (r.remaining() != n * 4) {
    throw std::invalid_argument("semantic map: payload size mismatch");
  }
  map.scores.resize(n);
  for (std::size_t i = 0; i < n; ++i) map.scores[i] = r.f32();
  return map;
}

// Per-point semantic tables reuse the SEM2 container with h = 1, w = N.
inline std::string encode_point_semantics(const Matrix& sem) {
  SemanticMap2D map;
  map.height = 1;
  map.width = sem.rows;
  map.classes = sem.cols;
  map.scores = sem.data;
  return encode_semantic_map(map);
}

inline Matrix decode_point_semantics(const std::string& bytes) {
  SemanticMap2D map = decode_semantic_map(bytes);
  if (map.height != 1) {
    throw std::invalid_argument("point semantics: expected h == 1 container");
  }
  Matrix out(map.width, map.classes, 0.0);
  out.data = map.scores;
  return out;
}

// ---------------------------------------------------------------------------
// Calibration text (canonical form: %.17g, single space separators)
// ---------------------------------------------------------------------------

inline std::string encode_calibration(const Calibration& calib) {
  auto fmt = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  std::string out = "K:";
  for (double v : calib.K.m) out += " " + fmt(v);
  out += "\nM:";
  for (double v : calib.M.m) out += " " + fmt(v);
  out += "\n";
  return out;
}

// ---------------------------------------------------------------------------
// Box list text: one box per line, `cx cy cz l w h yaw class_id`
// ---------------------------------------------------------------------------

inline std::string encode_boxes(const std::vector<Box3D>& boxes) {
  auto fmt = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  std::string out;
  for (const auto& b : boxes) {
    out += fmt(b.center.x) + " " + fmt(b.center.y) + " " + fmt(b.center.z) + " " + fmt(b.length) +
           " " + fmt(b.width) + " " + fmt(b.height) + " " + fmt(b.yaw) + " " +
           std::to_string(b.class_id) + "\n";
  }
  return out;
}

inline std::vector<Box3D> decode_boxes(const std::string& text) {
  std::vector<Box3D> boxes;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    Box3D b;
    if (!(ls >> b.center.x >> b.center.y >> b.center.z >> b.length >> b.width >> b.height >>
          b.yaw >> b.class_id)) {
      throw std::invalid_argument("box list line " + std::to_string(line_no) +
                                  ": expected 8 fields");
    }
    boxes.push_back(b);
  }
  return boxes;
}

// ---------------------------------------------------------------------------
// Parameter checkpoints: 4-byte magic, then per tensor u32 rank, u32 dims[],
// float64 data, in the order the owning module declares.
// ---------------------------------------------------------------------------

inline std::string encode_tensor_container(const std::string& magic,
                                           const std::vector<StateEntry>& entries) {
  if (magic.size() != 4) throw std::invalid_argument("checkpoint magic must be 4 bytes");
  std::string out = magic;
  for (const auto& e : entries) {
    detail::put_u32(out, static_cast<std::uint32_t>(e.shape.size()));
    std::size_t n = 1;
    for (auto d : e.shape) {
      detail::put_u32(out, static_cast<std::uint32_t>(d));
      n *= d;
    }
    if (e.data->size() != n) throw std::invalid_argument("checkpoint: buffer/shape mismatch");
    for (double v : *e.data) detail::put_f64(out, v);
  }
  return out;
}

// Loads into pre-shaped entries; shapes in the stream must match exactly.
inline void decode_tensor_container(const std::string& bytes, const std::string& magic,
                                    const std::vector<StateEntry>& entries) {
  detail::ByteReader r(bytes, "checkpoint " + magic);
  if (r.bytes(4) != magic) {
    throw std::invalid_argument("checkpoint: bad magic, expected " + magic);
  }
  for (const auto& e : entries) {
    const std::uint32_t rank = r.u32();
    if (rank != e.shape.size()) {
      throw std::invalid_argument("checkpoint " + magic + ": rank mismatch (file " +
                                  std::to_string(rank) + ", expected " +
                                  std::to_string(e.shape.size()) + ")");
    }
    std::size_t n = 1;
    for (std::size_t d = 0; d < rank; ++d) {
      const std::uint32_t dim = r.u32();
      if (dim != e.shape[d]) {
        throw std::invalid_argument("checkpoint " + magic + ": dimension mismatch on axis " +
                                    std::to_string(d) + " (file " + std::to_string(dim) +
                                    ", expected " + std::to_string(e.shape[d]) + ")");
      }
      n *= dim;
    }
    e.data->resize(n);
    for (std::size_t i = 0; i < n; ++i) (*e.data)[i] = r.f64();
  }
  if (!r.at_end()) {
    throw std::invalid_argument("checkpoint " + magic + ": trailing bytes");
  }
}

}  // namespace semfuse
