#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace semfuse {

// Plain row-major matrix for non-learnable per-point tables (semantic score
// rows, painted labels). Learnable data lives in Tensor instead.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  const double* row(std::size_t r) const { return data.data() + r * cols; }
  double* row(std::size_t r) { return data.data() + r * cols; }

  std::size_t argmax_row(std::size_t r) const {
    std::size_t best = 0;
    for (std::size_t c = 1; c < cols; ++c)
      if (at(r, c) > at(r, best)) best = c;  // ties keep the lowest index
    return best;
  }
};

}  // namespace semfuse
