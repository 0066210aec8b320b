#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace chatzero {

// Dense row-major float matrix.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<float> data;

  Matrix() = default;
  Matrix(int r, int c, float fill = 0.0f)
      : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, fill) {}

  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }

  float& operator()(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  float operator()(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }

  std::span<float> row(int r) { return {data.data() + static_cast<std::size_t>(r) * cols, static_cast<std::size_t>(cols)}; }
  std::span<const float> row(int r) const {
    return {data.data() + static_cast<std::size_t>(r) * cols, static_cast<std::size_t>(cols)};
  }

  void zero() { std::fill(data.begin(), data.end(), 0.0f); }
  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
};

// Trainable weight with its gradient and Adam moments.
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
  Matrix adam_m;
  Matrix adam_v;

  Parameter() = default;
  Parameter(std::string n, int rows, int cols)
      : name(std::move(n)), value(rows, cols), grad(rows, cols), adam_m(rows, cols), adam_v(rows, cols) {}
};

}  // namespace chatzero
