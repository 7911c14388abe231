#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace tir {

// Dense row-major matrix of doubles. Deliberately minimal: the model code
// only ever needs row views and appends.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0.0) {}

  double& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  double at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }

  std::span<const double> row(int r) const {
    return {data.data() + static_cast<std::size_t>(r) * cols, static_cast<std::size_t>(cols)};
  }
  std::span<double> row(int r) {
    return {data.data() + static_cast<std::size_t>(r) * cols, static_cast<std::size_t>(cols)};
  }

  void push_row(std::span<const double> values) {
    data.insert(data.end(), values.begin(), values.end());
    ++rows;
    if (cols == 0) cols = static_cast<int>(values.size());
  }
};

}  // namespace tir
