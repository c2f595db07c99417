#pragma once

#include <cstddef>
#include <initializer_list>
#include <vector>

#include "refi/error.hpp"

namespace refi {

// Dense row-major matrix of doubles. The one value type shared by the graph
// feature store, the fingerprint math and the autodiff tape.
struct Mat {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> v;

  Mat() = default;
  Mat(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), v(r * c, fill) {}

  static Mat from_rows(std::initializer_list<std::initializer_list<double>> init) {
    Mat m;
    m.rows = init.size();
    m.cols = m.rows ? init.begin()->size() : 0;
    m.v.reserve(m.rows * m.cols);
    for (const auto& row : init) {
      if (row.size() != m.cols) throw ValidationError("Mat::from_rows: ragged rows");
      m.v.insert(m.v.end(), row.begin(), row.end());
    }
    return m;
  }

  double* row(std::size_t i) { return v.data() + i * cols; }
  const double* row(std::size_t i) const { return v.data() + i * cols; }

  double& at(std::size_t i, std::size_t j) { return v[i * cols + j]; }
  double at(std::size_t i, std::size_t j) const { return v[i * cols + j]; }

  std::size_t size() const { return v.size(); }
  bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }
  bool is_scalar() const { return rows == 1 && cols == 1; }

  bool operator==(const Mat& o) const { return rows == o.rows && cols == o.cols && v == o.v; }
};

}  // namespace refi
