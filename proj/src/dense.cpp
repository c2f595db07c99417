#include "refi/dense.hpp"

#include "refi/kernels.hpp"
#include "refi/parallel.hpp"

namespace refi {

Mat matmul_nn(const Mat& a, const Mat& b) {
  if (a.cols != b.rows) throw ValidationError("matmul_nn: inner dimensions differ");
  Mat c(a.rows, b.cols);
  const auto& k = kernels::active();
  parallel_for(0, a.rows, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      double* ci = c.row(i);
      const double* ai = a.row(i);
      for (std::size_t kk = 0; kk < a.cols; ++kk) {
        if (ai[kk] != 0.0) k.axpy(ai[kk], b.row(kk), ci, b.cols);
      }
    }
  }, 16);
  return c;
}

Mat matmul_nt(const Mat& a, const Mat& b) {
  if (a.cols != b.cols) throw ValidationError("matmul_nt: inner dimensions differ");
  Mat c(a.rows, b.rows);
  const auto& k = kernels::active();
  parallel_for(0, a.rows, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      double* ci = c.row(i);
      const double* ai = a.row(i);
      for (std::size_t j = 0; j < b.rows; ++j) ci[j] = k.dot(ai, b.row(j), a.cols);
    }
  }, 16);
  return c;
}

Mat matmul_tn(const Mat& a, const Mat& b) {
  if (a.rows != b.rows) throw ValidationError("matmul_tn: outer dimensions differ");
  Mat c(a.cols, b.cols);
  const auto& k = kernels::active();
  // For a fixed output row kk, accumulation runs over i in order; chunks of
  // kk are independent.
  parallel_for(0, a.cols, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = 0; i < a.rows; ++i) {
      const double* ai = a.row(i);
      const double* bi = b.row(i);
      for (std::size_t kk = lo; kk < hi; ++kk) {
        if (ai[kk] != 0.0) k.axpy(ai[kk], bi, c.row(kk), b.cols);
      }
    }
  }, 16);
  return c;
}

Mat transpose(const Mat& a) {
  Mat t(a.cols, a.rows);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < a.cols; ++j) t.at(j, i) = a.at(i, j);
  return t;
}

Mat gather_rows(const Mat& src, std::span<const std::uint32_t> idx) {
  Mat out(idx.size(), src.cols);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= src.rows) throw ValidationError("gather_rows: index out of range");
    const double* s = src.row(idx[i]);
    std::copy(s, s + src.cols, out.row(i));
  }
  return out;
}

}  // namespace refi
