#pragma once

#include <cstdint>
#include <span>

#include "refi/mat.hpp"

namespace refi {

// Row-parallel dense products built on the kernel table. Each output element
// accumulates in a fixed index order, so results do not depend on the thread
// count.
Mat matmul_nn(const Mat& a, const Mat& b);  // a(m,k) * b(k,n)
Mat matmul_nt(const Mat& a, const Mat& b);  // a(m,d) * b(p,d)^T
Mat matmul_tn(const Mat& a, const Mat& b);  // a(m,k)^T * b(m,n)

Mat transpose(const Mat& a);
Mat gather_rows(const Mat& src, std::span<const std::uint32_t> idx);

}  // namespace refi
