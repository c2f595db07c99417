#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace refi::kernels {

// Double-precision inner-loop primitives behind a runtime-selected table.
//
// Contract: the element-wise kernels (axpy, scale, add, sub, mul) perform one
// multiply and/or one add per element in index order, so every table produces
// bitwise-identical results. Reductions (dot, sum, l2sq, sqdist) may
// reassociate partial sums; tables agree with the scalar reference to
// ~1e-12 relative and the equivalence suite pins that down.
struct Table {
  const char* name;
  double (*dot)(const double* x, const double* y, std::size_t n);
  double (*sum)(const double* x, std::size_t n);
  double (*l2sq)(const double* x, std::size_t n);                    // sum x_i^2
  double (*sqdist)(const double* x, const double* y, std::size_t n); // sum (x_i-y_i)^2
  void (*axpy)(double a, const double* x, double* y, std::size_t n); // y += a*x
  void (*scale)(double a, const double* x, double* y, std::size_t n);
  void (*add)(const double* x, const double* y, double* out, std::size_t n);
  void (*sub)(const double* x, const double* y, double* out, std::size_t n);
  void (*mul)(const double* x, const double* y, double* out, std::size_t n);
};

const Table& scalar_table();

// Selected once per process: REFI_KERNELS=scalar|avx2|neon forces a table
// (falling back to scalar with a warning if unavailable), otherwise the best
// table the CPU supports.
const Table& active();

// Every table compiled in and runnable on this CPU; scalar is always first.
std::vector<const Table*> available_tables();

}  // namespace refi::kernels
