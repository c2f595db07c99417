#include "refi/autodiff.hpp"

#include <cmath>
#include <limits>

#include "refi/dense.hpp"
#include "refi/kernels.hpp"

namespace refi::ad {

namespace {

constexpr double kLayerNormEps = 1e-5;
constexpr double kBceClamp = 1e-12;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// How an operand maps onto the broadcast output shape.
enum class Bc { same, row, scalar };

Bc classify(const Mat& x, std::size_t orows, std::size_t ocols, const char* op) {
  if (x.rows == orows && x.cols == ocols) return Bc::same;
  if (x.rows == 1 && x.cols == 1) return Bc::scalar;
  if (x.rows == 1 && x.cols == ocols) return Bc::row;
  throw ValidationError(std::string(op) + ": shapes not broadcast-compatible");
}

inline double pick(const Mat& x, Bc bc, std::size_t i, std::size_t j) {
  switch (bc) {
    case Bc::same: return x.v[i * x.cols + j];
    case Bc::row: return x.v[j];
    case Bc::scalar: return x.v[0];
  }
  return 0.0;
}

// dst has the operand's own shape; g has the output shape. Sums g over the
// broadcast rows/columns.
void accumulate_reduced(Mat& dst, const Mat& g) {
  if (dst.rows == g.rows && dst.cols == g.cols) {
    kernels::active().add(dst.v.data(), g.v.data(), dst.v.data(), g.size());
    return;
  }
  if (dst.rows == 1 && dst.cols == 1) {
    dst.v[0] += kernels::active().sum(g.v.data(), g.size());
    return;
  }
  // row vector: sum over rows
  for (std::size_t i = 0; i < g.rows; ++i) {
    kernels::active().add(dst.v.data(), g.row(i), dst.v.data(), g.cols);
  }
}

}  // namespace

Tensor Tape::push(Mat value, bool requires_grad, std::function<void(Tape&)> fn, const char* op) {
  if (check_finite_) {
    for (double x : value.v) {
      if (!std::isfinite(x)) {
        throw NumericError(std::string(op) + " produced a non-finite value");
      }
    }
  }
  Node node;
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  if (requires_grad) node.backward_fn = std::move(fn);
  nodes_.push_back(std::move(node));
  return Tensor{static_cast<std::int32_t>(nodes_.size() - 1)};
}

Mat& Tape::grad_buf(std::int32_t id) {
  Node& n = nodes_[id];
  if (n.grad.size() == 0) n.grad = Mat(n.value.rows, n.value.cols);
  return n.grad;
}

void Tape::check(Tensor t) const {
  if (t.id < 0 || static_cast<std::size_t>(t.id) >= nodes_.size()) {
    throw ValidationError("tensor does not belong to this tape");
  }
}

Tensor Tape::leaf(Mat value, bool requires_grad) {
  return push(std::move(value), requires_grad, nullptr, "leaf");
}

const Mat& Tape::value(Tensor t) const {
  check(t);
  return nodes_[t.id].value;
}

bool Tape::requires_grad(Tensor t) const {
  check(t);
  return nodes_[t.id].requires_grad;
}

const Mat& Tape::grad(Tensor t) {
  check(t);
  if (!nodes_[t.id].requires_grad) {
    throw ValidationError("grad requested for a tensor without requires_grad");
  }
  return grad_buf(t.id);
}

void Tape::backward(Tensor loss) {
  check(loss);
  if (backward_done_) throw ValidationError("backward called twice on one tape");
  if (!nodes_[loss.id].value.is_scalar()) throw ValidationError("backward needs a scalar loss");
  backward_done_ = true;
  if (!nodes_[loss.id].requires_grad) return;  // loss disconnected from parameters
  grad_buf(loss.id).v[0] = 1.0;
  for (std::int32_t id = loss.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (n.backward_fn && n.grad.size() != 0) n.backward_fn(*this);
  }
}

Tensor Tape::matmul(Tensor a, Tensor b) {
  check(a);
  check(b);
  Mat out = matmul_nn(val(a.id), val(b.id));
  const bool rq = nodes_[a.id].requires_grad || nodes_[b.id].requires_grad;
  const auto ai = a.id, bi = b.id;
  const auto self = static_cast<std::int32_t>(nodes_.size());
  return push(std::move(out), rq, [ai, bi, self](Tape& t) {
    const Mat& g = t.nodes_[self].grad;
    if (t.nodes_[ai].requires_grad) {
      const Mat da = refi::matmul_nt(g, t.val(bi));
      kernels::active().add(t.grad_buf(ai).v.data(), da.v.data(), t.grad_buf(ai).v.data(), da.size());
    }
    if (t.nodes_[bi].requires_grad) {
      const Mat db = matmul_tn(t.val(ai), g);
      kernels::active().add(t.grad_buf(bi).v.data(), db.v.data(), t.grad_buf(bi).v.data(), db.size());
    }
  }, "matmul");
}

Tensor Tape::matmul_nt(Tensor a, Tensor b) {
  check(a);
  check(b);
  Mat out = refi::matmul_nt(val(a.id), val(b.id));
  const bool rq = nodes_[a.id].requires_grad || nodes_[b.id].requires_grad;
  const auto ai = a.id, bi = b.id;
  const auto self = static_cast<std::int32_t>(nodes_.size());
  return push(std::move(out), rq, [ai, bi, self](Tape& t) {
    const Mat& g = t.nodes_[self].grad;
    if (t.nodes_[ai].requires_grad) {
      const Mat da = matmul_nn(g, t.val(bi));
      kernels::active().add(t.grad_buf(ai).v.data(), da.v.data(), t.grad_buf(ai).v.data(), da.size());
    }
    if (t.nodes_[bi].requires_grad) {
      const Mat db = matmul_tn(g, t.val(ai));
      kernels::active().add(t.grad_buf(bi).v.data(), db.v.data(), t.grad_buf(bi).v.data(), db.size());
    }
  }, "matmul_nt");
}

Tensor Tape::add(Tensor a, Tensor b) {
  check(a);
  check(b);
  const Mat& va = val(a.id);
  const Mat& vb = val(b.id);
  const std::size_t orows = std::max(va.rows, vb.rows);
  const std::size_t ocols = std::max(va.cols, vb.cols);
  const Bc bca = classify(va, orows, ocols, "add");
  const Bc bcb = classify(vb, orows, ocols, "add");
  Mat out(orows, ocols);
  if (bca == Bc::same && bcb == Bc::same) {
    kernels::active().add(va.v.data(), vb.v.data(), out.v.data(), out.size());
  } else {
    for (std::size_t i = 0; i < orows; ++i)
      for (std::size_t j = 0; j < ocols; ++j) out.at(i, j) = pick(va, bca, i, j) + pick(vb, bcb, i, j);
  }
  const bool rq = nodes_[a.id].requires_grad || nodes_[b.id].requires_grad;
  const auto ai = a.id, bi = b.id;
  const auto self = static_cast<std::int32_t>(nodes_.size());
  return push(std::move(out), rq, [ai, bi, self](Tape& t) {
    const Mat& g = t.nodes_[self].grad;
    if (t.nodes_[ai].requires_grad) accumulate_reduced(t.grad_buf(ai), g);
    if (t.nodes_[bi].requires_grad) accumulate_reduced(t.grad_buf(bi), g);
  }, "add");
}

Tensor Tape::hadamard(Tensor a, Tensor b) {
  check(a);
  check(b);
  const Mat& va = val(a.id);
  const Mat& vb = val(b.id);
  const std::size_t orows = std::max(va.rows, vb.rows);
  const std::size_t ocols = std::max(va.cols, vb.cols);
  const Bc bca = classify(va, orows, ocols, "hadamard");
  const Bc bcb = classify(vb, orows, ocols, "hadamard");
  Mat out(orows, ocols);
  if (bca == Bc::same && bcb == Bc::same) {
    kernels::active().mul(va.v.data(), vb.v.data(), out.v.data(), out.size());
  } else {
    for (std::size_t i = 0; i < orows; ++i)
      for (std::size_t j = 0; j < ocols; ++j) out.at(i, j) = pick(va, bca, i, j) * pick(vb, bcb, i, j);
  }
  const bool rq = nodes_[a.id].requires_grad || nodes_[b.id].requires_grad;
  const auto ai = a.id, bi = b.id;
  const auto self = static_cast<std::int32_t>(nodes_.size());
  return push(std::move(out), rq, [ai, bi, self, bca, bcb, orows, ocols](Tape& t) {
    const Mat& g = t.nodes_[self].grad;
    const Mat& va = t.val(ai);
    const Mat& vb = t.val(bi);
    if (t.nodes_[ai].requires_grad) {
      Mat contrib(orows, ocols);
      for (std::size_t i = 0; i < orows; ++i)
        for (std::size_t j = 0; j < ocols; ++j) contrib.at(i, j) = g.at(i, j) * pick(vb, bcb, i, j);
      accumulate_reduced(t.grad_buf(ai), contrib);
    }
    if (t.nodes_[bi].requires_grad) {
      Mat contrib(orows, ocols);
      for (std::size_t i = 0; i < orows; ++i)
        for (std::size_t j = 0; j < ocols; ++j) contrib.at(i, j) = g.at(i, j) * pick(va, bca, i, j);
      accumulate_reduced(t.grad_buf(bi), contrib);
    }
  }, "hadamard");
}

Tensor Tape::div(Tensor a, Tensor b) {
  check(a);
  check(b);
  const Mat& va = val(a.id);
  const Mat& vb = val(b.id);
  const std::size_t orows = std::max(va.rows, vb.rows);
  const std::size_t ocols = std::max(va.cols, vb.cols);
  const Bc bca = classify(va, orows, ocols, "div");
  const Bc bcb = classify(vb, orows, ocols, "div");
  Mat out(orows, ocols);
  for (std::size_t i = 0; i < orows; ++i)
    for (std::size_t j = 0; j < ocols; ++j) out.at(i, j) = pick(va, bca, i, j) / pick(vb, bcb, i, j);
  const bool rq = nodes_[a.id].requires_grad || nodes_[b.id].requires_grad;
  const auto ai = a.id, bi = b.id;
  const auto self = static_cast<std::int32_t>(nodes_.size());
  return push(std::move(out), rq, [ai, bi, self, bca, bcb, orows, ocols](Tape& t) {
    const Mat& g = t.nodes_[self].grad;
    const Mat& va = t.val(ai);
    const Mat& vb = t.val(bi);
    if (t.nodes_[ai].requires_grad) {
      Mat contrib(orows, ocols);
      for (std::size_t i = 0; i < orows; ++i)
        for (std::size_t j = 0; j < ocols; ++j) contrib.at(i, j) = g.at(i, j) / pick(vb, bcb, i, j);
      accumulate_reduced(t.grad_buf(ai), contrib);
    }
    if (t.nodes_[bi].requires_grad) {
      Mat contrib(orows, ocols);
      for (std::size_t i = 0; i < orows; ++i)
        for (std::size_t j = 0; j < ocols; ++j) {
          const double denom = pick(vb, bcb, i, j);
          contrib.at(i, j) = -g.at(i, j) * pick(va, bca, i, j) / (denom * denom);
        }
      accumulate_reduced(t.grad_buf(bi), contrib);
    }
  }, "div");
}

Tensor Tape::scalar_mul(Tensor a, double c) {
  check(a);
  const Mat& va = val(a.id);
  Mat out(va.rows, va.cols);
  kernels::active().scale(c, va.v.data(), out.v.data(), va.size());
  const bool rq = nodes_[a.id].requires_grad;
  const auto ai = a.id;
  const auto self = static_cast<std::int32_t>(nodes_.size());
  return push(std::move(out), rq, [ai, c, self](Tape& t) {
    const Mat& g = t.nodes_[self].grad;
    kernels::active().axpy(c, g.v.data(), t.grad_buf(ai).v.data(), g.size());
  }, "scalar_mul");
}

Tensor Tape::relu(Tensor a) {
  check(a);
  const Mat& va = val(a.id);
  Mat out(va.rows, va.cols);
  for (std::size_t i = 0; i < va.size(); ++i) out.v[i] = va.v[i] > 0.0 ? va.v[i] : 0.0;
  const bool rq = nodes_[a.id].requires_grad;
  const auto ai = a.id;
  const auto self = static_cast<std::int32_t>(nodes_.size());
  return push(std::move(out), rq, [ai, self](Tape& t) {
    const Mat& g = t.nodes_[self].grad;
    const Mat& va = t.val(ai);
    Mat& da = t.grad_buf(ai);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (va.v[i] > 0.0) da.v[i] += g.v[i];
    }
  }, "relu");
}

Tensor Tape::sigmoid(Tensor a) {
  check(a);
  const Mat& va = val(a.id);
  Mat out(va.rows, va.cols);
  for (std::size_t i = 0; i < va.size(); ++i) {
    const double x = va.v[i];
    if (x >= 0.0) {
      out.v[i] = 1.0 / (1.0 + std::exp(-x));
    } else {
      const double e = std::exp(x);
      out.v[i] = e / (1.0 + e);
    }
  }
  const bool rq = nodes_[a.id].requires_grad;
  const auto ai = a.id;
  const auto self = static_cast<std::int32_t>(nodes_.size());
  return push(std::move(out), rq, [ai, self](Tape& t) {
    const Mat& g = t.nodes_[self].grad;
    const Mat& s = t.nodes_[self].value;
    Mat& da = t.grad_buf(ai);
    for (std::size_t i = 0; i < g.size(); ++i) da.v[i] += g.v[i] * s.v[i] * (1.0 - s.v[i]);
  }, "sigmoid");
}

Tensor Tape::softmax_rows(Tensor a, const Mat* mask) {
  check(a);
  const Mat& va = val(a.id);
  if (mask) {
    if (mask->rows != va.rows || mask->cols != va.cols) {
      throw ValidationError("softmax_rows: mask shape mismatch");
    }
    for (double m : mask->v) {
      if (m != 0.0 && m != kNegInf) throw ValidationError("softmax_rows: mask entries must be 0 or -inf");
    }
  }
  Mat out(va.rows, va.cols);
  for (std::size_t i = 0; i < va.rows; ++i) {
    const double* zi = va.row(i);
    const double* mi = mask ? mask->row(i) : nullptr;
    double zmax = kNegInf;
    for (std::size_t j = 0; j < va.cols; ++j) {
      if (mi && mi[j] == kNegInf) continue;
      zmax = std::max(zmax, zi[j]);
    }
    if (zmax == kNegInf) throw NumericError("softmax_rows: row has every position masked");
    double denom = 0.0;
    double* oi = out.row(i);
    for (std::size_t j = 0; j < va.cols; ++j) {
      if (mi && mi[j] == kNegInf) {
        oi[j] = 0.0;
      } else {
        oi[j] = std::exp(zi[j] - zmax);
        denom += oi[j];
      }
    }
    for (std::size_t j = 0; j < va.cols; ++j) oi[j] /= denom;
  }
  const bool rq = nodes_[a.id].requires_grad;
  const auto ai = a.id;
  const auto self = static_cast<std::int32_t>(nodes_.size());
  return push(std::move(out), rq, [ai, self](Tape& t) {
    const Mat& g = t.nodes_[self].grad;
    const Mat& y = t.nodes_[self].value;
    Mat& da = t.grad_buf(ai);
    for (std::size_t i = 0; i < y.rows; ++i) {
      const double inner = kernels::active().dot(g.row(i), y.row(i), y.cols);
      const double* gi = g.row(i);
      const double* yi = y.row(i);
      double* di = da.row(i);
      for (std::size_t j = 0; j < y.cols; ++j) di[j] += yi[j] * (gi[j] - inner);
    }
  }, "softmax_rows");
}

Tensor Tape::layer_norm_rows(Tensor a) {
  check(a);
  const Mat& va = val(a.id);
  Mat out(va.rows, va.cols);
  std::vector<double> inv_std(va.rows);
  for (std::size_t i = 0; i < va.rows; ++i) {
    const double* xi = va.row(i);
    const double mean = kernels::active().sum(xi, va.cols) / static_cast<double>(va.cols);
    double var = 0.0;
    for (std::size_t j = 0; j < va.cols; ++j) {
      const double dxx = xi[j] - mean;
      var += dxx * dxx;
    }
    var /= static_cast<double>(va.cols);
    inv_std[i] = 1.0 / std::sqrt(var + kLayerNormEps);
    double* oi = out.row(i);
    for (std::size_t j = 0; j < va.cols; ++j) oi[j] = (xi[j] - mean) * inv_std[i];
  }
  const bool rq = nodes_[a.id].requires_grad;
  const auto ai = a.id;
  const auto self = static_cast<std::int32_t>(nodes_.size());
  return push(std::move(out), rq, [ai, self, inv_std = std::move(inv_std)](Tape& t) {
    const Mat& g = t.nodes_[self].grad;
    const Mat& xh = t.nodes_[self].value;
    Mat& da = t.grad_buf(ai);
    const double c = static_cast<double>(xh.cols);
    for (std::size_t i = 0; i < xh.rows; ++i) {
      const double* gi = g.row(i);
      const double* xi = xh.row(i);
      const double g_mean = kernels::active().sum(gi, xh.cols) / c;
      const double gx_mean = kernels::active().dot(gi, xi, xh.cols) / c;
      double* di = da.row(i);
      for (std::size_t j = 0; j < xh.cols; ++j) {
        di[j] += inv_std[i] * (gi[j] - g_mean - xi[j] * gx_mean);
      }
    }
  }, "layer_norm_rows");
}

Tensor Tape::mean_rows(Tensor a) {
  check(a);
  const Mat& va = val(a.id);
  Mat out(1, va.cols);
  for (std::size_t i = 0; i < va.rows; ++i) {
    kernels::active().add(out.v.data(), va.row(i), out.v.data(), va.cols);
  }
  kernels::active().scale(1.0 / static_cast<double>(va.rows), out.v.data(), out.v.data(), va.cols);
  const bool rq = nodes_[a.id].requires_grad;
  const auto ai = a.id;
  const auto self = static_cast<std::int32_t>(nodes_.size());
  return push(std::move(out), rq, [ai, self](Tape& t) {
    const Mat& g = t.nodes_[self].grad;
    Mat& da = t.grad_buf(ai);
    const double inv_r = 1.0 / static_cast<double>(da.rows);
    for (std::size_t i = 0; i < da.rows; ++i) {
      kernels::active().axpy(inv_r, g.v.data(), da.row(i), da.cols);
    }
  }, "mean_rows");
}

Tensor Tape::var_rows(Tensor a) {
  check(a);
  const Mat& va = val(a.id);
  Mat mean(1, va.cols);
  for (std::size_t i = 0; i < va.rows; ++i) {
    kernels::active().add(mean.v.data(), va.row(i), mean.v.data(), va.cols);
  }
  kernels::active().scale(1.0 / static_cast<double>(va.rows), mean.v.data(), mean.v.data(), va.cols);
  Mat out(1, va.cols);
  for (std::size_t i = 0; i < va.rows; ++i) {
    const double* xi = va.row(i);
    for (std::size_t j = 0; j < va.cols; ++j) {
      const double dxx = xi[j] - mean.v[j];
      out.v[j] += dxx * dxx;
    }
  }
  kernels::active().scale(1.0 / static_cast<double>(va.rows), out.v.data(), out.v.data(), va.cols);
  const bool rq = nodes_[a.id].requires_grad;
  const auto ai = a.id;
  const auto self = static_cast<std::int32_t>(nodes_.size());
  return push(std::move(out), rq, [ai, self, mean = std::move(mean)](Tape& t) {
    const Mat& g = t.nodes_[self].grad;
    const Mat& va = t.val(ai);
    Mat& da = t.grad_buf(ai);
    const double scale = 2.0 / static_cast<double>(va.rows);
    for (std::size_t i = 0; i < va.rows; ++i) {
      const double* xi = va.row(i);
      double* di = da.row(i);
      for (std::size_t j = 0; j < va.cols; ++j) {
        di[j] += g.v[j] * scale * (xi[j] - mean.v[j]);
      }
    }
  }, "var_rows");
}

Tensor Tape::l2_norm_rows(Tensor a) {
  check(a);
  const Mat& va = val(a.id);
  Mat out(va.rows, 1);
  for (std::size_t i = 0; i < va.rows; ++i) out.v[i] = std::sqrt(kernels::active().l2sq(va.row(i), va.cols));
  const bool rq = nodes_[a.id].requires_grad;
  const auto ai = a.id;
  const auto self = static_cast<std::int32_t>(nodes_.size());
  return push(std::move(out), rq, [ai, self](Tape& t) {
    const Mat& g = t.nodes_[self].grad;
    const Mat& nrm = t.nodes_[self].value;
    const Mat& va = t.val(ai);
    Mat& da = t.grad_buf(ai);
    for (std::size_t i = 0; i < va.rows; ++i) {
      if (nrm.v[i] == 0.0) continue;
      kernels::active().axpy(g.v[i] / nrm.v[i], va.row(i), da.row(i), va.cols);
    }
  }, "l2_norm_rows");
}

Tensor Tape::concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ValidationError("concat_rows: no inputs");
  std::size_t rows = 0;
  const std::size_t cols = val(parts[0].id).cols;
  bool rq = false;
  for (Tensor p : parts) {
    check(p);
    if (val(p.id).cols != cols) throw ValidationError("concat_rows: column mismatch");
    rows += val(p.id).rows;
    rq = rq || nodes_[p.id].requires_grad;
  }
  Mat out(rows, cols);
  std::size_t at = 0;
  std::vector<std::pair<std::int32_t, std::size_t>> layout;  // (id, first output row)
  for (Tensor p : parts) {
    const Mat& vp = val(p.id);
    std::copy(vp.v.begin(), vp.v.end(), out.v.begin() + at * cols);
    layout.emplace_back(p.id, at);
    at += vp.rows;
  }
  const auto self = static_cast<std::int32_t>(nodes_.size());
  return push(std::move(out), rq, [self, layout = std::move(layout)](Tape& t) {
    const Mat& g = t.nodes_[self].grad;
    for (const auto& [id, first] : layout) {
      if (!t.nodes_[id].requires_grad) continue;
      Mat& d = t.grad_buf(id);
      kernels::active().add(d.v.data(), g.row(first), d.v.data(), d.size());
    }
  }, "concat_rows");
}

Tensor Tape::slice_rows(Tensor a, std::size_t begin, std::size_t count) {
  check(a);
  const Mat& va = val(a.id);
  if (begin + count > va.rows) throw ValidationError("slice_rows: range out of bounds");
  Mat out(count, va.cols);
  std::copy(va.row(begin), va.row(begin) + count * va.cols, out.v.data());
  const bool rq = nodes_[a.id].requires_grad;
  const auto ai = a.id;
  const auto self = static_cast<std::int32_t>(nodes_.size());
  return push(std::move(out), rq, [ai, begin, self](Tape& t) {
    const Mat& g = t.nodes_[self].grad;
    Mat& da = t.grad_buf(ai);
    kernels::active().add(da.row(begin), g.v.data(), da.row(begin), g.size());
  }, "slice_rows");
}

Tensor Tape::concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ValidationError("concat_cols: no inputs");
  const std::size_t rows = val(parts[0].id).rows;
  std::size_t cols = 0;
  bool rq = false;
  for (Tensor p : parts) {
    check(p);
    if (val(p.id).rows != rows) throw ValidationError("concat_cols: row mismatch");
    cols += val(p.id).cols;
    rq = rq || nodes_[p.id].requires_grad;
  }
  Mat out(rows, cols);
  std::size_t at = 0;
  std::vector<std::pair<std::int32_t, std::size_t>> layout;
  for (Tensor p : parts) {
    const Mat& vp = val(p.id);
    for (std::size_t i = 0; i < rows; ++i) {
      std::copy(vp.row(i), vp.row(i) + vp.cols, out.row(i) + at);
    }
    layout.emplace_back(p.id, at);
    at += vp.cols;
  }
  const auto self = static_cast<std::int32_t>(nodes_.size());
  return push(std::move(out), rq, [self, layout = std::move(layout)](Tape& t) {
    const Mat& g = t.nodes_[self].grad;
    for (const auto& [id, first] : layout) {
      if (!t.nodes_[id].requires_grad) continue;
      Mat& d = t.grad_buf(id);
      for (std::size_t i = 0; i < d.rows; ++i) {
        kernels::active().add(d.row(i), g.row(i) + first, d.row(i), d.cols);
      }
    }
  }, "concat_cols");
}

Tensor Tape::slice_cols(Tensor a, std::size_t begin, std::size_t count) {
  check(a);
  const Mat& va = val(a.id);
  if (begin + count > va.cols) throw ValidationError("slice_cols: range out of bounds");
  Mat out(va.rows, count);
  for (std::size_t i = 0; i < va.rows; ++i) {
    std::copy(va.row(i) + begin, va.row(i) + begin + count, out.row(i));
  }
  const bool rq = nodes_[a.id].requires_grad;
  const auto ai = a.id;
  const auto self = static_cast<std::int32_t>(nodes_.size());
  return push(std::move(out), rq, [ai, begin, self](Tape& t) {
    const Mat& g = t.nodes_[self].grad;
    Mat& da = t.grad_buf(ai);
    for (std::size_t i = 0; i < g.rows; ++i) {
      kernels::active().add(da.row(i) + begin, g.row(i), da.row(i) + begin, g.cols);
    }
  }, "slice_cols");
}

Tensor Tape::broadcast_row(Tensor a, std::size_t rows) {
  check(a);
  const Mat& va = val(a.id);
  if (va.rows != 1) throw ValidationError("broadcast_row: input must be a row vector");
  Mat out(rows, va.cols);
  for (std::size_t i = 0; i < rows; ++i) std::copy(va.v.begin(), va.v.end(), out.row(i));
  const bool rq = nodes_[a.id].requires_grad;
  const auto ai = a.id;
  const auto self = static_cast<std::int32_t>(nodes_.size());
  return push(std::move(out), rq, [ai, self](Tape& t) {
    const Mat& g = t.nodes_[self].grad;
    Mat& da = t.grad_buf(ai);
    for (std::size_t i = 0; i < g.rows; ++i) {
      kernels::active().add(da.v.data(), g.row(i), da.v.data(), g.cols);
    }
  }, "broadcast_row");
}

Tensor Tape::cosine_rows(Tensor a, Tensor b) {
  check(a);
  check(b);
  const Mat& va = val(a.id);
  const Mat& vb = val(b.id);
  if (va.cols != vb.cols) throw ValidationError("cosine_rows: dimension mismatch");
  const auto& k = kernels::active();
  std::vector<double> na(va.rows), nb(vb.rows);
  for (std::size_t i = 0; i < va.rows; ++i) na[i] = std::sqrt(k.l2sq(va.row(i), va.cols));
  for (std::size_t j = 0; j < vb.rows; ++j) nb[j] = std::sqrt(k.l2sq(vb.row(j), vb.cols));
  Mat out(va.rows, vb.rows);
  for (std::size_t i = 0; i < va.rows; ++i) {
    for (std::size_t j = 0; j < vb.rows; ++j) {
      if (na[i] == 0.0 || nb[j] == 0.0) {
        out.at(i, j) = 0.0;
      } else {
        out.at(i, j) = k.dot(va.row(i), vb.row(j), va.cols) / (na[i] * nb[j]);
      }
    }
  }
  const bool rq = nodes_[a.id].requires_grad || nodes_[b.id].requires_grad;
  const auto ai = a.id, bi = b.id;
  const auto self = static_cast<std::int32_t>(nodes_.size());
  return push(std::move(out), rq,
              [ai, bi, self, na = std::move(na), nb = std::move(nb)](Tape& t) {
                const Mat& g = t.nodes_[self].grad;
                const Mat& s = t.nodes_[self].value;
                const Mat& va = t.val(ai);
                const Mat& vb = t.val(bi);
                const auto& k = kernels::active();
                const std::size_t d = va.cols;
                const bool need_a = t.nodes_[ai].requires_grad;
                const bool need_b = t.nodes_[bi].requires_grad;
                for (std::size_t i = 0; i < va.rows; ++i) {
                  for (std::size_t j = 0; j < vb.rows; ++j) {
                    const double gij = g.at(i, j);
                    if (gij == 0.0 || na[i] == 0.0 || nb[j] == 0.0) continue;
                    const double inv = 1.0 / (na[i] * nb[j]);
                    const double sij = s.at(i, j);
                    if (need_a) {
                      double* dai = t.grad_buf(ai).row(i);
                      k.axpy(gij * inv, vb.row(j), dai, d);
                      k.axpy(-gij * sij / (na[i] * na[i]), va.row(i), dai, d);
                    }
                    if (need_b) {
                      double* dbj = t.grad_buf(bi).row(j);
                      k.axpy(gij * inv, va.row(i), dbj, d);
                      k.axpy(-gij * sij / (nb[j] * nb[j]), vb.row(j), dbj, d);
                    }
                  }
                }
              },
              "cosine_rows");
}

Tensor Tape::bce_loss(Tensor pred, const Mat& targets) {
  check(pred);
  const Mat& p = val(pred.id);
  if (!p.same_shape(targets)) throw ValidationError("bce_loss: prediction/target shape mismatch");
  for (double y : targets.v) {
    if (y != 0.0 && y != 1.0) throw ValidationError("bce_loss: targets must be 0 or 1");
  }
  const double n = static_cast<double>(p.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double ph = std::min(1.0 - kBceClamp, std::max(kBceClamp, p.v[i]));
    loss -= targets.v[i] * std::log(ph) + (1.0 - targets.v[i]) * std::log(1.0 - ph);
  }
  Mat out(1, 1, loss / n);
  const bool rq = nodes_[pred.id].requires_grad;
  const auto pi = pred.id;
  const auto self = static_cast<std::int32_t>(nodes_.size());
  return push(std::move(out), rq, [pi, self, targets, n](Tape& t) {
    const double g = t.nodes_[self].grad.v[0];
    const Mat& p = t.val(pi);
    Mat& dp = t.grad_buf(pi);
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (p.v[i] < kBceClamp || p.v[i] > 1.0 - kBceClamp) continue;  // clamped: flat
      dp.v[i] += g * (p.v[i] - targets.v[i]) / (p.v[i] * (1.0 - p.v[i]) * n);
    }
  }, "bce_loss");
}

void AdamState::init(const std::vector<Mat*>& params) {
  m.clear();
  v.clear();
  step = 0;
  for (const Mat* p : params) {
    m.emplace_back(p->rows, p->cols);
    v.emplace_back(p->rows, p->cols);
  }
}

void adam_step(const std::vector<Mat*>& params, const std::vector<const Mat*>& grads,
               AdamState& state, const AdamConfig& cfg) {
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    throw ValidationError("adam_step: parameter/gradient/state size mismatch");
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t t = 0; t < params.size(); ++t) {
    Mat& p = *params[t];
    const Mat& g = *grads[t];
    if (!p.same_shape(g)) throw ValidationError("adam_step: gradient shape mismatch");
    Mat& m = state.m[t];
    Mat& v = state.v[t];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m.v[i] = cfg.beta1 * m.v[i] + (1.0 - cfg.beta1) * g.v[i];
      v.v[i] = cfg.beta2 * v.v[i] + (1.0 - cfg.beta2) * g.v[i] * g.v[i];
      const double mhat = m.v[i] / bc1;
      const double vhat = v.v[i] / bc2;
      p.v[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

double global_norm(const std::vector<const Mat*>& grads) {
  double total = 0.0;
  for (const Mat* g : grads) total += kernels::active().l2sq(g->v.data(), g->size());
  return std::sqrt(total);
}

void clip_global_norm(const std::vector<Mat*>& grads, double max_norm) {
  if (max_norm <= 0.0) return;
  std::vector<const Mat*> view(grads.begin(), grads.end());
  const double norm = global_norm(view);
  if (norm <= max_norm) return;
  const double s = max_norm / norm;
  for (Mat* g : grads) kernels::active().scale(s, g->v.data(), g->v.data(), g->size());
}

}  // namespace refi::ad
