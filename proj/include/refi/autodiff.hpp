#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "refi/mat.hpp"

namespace refi::ad {

struct Tensor {
  std::int32_t id = -1;
};

// Define-by-run reverse-mode tape over Mat. A tape is built fresh per
// episode, used by one thread, and dropped. Creation order is topological
// order, so backward() walks nodes in reverse id order and accumulates into
// parents; a tensor used in several places receives the sum over all paths.
//
// Every op checks its output for NaN/Inf (configurable) and throws
// NumericError on failure. Element-wise binaries broadcast a (1 x n) or
// (1 x 1) operand across rows of an (m x n) operand, on either side.
class Tape {
 public:
  Tensor leaf(Mat value, bool requires_grad = false);
  Tensor constant(Mat value) { return leaf(std::move(value), false); }
  Tensor scalar(double v) { return constant(Mat(1, 1, v)); }

  Tensor matmul(Tensor a, Tensor b);     // (m,k)*(k,n)
  Tensor matmul_nt(Tensor a, Tensor b);  // (m,d)*(p,d)^T -> (m,p)
  Tensor add(Tensor a, Tensor b);
  Tensor hadamard(Tensor a, Tensor b);
  Tensor div(Tensor a, Tensor b);        // denominator may broadcast
  Tensor scalar_mul(Tensor a, double c);
  Tensor relu(Tensor a);
  Tensor sigmoid(Tensor a);

  // Row-wise softmax with an optional additive mask of {0, -inf} entries;
  // -inf positions are excluded from the max and come out exactly 0.
  Tensor softmax_rows(Tensor a, const Mat* mask = nullptr);

  Tensor layer_norm_rows(Tensor a);      // (x - mean) / sqrt(var + 1e-5), per row
  Tensor mean_rows(Tensor a);            // column means -> (1, c)
  Tensor var_rows(Tensor a);             // population column variances -> (1, c)
  Tensor l2_norm_rows(Tensor a);         // row norms -> (r, 1)

  Tensor concat_rows(std::span<const Tensor> parts);
  Tensor slice_rows(Tensor a, std::size_t begin, std::size_t count);
  Tensor concat_cols(std::span<const Tensor> parts);
  Tensor slice_cols(Tensor a, std::size_t begin, std::size_t count);
  Tensor broadcast_row(Tensor a, std::size_t rows);  // (1,n) -> (rows,n)

  // Pairwise row cosines: (m,d) x (p,d) -> (m,p). A zero-norm row yields 0
  // similarity and no gradient through that pair.
  Tensor cosine_rows(Tensor a, Tensor b);

  // Mean binary cross-entropy against constant 0/1 targets; predictions are
  // clamped to [1e-12, 1 - 1e-12]. Returns a scalar.
  Tensor bce_loss(Tensor pred, const Mat& targets);

  // Populates grads of every requires_grad tensor reachable from loss.
  // Throws if loss is not 1x1 or if called twice on the same tape.
  void backward(Tensor loss);

  const Mat& value(Tensor t) const;
  const Mat& grad(Tensor t);  // zeros for unreached requires_grad tensors
  bool requires_grad(Tensor t) const;
  std::size_t size() const { return nodes_.size(); }
  void set_check_finite(bool on) { check_finite_ = on; }

 private:
  struct Node {
    Mat value;
    Mat grad;  // empty until reached in backward
    bool requires_grad = false;
    std::function<void(Tape&)> backward_fn;
  };

  std::vector<Node> nodes_;
  bool backward_done_ = false;
  bool check_finite_ = true;

  Tensor push(Mat value, bool requires_grad, std::function<void(Tape&)> fn, const char* op);
  Mat& grad_buf(std::int32_t id);
  const Mat& val(std::int32_t id) const { return nodes_[id].value; }
  void check(Tensor t) const;
};

// Bias-corrected Adam over plain parameter matrices.
struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<Mat> m, v;
  std::int64_t step = 0;
  void init(const std::vector<Mat*>& params);
};

void adam_step(const std::vector<Mat*>& params, const std::vector<const Mat*>& grads,
               AdamState& state, const AdamConfig& cfg);

double global_norm(const std::vector<const Mat*>& grads);

// Scales grads in place so the global norm is at most max_norm (no-op when
// max_norm <= 0 or the norm is already below it).
void clip_global_norm(const std::vector<Mat*>& grads, double max_norm);

}  // namespace refi::ad
