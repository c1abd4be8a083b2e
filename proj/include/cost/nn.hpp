#pragma once

#include <span>

#include "cost/tensor.hpp"

namespace cost {

/// out = x * w + b, with x rows x d_in, w d_in x d_out.
Matrix linear(const Matrix& x, const Matrix& w, std::span<const double> b);

struct LinearGrads {
  Matrix dx;
  Matrix dw;
  std::vector<double> db;
};
LinearGrads linear_backward(const Matrix& x, const Matrix& w, const Matrix& dy);

/// Row-wise softmax with max subtraction.
Matrix softmax_rows(const Matrix& m);
/// dx given softmax output y and upstream dy.
Matrix softmax_rows_backward(const Matrix& y, const Matrix& dy);

Tensor relu(const Tensor& x);
/// Uses the forward output for masking (y > 0 iff x > 0); slope at 0 is 0.
Tensor relu_backward(const Tensor& y, const Tensor& dy);

/// Per-channel batch normalization over (n,t,h,w).
struct BatchNorm {
  i64 channels = 0;
  double eps = 1e-5;
  double momentum = 0.9;  // running <- momentum*running + (1-momentum)*batch
  std::vector<double> gamma, beta, running_mean, running_var;

  BatchNorm() = default;
  explicit BatchNorm(i64 c)
      : channels(c), gamma(c, 1.0), beta(c, 0.0), running_mean(c, 0.0), running_var(c, 1.0) {}
};

struct BnCache {
  std::vector<double> mean, inv_std;  // per channel, as used by the forward
};

/// Train mode normalizes with batch statistics (biased variance) and, when
/// update_running is set, folds them into the running stats. Eval mode uses
/// the running stats and never mutates.
Tensor batch_norm_forward(BatchNorm& bn, const Tensor& x, Mode mode, bool update_running,
                          BnCache* cache);

struct BnGrads {
  Tensor dx;
  std::vector<double> dgamma, dbeta;
};
BnGrads batch_norm_backward(const BatchNorm& bn, const BnCache& cache, const Tensor& x,
                            const Tensor& dy, Mode mode);

// elementwise helpers
Tensor add(const Tensor& a, const Tensor& b);
void add_inplace(Tensor& a, const Tensor& b);
void scale_inplace(Tensor& a, double s);

}  // namespace cost
