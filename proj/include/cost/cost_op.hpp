#pragma once

#include <array>
#include <optional>
#include <vector>

#include "cost/tensor.hpp"

namespace cost {

/// One k x k kernel bank applied along all three views of the video volume.
/// Layout (c_out, c_in, k, k); view kernels are materialized by inserting a
/// singleton axis, so the same 9 (for k=3) numbers serve H-W, T-W and T-H.
struct SharedKernel {
  i64 c_out = 0, c_in = 0, k = 3;
  std::vector<double> w;

  SharedKernel() = default;
  SharedKernel(i64 co, i64 ci, i64 kk, double fill = 0.0)
      : c_out(co), c_in(ci), k(kk), w(static_cast<size_t>(co * ci * kk * kk), fill) {
    check(kk >= 1 && kk % 2 == 1, "SharedKernel: k must be odd");
  }

  i64 size() const { return c_out * c_in * k * k; }
  double& at(i64 o, i64 i, i64 a, i64 b) {
    return w[static_cast<size_t>(((o * c_in + i) * k + a) * k + b)];
  }
  double at(i64 o, i64 i, i64 a, i64 b) const {
    return w[static_cast<size_t>(((o * c_in + i) * k + a) * k + b)];
  }
};

/// View order is fixed everywhere: (hw, tw, th).
enum class View : int { HW = 0, TW = 1, TH = 2 };
inline constexpr std::array<View, 3> kViews = {View::HW, View::TW, View::TH};
const char* view_name(View v);

/// (1,k,k) for HW, (k,1,k) for TW, (k,k,1) for TH. For TW and TH the first
/// free kernel axis runs along T.
ConvKernel materialize_view(const SharedKernel& k, View v);
/// Folds a materialized view-kernel gradient back onto the k x k bank.
void accumulate_view_grad(const ConvKernel& dview, View v, SharedKernel& acc);

struct ViewTriple {
  Tensor hw, tw, th;
  Tensor& operator[](View v) { return v == View::HW ? hw : v == View::TW ? tw : th; }
  const Tensor& operator[](View v) const { return v == View::HW ? hw : v == View::TW ? tw : th; }
};

/// The three 2D convolutions of the operation, same padding, shared weights.
/// Strides apply to the output grid (temporal stride is always 1 here).
ViewTriple conv_three_views(const Tensor& x, const SharedKernel& kernel, Stride3 stride = {});

struct ThreeViewGrads {
  Tensor dx;
  SharedKernel dkernel;  // sum of the three per-view gradients
};
ThreeViewGrads conv_three_views_backward(const Tensor& x, const SharedKernel& kernel,
                                         Stride3 stride, const ViewTriple& dviews);

/// Per-channel fusion coefficients, rows row-stochastic, columns (hw, tw, th).
struct ViewCoefficients {
  Matrix values;  // c_out x 3

  static ViewCoefficients uniform(i64 c_out) { return {Matrix(c_out, 3, 1.0 / 3.0)}; }
  /// One row repeated; rows need not be checked here (raw injection allowed).
  static ViewCoefficients constant_rows(i64 c_out, std::array<double, 3> row);
  bool row_stochastic(double tol = 1e-6) const;
};

/// out[...,c] = a[c,0]*hw + a[c,1]*tw + a[c,2]*th
Tensor fuse_views(const ViewTriple& views, const Matrix& alpha);
struct FuseGrads {
  ViewTriple dviews;
  Matrix dalpha;
};
FuseGrads fuse_views_backward(const ViewTriple& views, const Matrix& alpha, const Tensor& dy);

/// Sample-dependent fusion: alpha[n] is a c_out x 3 matrix per sample.
Tensor fuse_views_per_sample(const ViewTriple& views, const std::vector<Matrix>& alpha);
struct FusePerSampleGrads {
  ViewTriple dviews;
  std::vector<Matrix> dalpha;
};
FusePerSampleGrads fuse_views_per_sample_backward(const ViewTriple& views,
                                                  const std::vector<Matrix>& alpha,
                                                  const Tensor& dy);

// ---------------------------------------------------------------------------
// CoST(a): coefficients are model parameters (softmaxed logits).

struct CostACache {
  ViewTriple views;
  Matrix alpha;
};

struct CostAResult {
  Tensor y;
  Matrix alpha;
};
CostAResult cost_a_forward(const Tensor& x, const SharedKernel& kernel, const Matrix& logits,
                           Stride3 stride = {}, CostACache* cache = nullptr);

struct CostAGrads {
  Tensor dx;
  SharedKernel dkernel;
  Matrix dlogits;
};
CostAGrads cost_a_backward(const Tensor& x, const SharedKernel& kernel, Stride3 stride,
                           const CostACache& cache, const Tensor& dy);

// ---------------------------------------------------------------------------
// CoST(b): coefficients predicted from the view features themselves.

/// Predictor: global max pool each view -> shared c x c linear map -> the
/// three results form a c x 3 matrix -> shared 3->3 fc per row -> softmax.
struct CoeffPredictorParams {
  Matrix conv1x1;            // c_out x c_out, shared across views, no bias
  Matrix fc_w;               // 3 x 3, applied to each row
  std::array<double, 3> fc_b{};

  static CoeffPredictorParams init(i64 c_out);
};

struct CostBCache {
  ViewTriple views;
  std::array<Matrix, 3> pooled;  // n x c per view
  std::array<Matrix, 3> mapped;  // pooled * conv1x1
  std::vector<Matrix> scores;    // per sample c x 3, pre-softmax
  std::vector<Matrix> alpha;     // per sample c x 3
};

struct CostBResult {
  Tensor y;
  std::vector<Matrix> alpha;  // per sample
};
CostBResult cost_b_forward(const Tensor& x, const SharedKernel& kernel,
                           const CoeffPredictorParams& pred, Stride3 stride = {},
                           CostBCache* cache = nullptr);

struct CostBGrads {
  Tensor dx;
  SharedKernel dkernel;
  Matrix dconv1x1;
  Matrix dfc_w;
  std::array<double, 3> dfc_b{};
};
CostBGrads cost_b_backward(const Tensor& x, const SharedKernel& kernel,
                           const CoeffPredictorParams& pred, Stride3 stride,
                           const CostBCache& cache, const Tensor& dy);

// ---------------------------------------------------------------------------
// Optimized fused path: iterates only the 3k^2-3k+1 distinct taps of the
// equivalent masked cubic kernel instead of running three full convolutions.
// Unit stride, same padding. Must agree with fuse(conv_three_views) <= 1e-12.
Tensor cost_fused_forward_optimized(const Tensor& x, const SharedKernel& kernel,
                                    const Matrix& alpha);

}  // namespace cost
