#pragma once

#include <functional>
#include <optional>
#include <string>

#include "cost/cost_op.hpp"
#include "cost/nn.hpp"
#include "cost/rng.hpp"

namespace cost {

enum class UnitKind { C2D, C3D_311, C3D_333, CoST_a, CoST_b };
const char* unit_kind_name(UnitKind k);
UnitKind unit_kind_from_string(const std::string& s);

// parameter slots: value plus matching gradient buffer
struct ConvParam {
  ConvKernel w, g;
  void init(i64 co, i64 ci, i64 kt, i64 kh, i64 kw, Rng& rng);
};
struct BnParam {
  BatchNorm bn;
  std::vector<double> dgamma, dbeta;
  void init(i64 c);
};
struct SharedKernelParam {
  SharedKernel w, g;
  void init(i64 co, i64 ci, i64 k, Rng& rng);
};
struct MatrixParam {
  Matrix w, g;
};
struct VecParam {
  std::vector<double> w, g;
};

/// Name, storage and decay policy of one learnable tensor.
struct ParamRef {
  std::string name;
  double* value;
  double* grad;
  i64 len;
  bool decay;  // weight decay applies (conv / linear weights only)
  std::vector<i64> dims;
};
using ParamVisitor = std::function<void(const ParamRef&)>;

/// Named non-learnable state (BN running stats).
struct StateRef {
  std::string name;
  double* value;
  i64 len;
};
using StateVisitor = std::function<void(const StateRef&)>;

/// Middle operation of a CoST unit: three-view shared conv + learned fusion.
/// share_weights=false keeps an independent k x k bank per view (the
/// decoupled ablation); injection bypasses coefficient learning entirely.
struct CostOp {
  bool variant_b = false;
  bool share_weights = true;
  i64 c_in = 0, c_out = 0, k = 3;

  SharedKernelParam shared;                    // when share_weights
  std::array<SharedKernelParam, 3> per_view;   // when !share_weights
  MatrixParam logits;                          // variant a
  MatrixParam pred_conv1x1, pred_fc_w;         // variant b
  VecParam pred_fc_b;
  std::optional<Matrix> injected;

  struct Cache {
    ViewTriple views;
    std::vector<Matrix> alpha;     // per sample (replicated when constant)
    bool alpha_is_constant = false;
    std::array<Matrix, 3> pooled;  // variant b
    std::array<Matrix, 3> mapped;
  };

  static CostOp make(bool variant_b, i64 c_in, i64 c_out, i64 k, bool share, Rng& rng);

  Tensor forward(const Tensor& x, Stride3 stride, Cache* cache) const;
  /// Accumulates parameter gradients in place; returns dx. Injected
  /// coefficients are treated as constants.
  Tensor backward(const Tensor& x, Stride3 stride, const Cache& cache, const Tensor& dy);

  void inject(const Matrix& alpha, bool raw);
  void clear_injection() { injected.reset(); }

  void visit_params(const std::string& prefix, const ParamVisitor& fn);
  void zero_grads();

 private:
  ViewTriple run_views(const Tensor& x, Stride3 stride) const;
  ThreeViewGrads views_backward(const Tensor& x, Stride3 stride, const ViewTriple& dviews);
};

/// Bottleneck residual unit; the middle op is picked by kind. Spatial stride
/// sits on the middle conv, temporal stride is never used. Shortcut becomes a
/// strided 1x1x1 projection + BN when the shape changes.
struct ResidualUnit {
  UnitKind kind = UnitKind::C2D;
  i64 c_in = 0, c_mid = 0, c_out = 0, k = 3;
  Stride3 stride{1, 1, 1};

  ConvParam conv1;  // (3,1,1) for C3D_311, else 1x1x1
  BnParam bn1;
  ConvParam mid;  // C2D: (1,k,k); C3D_333: (k,k,k)
  std::optional<CostOp> cost;
  BnParam bn2;
  ConvParam conv3;
  BnParam bn3;
  bool has_proj = false;
  ConvParam proj;
  BnParam proj_bn;

  struct Cache {
    Tensor x;
    Tensor c1_out;
    BnCache bn1c;
    Tensor r1;
    CostOp::Cache costc;
    Tensor mid_out;
    BnCache bn2c;
    Tensor r2;
    Tensor c3_out;
    BnCache bn3c;
    Tensor proj_out;
    BnCache projc;
    Tensor y;
  };

  static ResidualUnit make(UnitKind kind, i64 c_in, i64 c_mid, i64 c_out, Stride3 stride,
                           u64 seed, i64 k = 3, bool share_weights = true,
                           bool zero_final_gamma = true);
  static ResidualUnit make(UnitKind kind, i64 c_in, i64 c_mid, i64 c_out, Stride3 stride,
                           Rng& rng, i64 k = 3, bool share_weights = true,
                           bool zero_final_gamma = true);

  Tensor forward(const Tensor& x, Mode mode, bool update_running, Cache* cache);
  Tensor backward(const Cache& cache, const Tensor& dy);

  void visit_params(const std::string& prefix, const ParamVisitor& fn);
  void visit_state(const std::string& prefix, const StateVisitor& fn);
  void zero_grads();
  i64 param_count();
};

/// Randomly perturbs every parameter (including zero-initialized BN gammas)
/// so gradient checks run at a generic point, away from ReLU kinks.
void perturb_params(const std::function<void(const ParamVisitor&)>& visit, Rng& rng,
                    double scale);

}  // namespace cost
