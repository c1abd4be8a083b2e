#pragma once

#include <filesystem>

#include "cost/network.hpp"

namespace cost {

// closed-form per-output-element factors (input/output channels excluded)
inline i64 cost_ma_factor_naive(i64 k) { return 3 * k * k; }
inline i64 cost_ma_factor_optimized(i64 k) { return 3 * k * k - 3 * k + 1; }
inline i64 c3d_ma_factor(i64 k) { return k * k * k; }
inline i64 cost_receptive_field_formula(i64 k) { return 3 * k * k - 3 * k + 1; }

/// Equivalent cubic kernel of the fused three-view operation:
/// K[o,i,dt,dh,dw] = a[o,0]*w[o,i,dh,dw]*[dt==mid] + a[o,1]*w[o,i,dt,dw]*[dh==mid]
///                 + a[o,2]*w[o,i,dt,dh]*[dw==mid], overlaps on the center
/// column summing. The 8 corner blocks are structurally zero. conv3d with
/// this kernel reproduces fuse_views(conv_three_views(x)) exactly.
ConvKernel cost_to_masked_c3d_kernel(const SharedKernel& shared, const Matrix& alpha);

/// Distinct input voxels (t,h,w cells) influencing one centered output voxel,
/// measured by back-propagating a delta through the op built with strictly
/// positive random kernels (so zeros are structural, not cancellations).
/// C2D: k^2. C3D_333: k^3. C3D_311: 3k^2 (temporal conv then spatial conv).
/// CoST: 3k^2-3k+1.
i64 receptive_field_count(UnitKind kind, i64 k, u64 seed = 7);

/// Parameter and multiply-add accounting, kernel MACs only; BN rows carry
/// parameters but no MACs, fusion and coefficient-predictor work is reported
/// in separate rows.
struct OpCostRow {
  std::string layer;
  std::string kind;
  i64 params = 0;
  i64 ma_naive = 0;
  i64 ma_opt = 0;
};

struct OpCostReport {
  std::vector<OpCostRow> rows;

  i64 total_params() const;
  i64 total_ma_naive() const;
  i64 total_ma_opt() const;
  std::string to_csv() const;
  std::string to_json_string() const;
  void write_csv(const std::filesystem::path& path) const;
  void write_json(const std::filesystem::path& path) const;
};

/// Per-sample counts for one unit at the given input feature-map shape
/// (n is ignored). Rows are ordered conv1, bn1, middle..., bn2, conv3, bn3,
/// proj, proj_bn.
OpCostReport count_cost_unit(const ResidualUnit& unit, Shape5 input_shape,
                             const std::string& prefix = "");

/// Whole-network report for the configured input shape (per sample).
OpCostReport count_cost(const Network& net);

}  // namespace cost
