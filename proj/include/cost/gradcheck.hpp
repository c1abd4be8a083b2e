#pragma once

#include <functional>
#include <span>
#include <vector>

#include "cost/tensor.hpp"

namespace cost {

struct GradCheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  i64 probed_coordinates = 0;
  double step = 0.0;

  bool within(double rel_tol) const { return max_rel_error <= rel_tol; }
};

/// Central differences (f(th+h e_i) - f(th-h e_i)) / 2h at the probed
/// coordinates. f must be deterministic; non-finite evaluations throw.
std::vector<double> finite_diff_grad(const std::function<double(std::span<const double>)>& f,
                                     std::span<const double> theta, std::span<const i64> probes,
                                     double step);

/// Picks n_probes distinct random coordinates (all of them when n_probes >=
/// len) and compares finite differences against the analytic gradient.
/// Relative error uses max(|fd|, |analytic|, 1e-6) as denominator so
/// near-zero gradients are judged on absolute error.
GradCheckReport gradcheck(const std::function<double(std::span<const double>)>& f,
                          std::span<const double> theta, std::span<const double> analytic_grad,
                          i64 n_probes, double step, u64 seed);

}  // namespace cost
