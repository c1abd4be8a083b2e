#include "cost/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "cost/rng.hpp"

namespace cost {

std::vector<double> finite_diff_grad(const std::function<double(std::span<const double>)>& f,
                                     std::span<const double> theta, std::span<const i64> probes,
                                     double step) {
  check(step > 0.0, "finite_diff_grad: step must be positive");
  std::vector<double> work(theta.begin(), theta.end());
  std::vector<double> out;
  out.reserve(probes.size());
  for (i64 idx : probes) {
    check(idx >= 0 && idx < static_cast<i64>(theta.size()), "finite_diff_grad: probe out of range");
    const double orig = work[static_cast<size_t>(idx)];
    work[static_cast<size_t>(idx)] = orig + step;
    const double fp = f(work);
    work[static_cast<size_t>(idx)] = orig - step;
    const double fm = f(work);
    work[static_cast<size_t>(idx)] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw std::runtime_error("finite_diff_grad: non-finite function evaluation");
    out.push_back((fp - fm) / (2.0 * step));
  }
  return out;
}

GradCheckReport gradcheck(const std::function<double(std::span<const double>)>& f,
                          std::span<const double> theta, std::span<const double> analytic_grad,
                          i64 n_probes, double step, u64 seed) {
  check(theta.size() == analytic_grad.size(), "gradcheck: gradient length mismatch");
  check(!theta.empty(), "gradcheck: empty parameter vector");

  std::vector<i64> probes;
  const i64 len = static_cast<i64>(theta.size());
  if (n_probes >= len) {
    probes.resize(static_cast<size_t>(len));
    std::iota(probes.begin(), probes.end(), 0);
  } else {
    std::vector<i64> all(static_cast<size_t>(len));
    std::iota(all.begin(), all.end(), 0);
    Rng rng(seed);
    rng.shuffle(all);
    probes.assign(all.begin(), all.begin() + n_probes);
    std::sort(probes.begin(), probes.end());
  }

  const std::vector<double> fd = finite_diff_grad(f, theta, probes, step);
  GradCheckReport report;
  report.step = step;
  report.probed_coordinates = static_cast<i64>(probes.size());
  for (size_t i = 0; i < probes.size(); ++i) {
    const double a = analytic_grad[static_cast<size_t>(probes[i])];
    const double b = fd[i];
    const double abs_err = std::abs(a - b);
    const double rel = abs_err / std::max({std::abs(a), std::abs(b), 1e-6});
    report.max_abs_error = std::max(report.max_abs_error, abs_err);
    report.max_rel_error = std::max(report.max_rel_error, rel);
  }
  return report;
}

}  // namespace cost
