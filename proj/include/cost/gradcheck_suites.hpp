#pragma once

#include <string>
#include <vector>

#include "cost/gradcheck.hpp"

namespace cost {

struct SuiteResult {
  std::string name;
  GradCheckReport report;
  double tolerance = 1e-4;
  bool pass = false;
};

/// Finite-difference checks for every primitive with a hand-written backward
/// pass. Each entry probes >= 100 random coordinates at h=1e-5 (64-bit).
/// corrupt_index >= 0 shifts the first case's analytic gradient — a negative
/// control that must make the suite fail.
std::vector<SuiteResult> gradcheck_ops(u64 seed, int corrupt_index = -1);

/// All residual unit kinds, plus the unshared CoST(b) unit and a strided one.
std::vector<SuiteResult> gradcheck_units(u64 seed);

/// Whole micro network against central differences; tolerance 1e-3 (looser
/// than per-op because errors compound with depth).
std::vector<SuiteResult> gradcheck_network(u64 seed);

bool all_pass(const std::vector<SuiteResult>& results);

}  // namespace cost
