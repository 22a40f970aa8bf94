#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace kelp {

struct GradSuitePathResult {
  std::string path;  // which loss was differentiated
  double max_rel_err = 0;
  std::size_t checked = 0;  // finite-difference probes taken
};

struct GradSuiteResult {
  std::vector<GradSuitePathResult> paths;
  double max_rel_err = 0;

  bool pass(double tolerance = 1e-4) const { return max_rel_err < tolerance; }
};

// Differentiates every training loss (plain token prediction, entity- and
// relation-stage fact prediction, both replacement heads) on a small fixture
// sentence with a freshly initialised width-64 two-layer encoder per seed,
// comparing backward() against central finite differences on sampled
// coordinates of every parameter.
GradSuiteResult run_gradient_suite(std::uint64_t seed,
                                   std::size_t seeds_per_path,
                                   std::size_t coords_per_param,
                                   double fd_step = 1e-5);

}  // namespace kelp
