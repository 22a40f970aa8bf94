#pragma once

#include <functional>
#include <vector>

#include "kelp/optim.hpp"
#include "kelp/tensor.hpp"

namespace kelp {

// Central-difference derivative estimates for a scalar-valued function of a
// single tensor: g[i] = (f(x + h e_i) - f(x - h e_i)) / 2h. The step is
// scaled per coordinate by max(1, |x_i|). f must rebuild its graph on every
// call; x is restored bit-exactly afterwards.
std::vector<double> finite_diff_grad(const std::function<double(const Tensor&)>& f,
                                     Tensor& x, double h = 1e-5);

struct GradCheckStats {
  double max_rel_err = 0.0;
  std::size_t checked = 0;
};

// Spot-checks analytic gradients against central differences on
// `coords_per_param` randomly chosen coordinates of every registered
// parameter. `build_loss` must construct the full graph from current
// parameter values and return its scalar root; the analytic pass runs
// backward() on that root once, then every probe re-evaluates the value.
// rel err = |ad - fd| / max(|ad|, |fd|, floor).
GradCheckStats check_gradients(const std::function<Tensor()>& build_loss,
                               ParamRegistry& params, Rng& rng,
                               std::size_t coords_per_param = 4,
                               double h = 1e-5, double floor = 1e-6);

}  // namespace kelp
