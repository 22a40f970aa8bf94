#include "kelp/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace kelp {

std::vector<double> finite_diff_grad(
    const std::function<double(const Tensor&)>& f, Tensor& x, double h) {
  std::vector<double> out(x.size());
  auto& xv = x.values_mut();
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const double orig = xv[i];
    const double hi = h * std::max(1.0, std::abs(orig));
    xv[i] = orig + hi;
    const double fp = f(x);
    xv[i] = orig - hi;
    const double fm = f(x);
    xv[i] = orig;
    out[i] = (fp - fm) / (2.0 * hi);
  }
  return out;
}

GradCheckStats check_gradients(const std::function<Tensor()>& build_loss,
                               ParamRegistry& params, Rng& rng,
                               std::size_t coords_per_param, double h,
                               double floor) {
  params.zero_grads();
  build_loss().backward();
  // Snapshot every analytic gradient before probing perturbs anything.
  std::map<std::string, std::vector<double>> analytic;
  for (const auto& [name, t] : params.items()) {
    if (!t.requires_grad()) continue;
    analytic[name] =
        t.has_grad() ? t.grad() : std::vector<double>(t.size(), 0.0);
  }
  params.zero_grads();

  GradCheckStats stats;
  for (auto& [name, t] : params.items_mut()) {
    if (!t.requires_grad()) continue;
    const auto& ag = analytic[name];
    auto& xv = t.values_mut();
    const std::size_t n = xv.size();
    const std::size_t picks = std::min(coords_per_param, n);
    for (std::size_t c = 0; c < picks; ++c) {
      const std::size_t i = static_cast<std::size_t>(rng.below(n));
      const double orig = xv[i];
      const double hi = h * std::max(1.0, std::abs(orig));
      xv[i] = orig + hi;
      const double fp = build_loss().value();
      xv[i] = orig - hi;
      const double fm = build_loss().value();
      xv[i] = orig;
      const double fd = (fp - fm) / (2.0 * hi);
      const double ad = ag[i];
      const double rel =
          std::abs(ad - fd) / std::max({std::abs(ad), std::abs(fd), floor});
      stats.max_rel_err = std::max(stats.max_rel_err, rel);
      stats.checked += 1;
    }
  }
  return stats;
}

}  // namespace kelp
