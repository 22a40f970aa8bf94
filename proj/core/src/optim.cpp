#include "kelp/optim.hpp"

#include <cmath>

namespace kelp {

Tensor& ParamRegistry::insert(const std::string& name, Tensor t) {
  auto [it, fresh] = params_.emplace(name, std::move(t));
  if (!fresh) {
    throw Error("parameter '" + name + "' registered twice");
  }
  return it->second;
}

Tensor& ParamRegistry::create(const std::string& name, Shape shape, Rng& rng,
                              double stddev) {
  return insert(name, Tensor::randn(std::move(shape), rng, stddev, true));
}

Tensor& ParamRegistry::create_zeros(const std::string& name, Shape shape) {
  return insert(name, Tensor::zeros(std::move(shape), true));
}

Tensor& ParamRegistry::create_full(const std::string& name, Shape shape,
                                   double value) {
  return insert(name, Tensor::full(std::move(shape), value, true));
}

Tensor& ParamRegistry::get(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw LookupError("no parameter named '" + name + "'");
  return it->second;
}

const Tensor& ParamRegistry::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw LookupError("no parameter named '" + name + "'");
  return it->second;
}

bool ParamRegistry::contains(const std::string& name) const {
  return params_.count(name) != 0;
}

std::size_t ParamRegistry::total_size() const {
  std::size_t n = 0;
  for (const auto& [name, t] : params_) n += t.size();
  return n;
}

void ParamRegistry::zero_grads() {
  for (auto& [name, t] : params_) t.zero_grad();
}

void adam_step(ParamRegistry& params, AdamState& state, double lr,
               double weight_decay) {
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (auto& [name, t] : params.items_mut()) {
    if (!t.has_grad()) continue;
    auto& m = state.m[name];
    auto& v = state.v[name];
    if (m.size() != t.size()) m.assign(t.size(), 0.0);
    if (v.size() != t.size()) v.assign(t.size(), 0.0);
    const auto& g = t.grad();
    auto& p = t.values_mut();
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p[i] -= lr * (mhat / (std::sqrt(vhat) + state.epsilon) +
                    weight_decay * p[i]);
    }
  }
}

double global_grad_norm(const ParamRegistry& params) {
  double sq = 0.0;
  for (const auto& [name, t] : params.items()) {
    if (!t.has_grad()) continue;
    for (double g : t.grad()) sq += g * g;
  }
  return std::sqrt(sq);
}

double clip_global_grad_norm(ParamRegistry& params, double max_norm) {
  const double norm = global_grad_norm(params);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (auto& [name, t] : params.items_mut()) {
      if (!t.has_grad()) continue;
      for (double& g : t.grad_mut()) g *= s;
    }
  }
  return norm;
}

}  // namespace kelp
