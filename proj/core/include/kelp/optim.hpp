#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "kelp/tensor.hpp"

namespace kelp {

// Named collection of trainable tensors. Iteration order is the sorted name
// order, which keeps every update, norm, and checkpoint deterministic.
class ParamRegistry {
 public:
  Tensor& create(const std::string& name, Shape shape, Rng& rng,
                 double stddev);
  Tensor& create_zeros(const std::string& name, Shape shape);
  Tensor& create_full(const std::string& name, Shape shape, double value);

  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const;

  const std::map<std::string, Tensor>& items() const { return params_; }
  std::map<std::string, Tensor>& items_mut() { return params_; }
  std::size_t total_size() const;
  void zero_grads();

 private:
  Tensor& insert(const std::string& name, Tensor t);
  std::map<std::string, Tensor> params_;
};

// First/second moment accumulators plus the shared step counter.
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step = 0;
  std::map<std::string, std::vector<double>> m;
  std::map<std::string, std::vector<double>> v;
};

// One bias-corrected moment update over every parameter with a gradient.
// Weight decay is decoupled: p -= lr * wd * p, applied next to the moment
// step rather than folded into the gradient.
void adam_step(ParamRegistry& params, AdamState& state, double lr,
               double weight_decay);

// Scales all gradients so their global L2 norm is at most max_norm.
// Returns the norm before clipping.
double clip_global_grad_norm(ParamRegistry& params, double max_norm);

double global_grad_norm(const ParamRegistry& params);

}  // namespace kelp
