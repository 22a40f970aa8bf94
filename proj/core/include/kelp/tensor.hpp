#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "kelp/errors.hpp"
#include "kelp/rng.hpp"

namespace kelp {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);

namespace detail {

// One reverse-mode graph node. Ops allocate a fresh node per result; leaves
// (parameters, inputs) have no parents. grad stays empty until a backward
// pass reaches the node.
struct Node {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  std::size_t size() const { return values.size(); }
  void ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
  }
};

}  // namespace detail

// Value-semantics handle to a shared graph node. Copying a Tensor aliases the
// node; ops build new nodes wired to their operands. All storage is 64-bit
// float, row-major.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double value);
  // Gaussian init, mean 0. The conventional parameter initialiser.
  static Tensor randn(Shape shape, Rng& rng, double stddev,
                      bool requires_grad = true);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const;
  std::size_t dim(std::size_t i) const;

  const std::vector<double>& values() const;
  std::vector<double>& values_mut();
  double value() const;  // scalar tensors only
  double at(std::size_t i) const;
  double at(std::size_t i, std::size_t j) const;

  bool requires_grad() const;
  bool has_grad() const;
  const std::vector<double>& grad() const;
  std::vector<double>& grad_mut();
  void zero_grad();

  // Reverse pass from a scalar root. Every requires_grad node reachable from
  // the root ends up with an allocated (possibly zero) grad.
  void backward() const;

  std::shared_ptr<detail::Node> node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

// ---- operations ------------------------------------------------------

// c[m,n] = a[m,k] . b[k,n]
Tensor matmul(const Tensor& a, const Tensor& b);
// c[m,n] = a[m,k] . b[n,k]^T  (used for vocabulary projections tied to an
// embedding table, which is stored row-per-token)
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);            // same shape
Tensor add_rows(const Tensor& m, const Tensor& row);     // broadcast over rows
Tensor scale(const Tensor& a, double c);

Tensor gelu(const Tensor& x);  // 0.5 x (1 + erf(x / sqrt 2)), exact form
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-12);

Tensor softmax(const Tensor& v);  // rank-1
// Row-wise softmax over columns where key_mask is nonzero; masked columns get
// exact zero weight. key_mask size must equal the column count.
Tensor softmax_rows_masked(const Tensor& m, const std::vector<std::uint8_t>& key_mask);

// Mean over rows of -log softmax(logits[i])[targets[i]].
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets);
// loss = softplus(logit) - label * logit, the stable binary form.
Tensor bce_with_logit(const Tensor& logit, double label);

Tensor mean_pool(const Tensor& rows);                       // [k,h] -> [h]
Tensor span_mean(const Tensor& rows, std::size_t start, std::size_t end);
Tensor as_row(const Tensor& v);                             // [h] -> [1,h]
Tensor as_vec(const Tensor& m);                             // [1,h] -> [h]
Tensor stack_rows(const std::vector<Tensor>& vecs);         // k x [h] -> [k,h]
Tensor concat(const std::vector<Tensor>& vecs);             // rank-1 pieces
Tensor concat_cols(const std::vector<Tensor>& mats);        // share row count
Tensor slice_cols(const Tensor& m, std::size_t c0, std::size_t c1);
Tensor gather_rows(const Tensor& m, const std::vector<int>& idx);
Tensor lookup_rows(const Tensor& table, const std::vector<int>& ids);
Tensor dot(const Tensor& a, const Tensor& b);               // rank-1 -> scalar

Tensor mean_scalars(const std::vector<Tensor>& terms);
// coeffs[0]*terms[0] + coeffs[1]*terms[1] + ... over scalar tensors.
Tensor weighted_sum_scalars(const std::vector<Tensor>& terms,
                            const std::vector<double>& coeffs);

// Inverted dropout; identity when rate == 0. Draws one uniform per element.
Tensor dropout(const Tensor& x, double rate, Rng& rng);

}  // namespace kelp
