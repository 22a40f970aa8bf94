#include "kelp/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace kelp {

namespace {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

std::size_t shape_size(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

NodePtr new_node(Shape shape) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->values.assign(shape_size(n->shape), 0.0);
  return n;
}

// Result node wired to its operands; requires_grad is inherited.
NodePtr op_node(Shape shape, std::vector<NodePtr> parents) {
  auto n = new_node(std::move(shape));
  for (const auto& p : parents) {
    if (p->requires_grad) n->requires_grad = true;
  }
  n->parents = std::move(parents);
  return n;
}

void require_rank(const Tensor& t, std::size_t r, const char* what) {
  if (t.rank() != r) {
    throw DimensionError(std::string(what) + ": expected rank " +
                         std::to_string(r) + ", got shape " +
                         shape_str(t.shape()));
  }
}

constexpr double kInvSqrt2 = 0.70710678118654752440084436210485;
constexpr double kInvSqrt2Pi = 0.39894228040143267793994605993438;

}  // namespace

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << 'x';
    os << s[i];
  }
  os << ']';
  return os.str();
}

// ---- Tensor basics ----------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto n = new_node(std::move(shape));
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto n = new_node(std::move(shape));
  std::fill(n->values.begin(), n->values.end(), value);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::from(Shape shape, std::vector<double> values,
                    bool requires_grad) {
  if (shape_size(shape) != values.size()) {
    throw DimensionError("tensor init: shape " + shape_str(shape) + " needs " +
                         std::to_string(shape_size(shape)) + " values, got " +
                         std::to_string(values.size()));
  }
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->values = std::move(values);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::scalar(double value) { return from({1}, {value}); }

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev, bool requires_grad) {
  auto n = new_node(std::move(shape));
  for (double& v : n->values) v = rng.normal(0.0, stddev);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::size() const { return node_->values.size(); }
std::size_t Tensor::dim(std::size_t i) const { return node_->shape.at(i); }

const std::vector<double>& Tensor::values() const { return node_->values; }
std::vector<double>& Tensor::values_mut() { return node_->values; }

double Tensor::value() const {
  if (size() != 1) {
    throw DimensionError("value(): tensor " + shape_str(shape()) +
                         " is not a scalar");
  }
  return node_->values[0];
}

double Tensor::at(std::size_t i) const { return node_->values.at(i); }

double Tensor::at(std::size_t i, std::size_t j) const {
  require_rank(*this, 2, "at(i,j)");
  if (i >= dim(0) || j >= dim(1)) {
    throw DimensionError("at(i,j): index out of range for " +
                         shape_str(shape()));
  }
  return node_->values[i * dim(1) + j];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }
bool Tensor::has_grad() const {
  return node_ && node_->grad.size() == node_->values.size();
}

const std::vector<double>& Tensor::grad() const {
  if (!has_grad()) {
    throw Error("grad(): no gradient present; run backward() first");
  }
  return node_->grad;
}

std::vector<double>& Tensor::grad_mut() {
  node_->ensure_grad();
  return node_->grad;
}

void Tensor::zero_grad() { node_->grad.clear(); }

void Tensor::backward() const {
  if (size() != 1) {
    throw DimensionError("backward(): root must be scalar, got " +
                         shape_str(shape()));
  }
  // Iterative post-order DFS for the topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  for (Node* n : order) {
    if (n->requires_grad) n->ensure_grad();
  }
  node_->grad.assign(1, 1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && n->requires_grad) n->backward_fn(*n);
  }
}

// ---- ops ---------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul lhs");
  require_rank(b, 2, "matmul rhs");
  const std::size_t m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  if (k != k2) {
    throw DimensionError("matmul: inner dimensions disagree, " +
                         shape_str(a.shape()) + " times " +
                         shape_str(b.shape()));
  }
  auto out = op_node({m, n}, {a.node(), b.node()});
  const double* av = a.values().data();
  const double* bv = b.values().data();
  double* cv = out->values.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = bv + p * n;
      double* crow = cv + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
  if (out->requires_grad) {
    auto an = a.node();
    auto bn = b.node();
    out->backward_fn = [an, bn, m, k, n](Node& self) {
      const double* g = self.grad.data();
      if (an->requires_grad) {
        an->ensure_grad();
        double* da = an->grad.data();
        const double* bv2 = bn->values.data();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) {
            const double gij = g[i * n + j];
            if (gij == 0.0) continue;
            const double* brow = bv2 + j;
            double* darow = da + i * k;
            for (std::size_t p = 0; p < k; ++p)
              darow[p] += gij * brow[p * n];
          }
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        double* db = bn->grad.data();
        const double* av2 = an->values.data();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            const double aip = av2[i * k + p];
            if (aip == 0.0) continue;
            const double* grow = g + i * n;
            double* dbrow = db + p * n;
            for (std::size_t j = 0; j < n; ++j) dbrow[j] += aip * grow[j];
          }
      }
    };
  }
  return Tensor(out);
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul_nt lhs");
  require_rank(b, 2, "matmul_nt rhs");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k) {
    throw DimensionError("matmul_nt: column counts disagree, " +
                         shape_str(a.shape()) + " times " +
                         shape_str(b.shape()) + " transposed");
  }
  auto out = op_node({m, n}, {a.node(), b.node()});
  const double* av = a.values().data();
  const double* bv = b.values().data();
  double* cv = out->values.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double* arow = av + i * k;
      const double* brow = bv + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      cv[i * n + j] = acc;
    }
  if (out->requires_grad) {
    auto an = a.node();
    auto bn = b.node();
    out->backward_fn = [an, bn, m, k, n](Node& self) {
      const double* g = self.grad.data();
      if (an->requires_grad) {
        an->ensure_grad();
        double* da = an->grad.data();
        const double* bv2 = bn->values.data();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) {
            const double gij = g[i * n + j];
            if (gij == 0.0) continue;
            const double* brow = bv2 + j * k;
            double* darow = da + i * k;
            for (std::size_t p = 0; p < k; ++p) darow[p] += gij * brow[p];
          }
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        double* db = bn->grad.data();
        const double* av2 = an->values.data();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) {
            const double gij = g[i * n + j];
            if (gij == 0.0) continue;
            const double* arow = av2 + i * k;
            double* dbrow = db + j * k;
            for (std::size_t p = 0; p < k; ++p) dbrow[p] += gij * arow[p];
          }
      }
    };
  }
  return Tensor(out);
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  auto out = op_node({n, m}, {a.node()});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      out->values[j * m + i] = a.values()[i * n + j];
  if (out->requires_grad) {
    auto an = a.node();
    out->backward_fn = [an, m, n](Node& self) {
      an->ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
          an->grad[i * n + j] += self.grad[j * m + i];
    };
  }
  return Tensor(out);
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("add: shapes disagree, " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
  }
  auto out = op_node(a.shape(), {a.node(), b.node()});
  for (std::size_t i = 0; i < out->size(); ++i)
    out->values[i] = a.values()[i] + b.values()[i];
  if (out->requires_grad) {
    auto an = a.node();
    auto bn = b.node();
    out->backward_fn = [an, bn](Node& self) {
      for (auto* p : {an.get(), bn.get()}) {
        if (!p->requires_grad) continue;
        p->ensure_grad();
        for (std::size_t i = 0; i < self.size(); ++i)
          p->grad[i] += self.grad[i];
      }
    };
  }
  return Tensor(out);
}

Tensor add_rows(const Tensor& m, const Tensor& row) {
  require_rank(m, 2, "add_rows matrix");
  require_rank(row, 1, "add_rows row");
  const std::size_t r = m.dim(0), c = m.dim(1);
  if (row.dim(0) != c) {
    throw DimensionError("add_rows: " + shape_str(m.shape()) +
                         " cannot take row " + shape_str(row.shape()));
  }
  auto out = op_node({r, c}, {m.node(), row.node()});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j)
      out->values[i * c + j] = m.values()[i * c + j] + row.values()[j];
  if (out->requires_grad) {
    auto mn = m.node();
    auto rn = row.node();
    out->backward_fn = [mn, rn, r, c](Node& self) {
      if (mn->requires_grad) {
        mn->ensure_grad();
        for (std::size_t i = 0; i < r * c; ++i) mn->grad[i] += self.grad[i];
      }
      if (rn->requires_grad) {
        rn->ensure_grad();
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j)
            rn->grad[j] += self.grad[i * c + j];
      }
    };
  }
  return Tensor(out);
}

Tensor scale(const Tensor& a, double c) {
  auto out = op_node(a.shape(), {a.node()});
  for (std::size_t i = 0; i < out->size(); ++i)
    out->values[i] = a.values()[i] * c;
  if (out->requires_grad) {
    auto an = a.node();
    out->backward_fn = [an, c](Node& self) {
      an->ensure_grad();
      for (std::size_t i = 0; i < self.size(); ++i)
        an->grad[i] += c * self.grad[i];
    };
  }
  return Tensor(out);
}

Tensor gelu(const Tensor& x) {
  auto out = op_node(x.shape(), {x.node()});
  for (std::size_t i = 0; i < out->size(); ++i) {
    const double v = x.values()[i];
    out->values[i] = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
  }
  if (out->requires_grad) {
    auto xn = x.node();
    out->backward_fn = [xn](Node& self) {
      xn->ensure_grad();
      for (std::size_t i = 0; i < self.size(); ++i) {
        const double v = xn->values[i];
        const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
        xn->grad[i] += (cdf + v * pdf) * self.grad[i];
      }
    };
  }
  return Tensor(out);
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps) {
  const bool vec = x.rank() == 1;
  const std::size_t rows = vec ? 1 : x.dim(0);
  const std::size_t h = vec ? x.dim(0) : x.dim(1);
  if (gain.rank() != 1 || gain.dim(0) != h || bias.rank() != 1 ||
      bias.dim(0) != h) {
    throw DimensionError("layer_norm: input " + shape_str(x.shape()) +
                         " with gain " + shape_str(gain.shape()) +
                         " and bias " + shape_str(bias.shape()));
  }
  auto out = op_node(x.shape(), {x.node(), gain.node(), bias.node()});
  std::vector<double> inv_sd(rows), xhat(rows * h);
  for (std::size_t i = 0; i < rows; ++i) {
    const double* xr = x.values().data() + i * h;
    double mu = 0.0;
    for (std::size_t j = 0; j < h; ++j) mu += xr[j];
    mu /= static_cast<double>(h);
    double var = 0.0;
    for (std::size_t j = 0; j < h; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(h);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_sd[i] = is;
    for (std::size_t j = 0; j < h; ++j) {
      const double xh = (xr[j] - mu) * is;
      xhat[i * h + j] = xh;
      out->values[i * h + j] = gain.values()[j] * xh + bias.values()[j];
    }
  }
  if (out->requires_grad) {
    auto xn = x.node();
    auto gn = gain.node();
    auto bn = bias.node();
    out->backward_fn = [xn, gn, bn, rows, h, inv_sd = std::move(inv_sd),
                        xhat = std::move(xhat)](Node& self) {
      for (std::size_t i = 0; i < rows; ++i) {
        const double* g = self.grad.data() + i * h;
        const double* xh = xhat.data() + i * h;
        if (gn->requires_grad) {
          gn->ensure_grad();
          for (std::size_t j = 0; j < h; ++j) gn->grad[j] += g[j] * xh[j];
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          for (std::size_t j = 0; j < h; ++j) bn->grad[j] += g[j];
        }
        if (xn->requires_grad) {
          xn->ensure_grad();
          double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
          for (std::size_t j = 0; j < h; ++j) {
            const double dxh = g[j] * gn->values[j];
            sum_dxhat += dxh;
            sum_dxhat_xhat += dxh * xh[j];
          }
          const double inv_h = 1.0 / static_cast<double>(h);
          for (std::size_t j = 0; j < h; ++j) {
            const double dxh = g[j] * gn->values[j];
            xn->grad[i * h + j] +=
                inv_sd[i] *
                (dxh - inv_h * sum_dxhat - xh[j] * inv_h * sum_dxhat_xhat);
          }
        }
      }
    };
  }
  return Tensor(out);
}

Tensor softmax(const Tensor& v) {
  require_rank(v, 1, "softmax");
  if (v.dim(0) == 0) {
    throw DimensionError("softmax: empty input " + shape_str(v.shape()));
  }
  const std::size_t n = v.dim(0);
  auto out = op_node({n}, {v.node()});
  double mx = v.values()[0];
  for (double x : v.values()) mx = std::max(mx, x);
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    out->values[i] = std::exp(v.values()[i] - mx);
    z += out->values[i];
  }
  for (std::size_t i = 0; i < n; ++i) out->values[i] /= z;
  if (out->requires_grad) {
    auto vn = v.node();
    out->backward_fn = [vn, n](Node& self) {
      vn->ensure_grad();
      double dot = 0.0;
      for (std::size_t i = 0; i < n; ++i) dot += self.grad[i] * self.values[i];
      for (std::size_t i = 0; i < n; ++i)
        vn->grad[i] += self.values[i] * (self.grad[i] - dot);
    };
  }
  return Tensor(out);
}

Tensor softmax_rows_masked(const Tensor& m,
                           const std::vector<std::uint8_t>& key_mask) {
  require_rank(m, 2, "softmax_rows_masked");
  const std::size_t rows = m.dim(0), cols = m.dim(1);
  if (key_mask.size() != cols) {
    throw DimensionError("softmax_rows_masked: mask size " +
                         std::to_string(key_mask.size()) + " vs columns " +
                         std::to_string(cols));
  }
  bool any = false;
  for (auto b : key_mask) any = any || b;
  if (!any) {
    throw DimensionError("softmax_rows_masked: mask excludes every column");
  }
  auto out = op_node({rows, cols}, {m.node()});
  for (std::size_t i = 0; i < rows; ++i) {
    const double* xr = m.values().data() + i * cols;
    double mx = -HUGE_VAL;
    for (std::size_t j = 0; j < cols; ++j)
      if (key_mask[j] && xr[j] > mx) mx = xr[j];
    double z = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      if (key_mask[j]) {
        out->values[i * cols + j] = std::exp(xr[j] - mx);
        z += out->values[i * cols + j];
      }
    }
    for (std::size_t j = 0; j < cols; ++j)
      if (key_mask[j]) out->values[i * cols + j] /= z;
  }
  if (out->requires_grad) {
    auto mn = m.node();
    out->backward_fn = [mn, rows, cols, key_mask](Node& self) {
      mn->ensure_grad();
      for (std::size_t i = 0; i < rows; ++i) {
        const double* y = self.values.data() + i * cols;
        const double* g = self.grad.data() + i * cols;
        double dotv = 0.0;
        for (std::size_t j = 0; j < cols; ++j)
          if (key_mask[j]) dotv += g[j] * y[j];
        for (std::size_t j = 0; j < cols; ++j)
          if (key_mask[j]) mn->grad[i * cols + j] += y[j] * (g[j] - dotv);
      }
    };
  }
  return Tensor(out);
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets) {
  require_rank(logits, 2, "cross_entropy logits");
  const std::size_t n = logits.dim(0), v = logits.dim(1);
  if (targets.size() != n) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) +
                         " targets for " + std::to_string(n) + " rows");
  }
  if (n == 0) {
    throw DimensionError("cross_entropy: no rows");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= v) {
      throw LookupError("cross_entropy: target " + std::to_string(targets[i]) +
                        " at row " + std::to_string(i) +
                        " outside vocabulary of size " + std::to_string(v));
    }
  }
  auto out = op_node({1}, {logits.node()});
  std::vector<double> probs(n * v);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* lr = logits.values().data() + i * v;
    double mx = lr[0];
    for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, lr[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < v; ++j) {
      probs[i * v + j] = std::exp(lr[j] - mx);
      z += probs[i * v + j];
    }
    for (std::size_t j = 0; j < v; ++j) probs[i * v + j] /= z;
    loss -= std::log(probs[i * v + targets[i]]);
  }
  out->values[0] = loss / static_cast<double>(n);
  if (out->requires_grad) {
    auto ln = logits.node();
    out->backward_fn = [ln, n, v, targets,
                        probs = std::move(probs)](Node& self) {
      ln->ensure_grad();
      const double g = self.grad[0] / static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < v; ++j)
          ln->grad[i * v + j] += g * probs[i * v + j];
        ln->grad[i * v + targets[i]] -= g;
      }
    };
  }
  return Tensor(out);
}

Tensor bce_with_logit(const Tensor& logit, double label) {
  if (logit.size() != 1) {
    throw DimensionError("bce_with_logit: logit must be scalar, got " +
                         shape_str(logit.shape()));
  }
  const double x = logit.values()[0];
  auto out = op_node({1}, {logit.node()});
  out->values[0] = std::max(x, 0.0) - x * label + std::log1p(std::exp(-std::abs(x)));
  if (out->requires_grad) {
    auto ln = logit.node();
    out->backward_fn = [ln, label](Node& self) {
      ln->ensure_grad();
      const double x2 = ln->values[0];
      const double sig = 1.0 / (1.0 + std::exp(-x2));
      ln->grad[0] += (sig - label) * self.grad[0];
    };
  }
  return Tensor(out);
}

Tensor span_mean(const Tensor& rows, std::size_t start, std::size_t end) {
  require_rank(rows, 2, "span_mean");
  if (start >= end || end > rows.dim(0)) {
    throw DimensionError("span_mean: span [" + std::to_string(start) + "," +
                         std::to_string(end) + ") invalid for " +
                         shape_str(rows.shape()));
  }
  const std::size_t h = rows.dim(1), k = end - start;
  auto out = op_node({h}, {rows.node()});
  for (std::size_t i = start; i < end; ++i)
    for (std::size_t j = 0; j < h; ++j)
      out->values[j] += rows.values()[i * h + j];
  for (std::size_t j = 0; j < h; ++j)
    out->values[j] /= static_cast<double>(k);
  if (out->requires_grad) {
    auto rn = rows.node();
    out->backward_fn = [rn, start, end, h, k](Node& self) {
      rn->ensure_grad();
      for (std::size_t i = start; i < end; ++i)
        for (std::size_t j = 0; j < h; ++j)
          rn->grad[i * h + j] += self.grad[j] / static_cast<double>(k);
    };
  }
  return Tensor(out);
}

Tensor mean_pool(const Tensor& rows) {
  require_rank(rows, 2, "mean_pool");
  if (rows.dim(0) == 0) {
    throw DimensionError("mean_pool: no rows in " + shape_str(rows.shape()));
  }
  return span_mean(rows, 0, rows.dim(0));
}

Tensor as_row(const Tensor& v) {
  require_rank(v, 1, "as_row");
  auto out = op_node({1, v.dim(0)}, {v.node()});
  out->values = v.values();
  if (out->requires_grad) {
    auto vn = v.node();
    out->backward_fn = [vn](Node& self) {
      vn->ensure_grad();
      for (std::size_t i = 0; i < self.size(); ++i)
        vn->grad[i] += self.grad[i];
    };
  }
  return Tensor(out);
}

Tensor as_vec(const Tensor& m) {
  require_rank(m, 2, "as_vec");
  if (m.dim(0) != 1) {
    throw DimensionError("as_vec: expected a single row, got " +
                         shape_str(m.shape()));
  }
  auto out = op_node({m.dim(1)}, {m.node()});
  out->values = m.values();
  if (out->requires_grad) {
    auto mn = m.node();
    out->backward_fn = [mn](Node& self) {
      mn->ensure_grad();
      for (std::size_t i = 0; i < self.size(); ++i)
        mn->grad[i] += self.grad[i];
    };
  }
  return Tensor(out);
}

Tensor stack_rows(const std::vector<Tensor>& vecs) {
  if (vecs.empty()) throw DimensionError("stack_rows: no inputs");
  const std::size_t h = vecs[0].dim(0);
  std::vector<NodePtr> parents;
  for (const auto& t : vecs) {
    require_rank(t, 1, "stack_rows piece");
    if (t.dim(0) != h) {
      throw DimensionError("stack_rows: lengths disagree, " +
                           shape_str(vecs[0].shape()) + " vs " +
                           shape_str(t.shape()));
    }
    parents.push_back(t.node());
  }
  auto out = op_node({vecs.size(), h}, std::move(parents));
  for (std::size_t r = 0; r < vecs.size(); ++r)
    std::copy(vecs[r].values().begin(), vecs[r].values().end(),
              out->values.begin() + r * h);
  if (out->requires_grad) {
    out->backward_fn = [h](Node& self) {
      for (std::size_t r = 0; r < self.parents.size(); ++r) {
        auto& p = self.parents[r];
        if (!p->requires_grad) continue;
        p->ensure_grad();
        for (std::size_t j = 0; j < h; ++j)
          p->grad[j] += self.grad[r * h + j];
      }
    };
  }
  return Tensor(out);
}

Tensor concat(const std::vector<Tensor>& vecs) {
  if (vecs.empty()) throw DimensionError("concat: no inputs");
  std::size_t total = 0;
  std::vector<NodePtr> parents;
  for (const auto& t : vecs) {
    require_rank(t, 1, "concat piece");
    total += t.dim(0);
    parents.push_back(t.node());
  }
  auto out = op_node({total}, std::move(parents));
  std::size_t off = 0;
  for (const auto& t : vecs) {
    std::copy(t.values().begin(), t.values().end(), out->values.begin() + off);
    off += t.dim(0);
  }
  if (out->requires_grad) {
    out->backward_fn = [](Node& self) {
      std::size_t off2 = 0;
      for (auto& p : self.parents) {
        if (p->requires_grad) {
          p->ensure_grad();
          for (std::size_t i = 0; i < p->size(); ++i)
            p->grad[i] += self.grad[off2 + i];
        }
        off2 += p->size();
      }
    };
  }
  return Tensor(out);
}

Tensor concat_cols(const std::vector<Tensor>& mats) {
  if (mats.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t rows = mats[0].dim(0);
  std::size_t total = 0;
  std::vector<NodePtr> parents;
  for (const auto& t : mats) {
    require_rank(t, 2, "concat_cols piece");
    if (t.dim(0) != rows) {
      throw DimensionError("concat_cols: row counts disagree, " +
                           shape_str(mats[0].shape()) + " vs " +
                           shape_str(t.shape()));
    }
    total += t.dim(1);
    parents.push_back(t.node());
  }
  auto out = op_node({rows, total}, std::move(parents));
  std::size_t off = 0;
  for (const auto& t : mats) {
    const std::size_t c = t.dim(1);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < c; ++j)
        out->values[i * total + off + j] = t.values()[i * c + j];
    off += c;
  }
  if (out->requires_grad) {
    out->backward_fn = [rows, total](Node& self) {
      std::size_t off2 = 0;
      for (auto& p : self.parents) {
        const std::size_t c = p->shape[1];
        if (p->requires_grad) {
          p->ensure_grad();
          for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < c; ++j)
              p->grad[i * c + j] += self.grad[i * total + off2 + j];
        }
        off2 += c;
      }
    };
  }
  return Tensor(out);
}

Tensor slice_cols(const Tensor& m, std::size_t c0, std::size_t c1) {
  require_rank(m, 2, "slice_cols");
  if (c0 >= c1 || c1 > m.dim(1)) {
    throw DimensionError("slice_cols: [" + std::to_string(c0) + "," +
                         std::to_string(c1) + ") invalid for " +
                         shape_str(m.shape()));
  }
  const std::size_t rows = m.dim(0), cols = m.dim(1), w = c1 - c0;
  auto out = op_node({rows, w}, {m.node()});
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < w; ++j)
      out->values[i * w + j] = m.values()[i * cols + c0 + j];
  if (out->requires_grad) {
    auto mn = m.node();
    out->backward_fn = [mn, rows, cols, c0, w](Node& self) {
      mn->ensure_grad();
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < w; ++j)
          mn->grad[i * cols + c0 + j] += self.grad[i * w + j];
    };
  }
  return Tensor(out);
}

Tensor gather_rows(const Tensor& m, const std::vector<int>& idx) {
  require_rank(m, 2, "gather_rows");
  const std::size_t rows = m.dim(0), h = m.dim(1);
  if (idx.empty()) throw DimensionError("gather_rows: empty index list");
  for (int i : idx) {
    if (i < 0 || static_cast<std::size_t>(i) >= rows) {
      throw LookupError("gather_rows: row " + std::to_string(i) +
                        " outside " + shape_str(m.shape()));
    }
  }
  auto out = op_node({idx.size(), h}, {m.node()});
  for (std::size_t r = 0; r < idx.size(); ++r)
    std::copy_n(m.values().data() + static_cast<std::size_t>(idx[r]) * h, h,
                out->values.data() + r * h);
  if (out->requires_grad) {
    auto mn = m.node();
    out->backward_fn = [mn, idx, h](Node& self) {
      mn->ensure_grad();
      for (std::size_t r = 0; r < idx.size(); ++r)
        for (std::size_t j = 0; j < h; ++j)
          mn->grad[static_cast<std::size_t>(idx[r]) * h + j] +=
              self.grad[r * h + j];
    };
  }
  return Tensor(out);
}

Tensor lookup_rows(const Tensor& table, const std::vector<int>& ids) {
  return gather_rows(table, ids);
}

Tensor dot(const Tensor& a, const Tensor& b) {
  require_rank(a, 1, "dot lhs");
  require_rank(b, 1, "dot rhs");
  if (a.dim(0) != b.dim(0)) {
    throw DimensionError("dot: lengths disagree, " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
  }
  auto out = op_node({1}, {a.node(), b.node()});
  double acc = 0.0;
  for (std::size_t i = 0; i < a.dim(0); ++i)
    acc += a.values()[i] * b.values()[i];
  out->values[0] = acc;
  if (out->requires_grad) {
    auto an = a.node();
    auto bn = b.node();
    out->backward_fn = [an, bn](Node& self) {
      const double g = self.grad[0];
      if (an->requires_grad) {
        an->ensure_grad();
        for (std::size_t i = 0; i < an->size(); ++i)
          an->grad[i] += g * bn->values[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (std::size_t i = 0; i < bn->size(); ++i)
          bn->grad[i] += g * an->values[i];
      }
    };
  }
  return Tensor(out);
}

Tensor mean_scalars(const std::vector<Tensor>& terms) {
  if (terms.empty()) throw DimensionError("mean_scalars: no terms");
  const double w = 1.0 / static_cast<double>(terms.size());
  return weighted_sum_scalars(terms, std::vector<double>(terms.size(), w));
}

Tensor weighted_sum_scalars(const std::vector<Tensor>& terms,
                            const std::vector<double>& coeffs) {
  if (terms.empty()) throw DimensionError("weighted_sum_scalars: no terms");
  if (terms.size() != coeffs.size()) {
    throw DimensionError("weighted_sum_scalars: " +
                         std::to_string(terms.size()) + " terms vs " +
                         std::to_string(coeffs.size()) + " coefficients");
  }
  std::vector<NodePtr> parents;
  double acc = 0.0;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    if (terms[i].size() != 1) {
      throw DimensionError("weighted_sum_scalars: term " + std::to_string(i) +
                           " is not scalar: " + shape_str(terms[i].shape()));
    }
    acc += coeffs[i] * terms[i].values()[0];
    parents.push_back(terms[i].node());
  }
  auto out = op_node({1}, std::move(parents));
  out->values[0] = acc;
  if (out->requires_grad) {
    out->backward_fn = [coeffs](Node& self) {
      const double g = self.grad[0];
      for (std::size_t i = 0; i < self.parents.size(); ++i) {
        auto& p = self.parents[i];
        if (!p->requires_grad) continue;
        p->ensure_grad();
        p->grad[0] += coeffs[i] * g;
      }
    };
  }
  return Tensor(out);
}

Tensor dropout(const Tensor& x, double rate, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) {
    throw Error("dropout: rate must lie in [0,1), got " + std::to_string(rate));
  }
  if (rate == 0.0) return x;
  auto out = op_node(x.shape(), {x.node()});
  const double keep = 1.0 - rate;
  std::vector<double> mask(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    mask[i] = rng.uniform() < rate ? 0.0 : 1.0 / keep;
    out->values[i] = x.values()[i] * mask[i];
  }
  if (out->requires_grad) {
    auto xn = x.node();
    out->backward_fn = [xn, mask = std::move(mask)](Node& self) {
      xn->ensure_grad();
      for (std::size_t i = 0; i < self.size(); ++i)
        xn->grad[i] += mask[i] * self.grad[i];
    };
  }
  return Tensor(out);
}

}  // namespace kelp
