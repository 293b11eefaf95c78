#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <vector>

#include "sweettok/kernels.hpp"
#include "sweettok/tensor.hpp"

// Minimal dynamic-graph reverse-mode differentiation. Each Var owns a node
// that remembers its inputs and a closure propagating the node's gradient into
// them; backward() walks the graph in reverse topological order.

namespace sweettok::ag {

struct Node {
  Tensor value;
  Tensor grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(const Tensor&)> backward_fn;

  Tensor& grad_buffer();
};

class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);

  const Tensor& value() const { return node_->value; }
  // Mutable access is reserved for optimizers and parameter loading.
  Tensor& mutable_value() { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad() { node_->grad = Tensor(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool defined() const { return static_cast<bool>(node_); }
  std::size_t rows() const { return node_->value.rows(); }
  std::size_t cols() const { return node_->value.cols(); }
  double item() const;

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  friend Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(const Tensor&)> backward_fn);
  std::shared_ptr<Node> node_;
};

// Gradient recording is on by default; the guard disables it for the
// current thread within a scope.
bool grad_enabled();
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Finite-difference support for graphs with stop-gradients. A recording pass
// stores the constants that stop_gradient and straight_through inject; a
// replay pass returns them again (straight_through as its continuous input
// plus the recorded offset). Perturbed replay passes then evaluate the
// surrogate whose exact gradient is what backward() computes. Both passes must
// issue the calls in the same order.
class SurrogateTape {
 public:
  enum class Mode { kRecord, kReplay };

  class Scope {
   public:
    Scope(SurrogateTape& tape, Mode mode);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    SurrogateTape* previous_;
  };

  std::size_t size() const { return constants_.size(); }

 private:
  friend Var stop_gradient(const Var& x);
  friend Var straight_through(const Var& continuous, const Var& quantized);
  const Tensor& next(const Tensor& current);

  Mode mode_ = Mode::kRecord;
  std::vector<Tensor> constants_;
  std::size_t cursor_ = 0;
};

// Builds a result node; records inputs only when some input requires grad
// and recording is enabled.
Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(const Tensor&)> backward_fn);

// Seeds d(loss)/d(loss) = 1 for a 1x1 loss and accumulates into every leaf.
void backward(const Var& loss);

Var constant(Tensor value);

// Algebra
Var matmul(const Var& a, const Var& b);
Var matmul_nt(const Var& a, const Var& b);  // a * b^T
Var linear(const Var& x, const Var& weight, const Var& bias);  // x * W + b, W is (in x out)
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_row(const Var& x, const Var& row);  // broadcast a (1 x c) row over x
Var sum_scalars(const std::vector<Var>& terms, const std::vector<double>& weights);

// Elementwise
Var gelu(const Var& x);
Var relu(const Var& x);
Var clamp(const Var& x, double lo, double hi);

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
Var attention(const Var& q, const Var& k, const Var& v, const kernels::AttentionShape& shape);
Var spmm(std::shared_ptr<const kernels::Csr> m, const Var& x);

// Layout
Var gather_rows(const Var& x, std::vector<std::size_t> rows);
Var gather(const Var& x, std::size_t rows, std::size_t cols, std::vector<std::size_t> flat_index);
Var concat_rows(const std::vector<Var>& parts);
Var slice_rows(const Var& x, std::size_t begin, std::size_t end);

// Quantization helpers
Var stop_gradient(const Var& x);
// Forward value is exactly quantized.value(); the gradient flows to
// continuous unchanged and nothing flows to quantized.
Var straight_through(const Var& continuous, const Var& quantized);

// Losses (1x1 results)
Var mse(const Var& a, const Var& b);
// Mean over rows of the squared Euclidean row distance.
Var mean_row_sq_dist(const Var& a, const Var& b);

}  // namespace sweettok::ag
