#include "sweettok/autograd.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <unordered_set>
#include <utility>

namespace sweettok::ag {
namespace {

namespace K = kernels::parallel;
using kernels::Trans;

thread_local bool t_grad_enabled = true;
thread_local SurrogateTape* t_tape = nullptr;

void accumulate(const Var& v, const Tensor& delta) {
  if (!v.requires_grad()) return;
  Tensor& g = v.node()->grad_buffer();
  double* dst = g.data();
  const double* src = delta.data();
  const std::size_t n = g.size();
  for (std::size_t i = 0; i < n; ++i) dst[i] += src[i];
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (!a.value().same_shape(b.value())) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
  }
}

}  // namespace

Tensor& Node::grad_buffer() {
  if (grad.empty() && !value.empty()) grad = Tensor(value.rows(), value.cols());
  return grad;
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

double Var::item() const {
  if (value().size() != 1) throw std::logic_error("item() on a non-scalar Var");
  return value()[0];
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(const Tensor&)> backward_fn) {
  Var out;
  out.node_ = std::make_shared<Node>();
  out.node_->value = std::move(value);
  if (!t_grad_enabled) return out;
  bool any = false;
  for (const Var& in : inputs) any = any || in.requires_grad();
  if (!any) return out;
  out.node_->requires_grad = true;
  for (const Var& in : inputs) {
    if (in.requires_grad()) out.node_->inputs.push_back(in.node());
  }
  out.node_->backward_fn = std::move(backward_fn);
  return out;
}

void backward(const Var& loss) {
  if (loss.value().size() != 1) throw std::invalid_argument("backward: loss must be 1x1");
  if (!loss.requires_grad()) return;
  // Owning pointers: releasing a processed node's closure may drop the last
  // other reference to an input that is still pending.
  std::vector<std::shared_ptr<Node>> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<std::shared_ptr<Node>, bool>> stack{{loss.node(), false}};
  while (!stack.empty()) {
    auto [node, expanded] = stack.back();
    stack.pop_back();
    if (expanded) {
      order.push_back(node);
      continue;
    }
    if (!seen.insert(node.get()).second) continue;
    stack.emplace_back(node, true);
    for (const auto& in : node->inputs) {
      if (!seen.count(in.get())) stack.emplace_back(in, false);
    }
  }
  loss.node()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = it->get();
    if (!node->backward_fn) continue;
    if (!node->grad.empty()) node->backward_fn(node->grad);
    node->backward_fn = nullptr;
    node->inputs.clear();
    node->grad = Tensor();
  }
}

Var constant(Tensor value) { return Var(std::move(value), false); }

Var matmul(const Var& a, const Var& b) {
  Tensor out;
  K::gemm(a.value(), Trans::kNo, b.value(), Trans::kNo, out);
  return make_result(std::move(out), {a, b}, [a, b](const Tensor& g) {
    if (a.requires_grad()) K::gemm(g, Trans::kNo, b.value(), Trans::kYes, a.node()->grad_buffer(), true);
    if (b.requires_grad()) K::gemm(a.value(), Trans::kYes, g, Trans::kNo, b.node()->grad_buffer(), true);
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  Tensor out;
  K::gemm(a.value(), Trans::kNo, b.value(), Trans::kYes, out);
  return make_result(std::move(out), {a, b}, [a, b](const Tensor& g) {
    if (a.requires_grad()) K::gemm(g, Trans::kNo, b.value(), Trans::kNo, a.node()->grad_buffer(), true);
    if (b.requires_grad()) K::gemm(g, Trans::kYes, a.value(), Trans::kNo, b.node()->grad_buffer(), true);
  });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  if (x.cols() != weight.rows() || bias.rows() != 1 || bias.cols() != weight.cols()) {
    throw std::invalid_argument("linear: shape mismatch");
  }
  Tensor out;
  K::gemm(x.value(), Trans::kNo, weight.value(), Trans::kNo, out);
  const std::size_t n = out.cols();
  for (std::size_t r = 0; r < out.rows(); ++r) {
    for (std::size_t c = 0; c < n; ++c) out(r, c) += bias.value()[c];
  }
  return make_result(std::move(out), {x, weight, bias}, [x, weight, bias](const Tensor& g) {
    if (x.requires_grad()) K::gemm(g, Trans::kNo, weight.value(), Trans::kYes, x.node()->grad_buffer(), true);
    if (weight.requires_grad()) {
      K::gemm(x.value(), Trans::kYes, g, Trans::kNo, weight.node()->grad_buffer(), true);
    }
    if (bias.requires_grad()) {
      Tensor& gb = bias.node()->grad_buffer();
      for (std::size_t r = 0; r < g.rows(); ++r) {
        for (std::size_t c = 0; c < g.cols(); ++c) gb[c] += g(r, c);
      }
    }
  });
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return make_result(std::move(out), {a, b}, [a, b](const Tensor& g) {
    accumulate(a, g);
    accumulate(b, g);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return make_result(std::move(out), {a, b}, [a, b](const Tensor& g) {
    accumulate(a, g);
    if (b.requires_grad()) {
      Tensor& gb = b.node()->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Var scale(const Var& a, double s) {
  Tensor out = a.value();
  for (double& v : out.values()) v *= s;
  return make_result(std::move(out), {a}, [a, s](const Tensor& g) {
    Tensor& ga = a.node()->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
  });
}

Var add_row(const Var& x, const Var& row) {
  if (row.rows() != 1 || row.cols() != x.cols()) throw std::invalid_argument("add_row: shape mismatch");
  Tensor out = x.value();
  for (std::size_t r = 0; r < out.rows(); ++r) {
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += row.value()[c];
  }
  return make_result(std::move(out), {x, row}, [x, row](const Tensor& g) {
    accumulate(x, g);
    if (row.requires_grad()) {
      Tensor& gr = row.node()->grad_buffer();
      for (std::size_t r = 0; r < g.rows(); ++r) {
        for (std::size_t c = 0; c < g.cols(); ++c) gr[c] += g(r, c);
      }
    }
  });
}

Var sum_scalars(const std::vector<Var>& terms, const std::vector<double>& weights) {
  if (terms.size() != weights.size()) throw std::invalid_argument("sum_scalars: weight count mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < terms.size(); ++i) total += weights[i] * terms[i].item();
  return make_result(Tensor(1, 1, total), terms, [terms, weights](const Tensor& g) {
    for (std::size_t i = 0; i < terms.size(); ++i) {
      if (terms[i].requires_grad()) terms[i].node()->grad_buffer()[0] += weights[i] * g[0];
    }
  });
}

Var gelu(const Var& x) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kA = 0.044715;
  Tensor out = x.value();
  for (double& v : out.values()) {
    const double u = kC * (v + kA * v * v * v);
    v = 0.5 * v * (1.0 + std::tanh(u));
  }
  return make_result(std::move(out), {x}, [x](const Tensor& g) {
    Tensor& gx = x.node()->grad_buffer();
    const Tensor& xv = x.value();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = xv[i];
      const double th = std::tanh(kC * (v + kA * v * v * v));
      const double d = 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * kC * (1.0 + 3.0 * kA * v * v);
      gx[i] += d * g[i];
    }
  });
}

Var relu(const Var& x) {
  Tensor out = x.value();
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  return make_result(std::move(out), {x}, [x](const Tensor& g) {
    Tensor& gx = x.node()->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (x.value()[i] > 0.0) gx[i] += g[i];
    }
  });
}

Var clamp(const Var& x, double lo, double hi) {
  Tensor out = x.value();
  for (double& v : out.values()) v = std::min(hi, std::max(lo, v));
  return make_result(std::move(out), {x}, [x, lo, hi](const Tensor& g) {
    Tensor& gx = x.node()->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = x.value()[i];
      if (v > lo && v < hi) gx[i] += g[i];
    }
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const std::size_t rows = x.rows();
  const std::size_t cols = x.cols();
  if (gamma.cols() != cols || beta.cols() != cols) throw std::invalid_argument("layer_norm: shape mismatch");
  auto normalized = std::make_shared<Tensor>(rows, cols);
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  Tensor out(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    double mean = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mean += x.value()(r, c);
    mean /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      const double d = x.value()(r, c) - mean;
      var += d * d;
    }
    var /= static_cast<double>(cols);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t c = 0; c < cols; ++c) {
      const double xh = (x.value()(r, c) - mean) * is;
      (*normalized)(r, c) = xh;
      out(r, c) = gamma.value()[c] * xh + beta.value()[c];
    }
  }
  return make_result(std::move(out), {x, gamma, beta}, [x, gamma, beta, normalized, inv_std](const Tensor& g) {
    const std::size_t rows = g.rows();
    const std::size_t cols = g.cols();
    if (gamma.requires_grad() || beta.requires_grad()) {
      Tensor& gg = gamma.node()->grad_buffer();
      Tensor& gb = beta.node()->grad_buffer();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
          if (gamma.requires_grad()) gg[c] += g(r, c) * (*normalized)(r, c);
          if (beta.requires_grad()) gb[c] += g(r, c);
        }
      }
    }
    if (!x.requires_grad()) return;
    Tensor& gx = x.node()->grad_buffer();
    const double n = static_cast<double>(cols);
    for (std::size_t r = 0; r < rows; ++r) {
      double mean_d = 0.0;
      double mean_dx = 0.0;
      for (std::size_t c = 0; c < cols; ++c) {
        const double d = g(r, c) * gamma.value()[c];
        mean_d += d;
        mean_dx += d * (*normalized)(r, c);
      }
      mean_d /= n;
      mean_dx /= n;
      for (std::size_t c = 0; c < cols; ++c) {
        const double d = g(r, c) * gamma.value()[c];
        gx(r, c) += (*inv_std)[r] * (d - mean_d - (*normalized)(r, c) * mean_dx);
      }
    }
  });
}

Var attention(const Var& q, const Var& k, const Var& v, const kernels::AttentionShape& shape) {
  if (q.rows() != shape.groups * shape.q_len || k.rows() != shape.groups * shape.kv_len ||
      v.rows() != k.rows() || q.cols() != shape.width() || k.cols() != shape.width() ||
      v.cols() != shape.width()) {
    throw std::invalid_argument("attention: shape mismatch");
  }
  const bool record = grad_enabled() && (q.requires_grad() || k.requires_grad() || v.requires_grad());
  auto probs = std::make_shared<std::vector<double>>();
  Tensor out;
  K::attention_forward(q.value(), k.value(), v.value(), shape, out, record ? probs.get() : nullptr);
  return make_result(std::move(out), {q, k, v}, [q, k, v, shape, probs](const Tensor& g) {
    Tensor dq(q.rows(), q.cols());
    Tensor dk(k.rows(), k.cols());
    Tensor dv(v.rows(), v.cols());
    K::attention_backward(q.value(), k.value(), v.value(), *probs, g, shape, dq, dk, dv);
    accumulate(q, dq);
    accumulate(k, dk);
    accumulate(v, dv);
  });
}

Var spmm(std::shared_ptr<const kernels::Csr> m, const Var& x) {
  Tensor out;
  K::spmm(*m, x.value(), out);
  return make_result(std::move(out), {x}, [m, x](const Tensor& g) {
    Tensor dx;
    K::spmm(m->transposed(), g, dx);
    accumulate(x, dx);
  });
}

Var gather_rows(const Var& x, std::vector<std::size_t> rows) {
  const std::size_t cols = x.cols();
  Tensor out(rows.size(), cols);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= x.rows()) throw std::out_of_range("gather_rows: row index out of range");
    const auto src = x.value().row(rows[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return make_result(std::move(out), {x}, [x, rows = std::move(rows)](const Tensor& g) {
    Tensor& gx = x.node()->grad_buffer();
    const std::size_t cols = g.cols();
    for (std::size_t i = 0; i < rows.size(); ++i) {
      for (std::size_t c = 0; c < cols; ++c) gx(rows[i], c) += g(i, c);
    }
  });
}

Var gather(const Var& x, std::size_t rows, std::size_t cols, std::vector<std::size_t> flat_index) {
  if (flat_index.size() != rows * cols) throw std::invalid_argument("gather: index size mismatch");
  Tensor out(rows, cols);
  for (std::size_t i = 0; i < flat_index.size(); ++i) {
    if (flat_index[i] >= x.value().size()) throw std::out_of_range("gather: index out of range");
    out[i] = x.value()[flat_index[i]];
  }
  return make_result(std::move(out), {x}, [x, idx = std::move(flat_index)](const Tensor& g) {
    Tensor& gx = x.node()->grad_buffer();
    for (std::size_t i = 0; i < idx.size(); ++i) gx[idx[i]] += g[i];
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  const std::size_t cols = parts.front().cols();
  std::size_t rows = 0;
  for (const Var& p : parts) {
    if (p.cols() != cols) throw std::invalid_argument("concat_rows: column mismatch");
    rows += p.rows();
  }
  Tensor out(rows, cols);
  std::size_t offset = 0;
  for (const Var& p : parts) {
    std::copy(p.value().data(), p.value().data() + p.value().size(), out.data() + offset * cols);
    offset += p.rows();
  }
  return make_result(std::move(out), parts, [parts](const Tensor& g) {
    std::size_t offset = 0;
    for (const Var& p : parts) {
      if (p.requires_grad()) {
        Tensor& gp = p.node()->grad_buffer();
        const double* src = g.data() + offset * g.cols();
        for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += src[i];
      }
      offset += p.rows();
    }
  });
}

Var slice_rows(const Var& x, std::size_t begin, std::size_t end) {
  if (begin > end || end > x.rows()) throw std::out_of_range("slice_rows: bad range");
  std::vector<std::size_t> rows(end - begin);
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = begin + i;
  return gather_rows(x, std::move(rows));
}

SurrogateTape::Scope::Scope(SurrogateTape& tape, Mode mode) : previous_(t_tape) {
  tape.mode_ = mode;
  if (mode == Mode::kRecord) tape.constants_.clear();
  tape.cursor_ = 0;
  t_tape = &tape;
}

SurrogateTape::Scope::~Scope() { t_tape = previous_; }

const Tensor& SurrogateTape::next(const Tensor& current) {
  if (mode_ == Mode::kRecord) {
    constants_.push_back(current);
    return constants_.back();
  }
  if (cursor_ >= constants_.size() || !constants_[cursor_].same_shape(current)) {
    throw std::logic_error("surrogate replay diverged from the recorded pass");
  }
  return constants_[cursor_++];
}

Var stop_gradient(const Var& x) { return constant(t_tape ? t_tape->next(x.value()) : x.value()); }

Var straight_through(const Var& continuous, const Var& quantized) {
  require_same_shape(continuous, quantized, "straight_through");
  auto backward = [continuous](const Tensor& g) { accumulate(continuous, g); };
  if (!t_tape) return make_result(quantized.value(), {continuous}, backward);
  Tensor offset = quantized.value();
  for (std::size_t i = 0; i < offset.size(); ++i) offset[i] -= continuous.value()[i];
  Tensor value = t_tape->next(offset);
  for (std::size_t i = 0; i < value.size(); ++i) value[i] += continuous.value()[i];
  return make_result(std::move(value), {continuous}, backward);
}

Var mse(const Var& a, const Var& b) {
  require_same_shape(a, b, "mse");
  const std::size_t n = a.value().size();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = a.value()[i] - b.value()[i];
    acc += d * d;
  }
  return make_result(Tensor(1, 1, acc / static_cast<double>(n)), {a, b}, [a, b, n](const Tensor& g) {
    const double f = 2.0 * g[0] / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double d = f * (a.value()[i] - b.value()[i]);
      if (a.requires_grad()) a.node()->grad_buffer()[i] += d;
      if (b.requires_grad()) b.node()->grad_buffer()[i] -= d;
    }
  });
}

Var mean_row_sq_dist(const Var& a, const Var& b) {
  require_same_shape(a, b, "mean_row_sq_dist");
  const std::size_t rows = a.rows();
  double acc = 0.0;
  for (std::size_t i = 0; i < a.value().size(); ++i) {
    const double d = a.value()[i] - b.value()[i];
    acc += d * d;
  }
  return make_result(Tensor(1, 1, acc / static_cast<double>(rows)), {a, b}, [a, b, rows](const Tensor& g) {
    const double f = 2.0 * g[0] / static_cast<double>(rows);
    for (std::size_t i = 0; i < a.value().size(); ++i) {
      const double d = f * (a.value()[i] - b.value()[i]);
      if (a.requires_grad()) a.node()->grad_buffer()[i] += d;
      if (b.requires_grad()) b.node()->grad_buffer()[i] -= d;
    }
  });
}

}  // namespace sweettok::ag
