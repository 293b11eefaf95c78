#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "sweettok/kernels.hpp"

namespace sweettok::kernels {

Csr Csr::transposed() const {
  Csr t;
  t.n_rows = n_cols;
  t.n_cols = n_rows;
  t.row_ptr.assign(n_cols + 1, 0);
  for (std::size_t c : col) ++t.row_ptr[c + 1];
  for (std::size_t i = 0; i < n_cols; ++i) t.row_ptr[i + 1] += t.row_ptr[i];
  t.col.resize(col.size());
  t.val.resize(val.size());
  std::vector<std::size_t> cursor(t.row_ptr.begin(), t.row_ptr.end() - 1);
  for (std::size_t r = 0; r < n_rows; ++r) {
    for (std::size_t e = row_ptr[r]; e < row_ptr[r + 1]; ++e) {
      const std::size_t slot = cursor[col[e]]++;
      t.col[slot] = r;
      t.val[slot] = val[e];
    }
  }
  return t;
}

namespace serial {

void gemm(const Tensor& a, Trans ta, const Tensor& b, Trans tb, Tensor& c, bool accumulate) {
  const std::size_t m = ta == Trans::kNo ? a.rows() : a.cols();
  const std::size_t k = ta == Trans::kNo ? a.cols() : a.rows();
  const std::size_t kb = tb == Trans::kNo ? b.rows() : b.cols();
  const std::size_t n = tb == Trans::kNo ? b.cols() : b.rows();
  if (k != kb) throw std::invalid_argument("gemm: inner dimensions differ");
  if (!accumulate) {
    c = Tensor(m, n);
  } else if (c.rows() != m || c.cols() != n) {
    throw std::invalid_argument("gemm: accumulator shape mismatch");
  }
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) {
        const double av = ta == Trans::kNo ? a(i, p) : a(p, i);
        const double bv = tb == Trans::kNo ? b(p, j) : b(j, p);
        acc += av * bv;
      }
      c(i, j) += acc;
    }
  }
}

void attention_forward(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionShape& s, Tensor& out,
                       std::vector<double>* probs) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(s.head_dim));
  out = Tensor(s.groups * s.q_len, s.width());
  if (probs) probs->assign(s.probs_size(), 0.0);
  std::vector<double> p(s.kv_len);
  for (std::size_t g = 0; g < s.groups; ++g) {
    for (std::size_t h = 0; h < s.heads; ++h) {
      const std::size_t c0 = h * s.head_dim;
      for (std::size_t i = 0; i < s.q_len; ++i) {
        const std::size_t qi = g * s.q_len + i;
        double mx = -INFINITY;
        for (std::size_t j = 0; j < s.kv_len; ++j) {
          const std::size_t kj = g * s.kv_len + j;
          double dot = 0.0;
          for (std::size_t d = 0; d < s.head_dim; ++d) dot += q(qi, c0 + d) * k(kj, c0 + d);
          p[j] = dot * scale;
          mx = std::max(mx, p[j]);
        }
        double sum = 0.0;
        for (std::size_t j = 0; j < s.kv_len; ++j) {
          p[j] = std::exp(p[j] - mx);
          sum += p[j];
        }
        for (std::size_t j = 0; j < s.kv_len; ++j) p[j] /= sum;
        for (std::size_t j = 0; j < s.kv_len; ++j) {
          const std::size_t kj = g * s.kv_len + j;
          for (std::size_t d = 0; d < s.head_dim; ++d) out(qi, c0 + d) += p[j] * v(kj, c0 + d);
        }
        if (probs) {
          std::copy(p.begin(), p.end(), probs->begin() + ((g * s.heads + h) * s.q_len + i) * s.kv_len);
        }
      }
    }
  }
}

void attention_backward(const Tensor& q, const Tensor& k, const Tensor& v, const std::vector<double>& probs,
                        const Tensor& dout, const AttentionShape& s, Tensor& dq, Tensor& dk, Tensor& dv) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(s.head_dim));
  std::vector<double> dp(s.kv_len);
  for (std::size_t g = 0; g < s.groups; ++g) {
    for (std::size_t h = 0; h < s.heads; ++h) {
      const std::size_t c0 = h * s.head_dim;
      for (std::size_t i = 0; i < s.q_len; ++i) {
        const std::size_t qi = g * s.q_len + i;
        const double* p = probs.data() + ((g * s.heads + h) * s.q_len + i) * s.kv_len;
        double weighted = 0.0;
        for (std::size_t j = 0; j < s.kv_len; ++j) {
          const std::size_t kj = g * s.kv_len + j;
          double dot = 0.0;
          for (std::size_t d = 0; d < s.head_dim; ++d) {
            dot += dout(qi, c0 + d) * v(kj, c0 + d);
            dv(kj, c0 + d) += p[j] * dout(qi, c0 + d);
          }
          dp[j] = dot;
          weighted += dot * p[j];
        }
        for (std::size_t j = 0; j < s.kv_len; ++j) {
          const std::size_t kj = g * s.kv_len + j;
          const double ds = p[j] * (dp[j] - weighted) * scale;
          for (std::size_t d = 0; d < s.head_dim; ++d) {
            dq(qi, c0 + d) += ds * k(kj, c0 + d);
            dk(kj, c0 + d) += ds * q(qi, c0 + d);
          }
        }
      }
    }
  }
}

void spmm(const Csr& m, const Tensor& x, Tensor& y) {
  if (m.n_cols != x.rows()) throw std::invalid_argument("spmm: dimension mismatch");
  y = Tensor(m.n_rows, x.cols());
  for (std::size_t r = 0; r < m.n_rows; ++r) {
    for (std::size_t e = m.row_ptr[r]; e < m.row_ptr[r + 1]; ++e) {
      for (std::size_t c = 0; c < x.cols(); ++c) y(r, c) += m.val[e] * x(m.col[e], c);
    }
  }
}

void squared_distances(const Tensor& z, const Tensor& codes, std::size_t begin, std::size_t end, Tensor& out) {
  if (z.cols() != codes.cols()) throw std::invalid_argument("squared_distances: width mismatch");
  out = Tensor(z.rows(), end - begin);
  for (std::size_t i = 0; i < z.rows(); ++i) {
    double zz = 0.0;
    for (std::size_t d = 0; d < z.cols(); ++d) zz += z(i, d) * z(i, d);
    for (std::size_t j = begin; j < end; ++j) {
      double cc = 0.0;
      double zc = 0.0;
      for (std::size_t d = 0; d < z.cols(); ++d) {
        cc += codes(j, d) * codes(j, d);
        zc += z(i, d) * codes(j, d);
      }
      out(i, j - begin) = zz - 2.0 * zc + cc;
    }
  }
}

}  // namespace serial
}  // namespace sweettok::kernels
