#pragma once

#include <cstddef>
#include <vector>

#include "sweettok/tensor.hpp"

// Numeric kernels behind the autograd ops. Two implementations share one
// signature set:
//   serial::   straightforward loops, kept as the reference for tests
//   parallel:: cache-blocked loops distributed with OpenMP
// Every parallel kernel assigns each output element to exactly one thread and
// accumulates in a fixed order, so results do not depend on the thread count.

namespace sweettok::kernels {

enum class Trans { kNo, kYes };

// Compressed sparse rows; used for the normalized co-occurrence adjacency.
struct Csr {
  std::size_t n_rows = 0;
  std::size_t n_cols = 0;
  std::vector<std::size_t> row_ptr;
  std::vector<std::size_t> col;
  std::vector<double> val;

  Csr transposed() const;
};

// Grouped multi-head attention layout. Query rows [g*q_len, (g+1)*q_len)
// attend to key/value rows [g*kv_len, (g+1)*kv_len); head h owns columns
// [h*head_dim, (h+1)*head_dim).
struct AttentionShape {
  std::size_t groups = 1;
  std::size_t q_len = 0;
  std::size_t kv_len = 0;
  std::size_t heads = 1;
  std::size_t head_dim = 0;

  std::size_t width() const { return heads * head_dim; }
  std::size_t probs_size() const { return groups * heads * q_len * kv_len; }
};

namespace serial {

// c = op(a) * op(b), or c += ... when accumulate is set. c is resized when
// not accumulating.
void gemm(const Tensor& a, Trans ta, const Tensor& b, Trans tb, Tensor& c, bool accumulate = false);

// out = softmax(q k^T / sqrt(head_dim)) v per (group, head). When probs is
// non-null it receives the attention weights, laid out [group][head][q][kv].
void attention_forward(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionShape& shape,
                       Tensor& out, std::vector<double>* probs);

// Accumulates into dq, dk, dv (which must already have the input shapes).
void attention_backward(const Tensor& q, const Tensor& k, const Tensor& v, const std::vector<double>& probs,
                        const Tensor& dout, const AttentionShape& shape, Tensor& dq, Tensor& dk, Tensor& dv);

// y = m * x (y resized).
void spmm(const Csr& m, const Tensor& x, Tensor& y);

// out(i, j) = ||z_i - codes_{begin + j}||^2 evaluated as an expanded dot
// product. Callers needing exact ranking must re-check near ties.
void squared_distances(const Tensor& z, const Tensor& codes, std::size_t begin, std::size_t end, Tensor& out);

}  // namespace serial

namespace parallel {

void gemm(const Tensor& a, Trans ta, const Tensor& b, Trans tb, Tensor& c, bool accumulate = false);
void attention_forward(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionShape& shape,
                       Tensor& out, std::vector<double>* probs);
void attention_backward(const Tensor& q, const Tensor& k, const Tensor& v, const std::vector<double>& probs,
                        const Tensor& dout, const AttentionShape& shape, Tensor& dq, Tensor& dk, Tensor& dv);
void spmm(const Csr& m, const Tensor& x, Tensor& y);
void squared_distances(const Tensor& z, const Tensor& codes, std::size_t begin, std::size_t end, Tensor& out);

}  // namespace parallel

int max_threads();

}  // namespace sweettok::kernels
