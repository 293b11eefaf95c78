#include <algorithm>
#include <cmath>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "sweettok/kernels.hpp"

namespace sweettok::kernels {

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace parallel {
namespace {

Tensor transpose(const Tensor& x) {
  Tensor t(x.cols(), x.rows());
  const std::ptrdiff_t rows = static_cast<std::ptrdiff_t>(x.rows());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < x.cols(); ++c) t(c, r) = x(r, c);
  }
  return t;
}

// Packed GEMM: B is packed into kDepth x kNr column panels and A into
// kDepth x kMr row panels; an kMr x kNr register tile accumulates each
// output block. The summation order per element does not depend on the
// thread count.
constexpr std::size_t kMr = 8;
constexpr std::size_t kNr = 16;
constexpr std::size_t kDepth = 256;
constexpr std::size_t kRowPanel = 128;
constexpr std::size_t kColPanel = 2048;

typedef double Vec8 __attribute__((vector_size(64), aligned(8)));

void pack_b(const double* b, std::size_t n, std::size_t p0, std::size_t kc, std::size_t j0, std::size_t nc,
            double* out) {
  for (std::size_t jp = 0; jp < nc; jp += kNr) {
    const std::size_t w = std::min(kNr, nc - jp);
    double* panel = out + jp * kc;
    for (std::size_t p = 0; p < kc; ++p) {
      const double* src = b + (p0 + p) * n + j0 + jp;
      double* dst = panel + p * kNr;
      std::size_t j = 0;
      for (; j < w; ++j) dst[j] = src[j];
      for (; j < kNr; ++j) dst[j] = 0.0;
    }
  }
}

void pack_a(const double* a, std::size_t k, std::size_t i0, std::size_t mc, std::size_t p0, std::size_t kc,
            double* out) {
  for (std::size_t ip = 0; ip < mc; ip += kMr) {
    const std::size_t h = std::min(kMr, mc - ip);
    double* panel = out + ip * kc;
    for (std::size_t r = 0; r < kMr; ++r) {
      if (r < h) {
        const double* src = a + (i0 + ip + r) * k + p0;
        for (std::size_t p = 0; p < kc; ++p) panel[p * kMr + r] = src[p];
      } else {
        for (std::size_t p = 0; p < kc; ++p) panel[p * kMr + r] = 0.0;
      }
    }
  }
}

void micro_kernel(const double* ap, const double* bp, std::size_t kc, double* c, std::size_t ldc, std::size_t h,
                  std::size_t w) {
  Vec8 acc[kMr][2] = {};
  for (std::size_t p = 0; p < kc; ++p) {
    const Vec8 b0 = *reinterpret_cast<const Vec8*>(bp + p * kNr);
    const Vec8 b1 = *reinterpret_cast<const Vec8*>(bp + p * kNr + 8);
    const double* arow = ap + p * kMr;
    for (std::size_t r = 0; r < kMr; ++r) {
      acc[r][0] += arow[r] * b0;
      acc[r][1] += arow[r] * b1;
    }
  }
  double tile[kMr][kNr];
  __builtin_memcpy(tile, acc, sizeof(tile));
  for (std::size_t r = 0; r < h; ++r) {
    double* crow = c + r * ldc;
    for (std::size_t j = 0; j < w; ++j) crow[j] += tile[r][j];
  }
}

// c(m x n) += a(m x k) * b(k x n), all row-major and untransposed.
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  std::vector<double> bpack;
  for (std::size_t j0 = 0; j0 < n; j0 += kColPanel) {
    const std::size_t nc = std::min(kColPanel, n - j0);
    const std::size_t nc_padded = (nc + kNr - 1) / kNr * kNr;
    for (std::size_t p0 = 0; p0 < k; p0 += kDepth) {
      const std::size_t kc = std::min(kDepth, k - p0);
      bpack.resize(nc_padded * kc);
      pack_b(b, n, p0, kc, j0, nc, bpack.data());
      const std::ptrdiff_t row_panels = static_cast<std::ptrdiff_t>((m + kRowPanel - 1) / kRowPanel);
#pragma omp parallel
      {
        std::vector<double> apack(kRowPanel * kc);
#pragma omp for schedule(static)
        for (std::ptrdiff_t rp = 0; rp < row_panels; ++rp) {
          const std::size_t i0 = static_cast<std::size_t>(rp) * kRowPanel;
          const std::size_t mc = std::min(kRowPanel, m - i0);
          pack_a(a, k, i0, mc, p0, kc, apack.data());
          for (std::size_t jp = 0; jp < nc; jp += kNr) {
            const std::size_t w = std::min(kNr, nc - jp);
            for (std::size_t ip = 0; ip < mc; ip += kMr) {
              const std::size_t h = std::min(kMr, mc - ip);
              micro_kernel(apack.data() + ip * kc, bpack.data() + jp * kc, kc, c + (i0 + ip) * n + j0 + jp, n, h,
                           w);
            }
          }
        }
      }
    }
  }
}

void attend_rows(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionShape& s, std::size_t g,
                 std::size_t h, std::size_t i0, std::size_t i1, Tensor& out, std::vector<double>* probs,
                 std::vector<double>& scratch) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(s.head_dim));
  const std::size_t c0 = h * s.head_dim;
  scratch.resize(s.kv_len);
  double* p = scratch.data();
  for (std::size_t i = i0; i < i1; ++i) {
    const std::size_t qi = g * s.q_len + i;
    const double* qrow = q.data() + qi * q.cols() + c0;
    double mx = -INFINITY;
    for (std::size_t j = 0; j < s.kv_len; ++j) {
      const double* krow = k.data() + (g * s.kv_len + j) * k.cols() + c0;
      double dot = 0.0;
#pragma omp simd reduction(+ : dot)
      for (std::size_t d = 0; d < s.head_dim; ++d) dot += qrow[d] * krow[d];
      p[j] = dot * scale;
      mx = std::max(mx, p[j]);
    }
    double sum = 0.0;
    for (std::size_t j = 0; j < s.kv_len; ++j) {
      p[j] = std::exp(p[j] - mx);
      sum += p[j];
    }
    const double inv = 1.0 / sum;
    double* orow = out.data() + qi * out.cols() + c0;
    for (std::size_t j = 0; j < s.kv_len; ++j) {
      p[j] *= inv;
      const double* vrow = v.data() + (g * s.kv_len + j) * v.cols() + c0;
      const double pj = p[j];
#pragma omp simd
      for (std::size_t d = 0; d < s.head_dim; ++d) orow[d] += pj * vrow[d];
    }
    if (probs) {
      std::copy(p, p + s.kv_len, probs->begin() + ((g * s.heads + h) * s.q_len + i) * s.kv_len);
    }
  }
}

// One (group, head) slice through two packed products; used when the score
// matrix is large enough to amortize the packing.
void attend_block(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionShape& s, std::size_t g,
                  std::size_t h, Tensor& out, std::vector<double>* probs) {
  const std::size_t hd = s.head_dim;
  const std::size_t c0 = h * hd;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  std::vector<double> qh(s.q_len * hd);
  std::vector<double> kt(hd * s.kv_len);
  std::vector<double> vh(s.kv_len * hd);
  for (std::size_t i = 0; i < s.q_len; ++i) {
    const double* src = q.data() + (g * s.q_len + i) * q.cols() + c0;
    for (std::size_t d = 0; d < hd; ++d) qh[i * hd + d] = src[d] * scale;
  }
  for (std::size_t j = 0; j < s.kv_len; ++j) {
    const double* ks = k.data() + (g * s.kv_len + j) * k.cols() + c0;
    const double* vs = v.data() + (g * s.kv_len + j) * v.cols() + c0;
    for (std::size_t d = 0; d < hd; ++d) {
      kt[d * s.kv_len + j] = ks[d];
      vh[j * hd + d] = vs[d];
    }
  }
  std::vector<double> scores(s.q_len * s.kv_len, 0.0);
  gemm_nn(qh.data(), kt.data(), scores.data(), s.q_len, hd, s.kv_len);
  const std::ptrdiff_t rows = static_cast<std::ptrdiff_t>(s.q_len);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < rows; ++i) {
    double* p = scores.data() + static_cast<std::size_t>(i) * s.kv_len;
    double mx = -INFINITY;
    for (std::size_t j = 0; j < s.kv_len; ++j) mx = std::max(mx, p[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < s.kv_len; ++j) {
      p[j] = std::exp(p[j] - mx);
      sum += p[j];
    }
    const double inv = 1.0 / sum;
    for (std::size_t j = 0; j < s.kv_len; ++j) p[j] *= inv;
  }
  std::vector<double> oh(s.q_len * hd, 0.0);
  gemm_nn(scores.data(), vh.data(), oh.data(), s.q_len, s.kv_len, hd);
  for (std::size_t i = 0; i < s.q_len; ++i) {
    double* dst = out.data() + (g * s.q_len + i) * out.cols() + c0;
    for (std::size_t d = 0; d < hd; ++d) dst[d] = oh[i * hd + d];
  }
  if (probs) {
    std::copy(scores.begin(), scores.end(), probs->begin() + (g * s.heads + h) * s.q_len * s.kv_len);
  }
}

}  // namespace

void gemm(const Tensor& a, Trans ta, const Tensor& b, Trans tb, Tensor& c, bool accumulate) {
  const Tensor* ap = &a;
  const Tensor* bp = &b;
  Tensor at;
  Tensor bt;
  if (ta == Trans::kYes) {
    at = transpose(a);
    ap = &at;
  }
  if (tb == Trans::kYes) {
    bt = transpose(b);
    bp = &bt;
  }
  const std::size_t m = ap->rows();
  const std::size_t k = ap->cols();
  const std::size_t n = bp->cols();
  if (bp->rows() != k) throw std::invalid_argument("gemm: inner dimensions differ");
  if (!accumulate) {
    c = Tensor(m, n);
  } else if (c.rows() != m || c.cols() != n) {
    throw std::invalid_argument("gemm: accumulator shape mismatch");
  }
  if (m == 0 || n == 0 || k == 0) return;
  gemm_nn(ap->data(), bp->data(), c.data(), m, k, n);
}

void attention_forward(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionShape& s, Tensor& out,
                       std::vector<double>* probs) {
  out = Tensor(s.groups * s.q_len, s.width());
  if (probs) probs->assign(s.probs_size(), 0.0);
  constexpr std::size_t kPackedScores = 64 * 64;
  if (s.q_len * s.kv_len >= kPackedScores) {
    for (std::size_t g = 0; g < s.groups; ++g) {
      for (std::size_t h = 0; h < s.heads; ++h) attend_block(q, k, v, s, g, h, out, probs);
    }
    return;
  }
  constexpr std::size_t kQueryBlock = 16;
  const std::size_t q_blocks = (s.q_len + kQueryBlock - 1) / kQueryBlock;
  const std::ptrdiff_t tasks = static_cast<std::ptrdiff_t>(s.groups * s.heads * q_blocks);
#pragma omp parallel
  {
    std::vector<double> scratch;
#pragma omp for schedule(static)
    for (std::ptrdiff_t t = 0; t < tasks; ++t) {
      const std::size_t task = static_cast<std::size_t>(t);
      const std::size_t qb = task % q_blocks;
      const std::size_t gh = task / q_blocks;
      const std::size_t i0 = qb * kQueryBlock;
      attend_rows(q, k, v, s, gh / s.heads, gh % s.heads, i0, std::min(s.q_len, i0 + kQueryBlock), out, probs,
                  scratch);
    }
  }
}

void attention_backward(const Tensor& q, const Tensor& k, const Tensor& v, const std::vector<double>& probs,
                        const Tensor& dout, const AttentionShape& s, Tensor& dq, Tensor& dk, Tensor& dv) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(s.head_dim));
  const std::ptrdiff_t tasks = static_cast<std::ptrdiff_t>(s.groups * s.heads);
#pragma omp parallel
  {
    std::vector<double> dp(s.kv_len);
#pragma omp for schedule(static)
    for (std::ptrdiff_t t = 0; t < tasks; ++t) {
      const std::size_t g = static_cast<std::size_t>(t) / s.heads;
      const std::size_t h = static_cast<std::size_t>(t) % s.heads;
      const std::size_t c0 = h * s.head_dim;
      for (std::size_t i = 0; i < s.q_len; ++i) {
        const std::size_t qi = g * s.q_len + i;
        const double* p = probs.data() + ((g * s.heads + h) * s.q_len + i) * s.kv_len;
        const double* go = dout.data() + qi * dout.cols() + c0;
        double weighted = 0.0;
        for (std::size_t j = 0; j < s.kv_len; ++j) {
          const std::size_t kj = g * s.kv_len + j;
          const double* vrow = v.data() + kj * v.cols() + c0;
          double* dvrow = dv.data() + kj * dv.cols() + c0;
          const double pj = p[j];
          double dot = 0.0;
#pragma omp simd reduction(+ : dot)
          for (std::size_t d = 0; d < s.head_dim; ++d) {
            dot += go[d] * vrow[d];
            dvrow[d] += pj * go[d];
          }
          dp[j] = dot;
          weighted += dot * pj;
        }
        const double* qrow = q.data() + qi * q.cols() + c0;
        double* dqrow = dq.data() + qi * dq.cols() + c0;
        for (std::size_t j = 0; j < s.kv_len; ++j) {
          const std::size_t kj = g * s.kv_len + j;
          const double ds = p[j] * (dp[j] - weighted) * scale;
          const double* krow = k.data() + kj * k.cols() + c0;
          double* dkrow = dk.data() + kj * dk.cols() + c0;
#pragma omp simd
          for (std::size_t d = 0; d < s.head_dim; ++d) {
            dqrow[d] += ds * krow[d];
            dkrow[d] += ds * qrow[d];
          }
        }
      }
    }
  }
}

void spmm(const Csr& m, const Tensor& x, Tensor& y) {
  if (m.n_cols != x.rows()) throw std::invalid_argument("spmm: dimension mismatch");
  y = Tensor(m.n_rows, x.cols());
  const std::ptrdiff_t rows = static_cast<std::ptrdiff_t>(m.n_rows);
  const std::size_t width = x.cols();
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t r = 0; r < rows; ++r) {
    double* yrow = y.data() + static_cast<std::size_t>(r) * width;
    for (std::size_t e = m.row_ptr[r]; e < m.row_ptr[r + 1]; ++e) {
      const double w = m.val[e];
      const double* xrow = x.data() + m.col[e] * width;
#pragma omp simd
      for (std::size_t c = 0; c < width; ++c) yrow[c] += w * xrow[c];
    }
  }
}

void squared_distances(const Tensor& z, const Tensor& codes, std::size_t begin, std::size_t end, Tensor& out) {
  if (z.cols() != codes.cols()) throw std::invalid_argument("squared_distances: width mismatch");
  const std::size_t span = end - begin;
  const std::size_t width = codes.cols();
  Tensor block(span, width);
  std::copy(codes.data() + begin * width, codes.data() + end * width, block.data());
  gemm(z, Trans::kNo, block, Trans::kYes, out);
  std::vector<double> code_norm(span);
  for (std::size_t j = 0; j < span; ++j) {
    double acc = 0.0;
    for (std::size_t d = 0; d < width; ++d) acc += block(j, d) * block(j, d);
    code_norm[j] = acc;
  }
  const std::ptrdiff_t rows = static_cast<std::ptrdiff_t>(z.rows());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < rows; ++i) {
    double zz = 0.0;
    for (std::size_t d = 0; d < width; ++d) zz += z(i, d) * z(i, d);
    for (std::size_t j = 0; j < span; ++j) out(i, j) = zz - 2.0 * out(i, j) + code_norm[j];
  }
}

}  // namespace parallel
}  // namespace sweettok::kernels
