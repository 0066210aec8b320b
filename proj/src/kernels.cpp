#include "chatzero/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "chatzero/omp.hpp"

namespace chatzero::kernels {

namespace {

// Four output rows at a time so each loaded row of B feeds four FMAs.
inline void matmul_block4(const float* a, const float* b, float* c, int k, int n) {
  float* c0 = c;
  float* c1 = c + n;
  float* c2 = c + 2 * n;
  float* c3 = c + 3 * n;
  const float* a0 = a;
  const float* a1 = a + k;
  const float* a2 = a + 2 * k;
  const float* a3 = a + 3 * k;
  for (int p = 0; p < k; ++p) {
    const float* bp = b + static_cast<std::size_t>(p) * n;
    const float x0 = a0[p], x1 = a1[p], x2 = a2[p], x3 = a3[p];
#pragma omp simd
    for (int j = 0; j < n; ++j) {
      const float bv = bp[j];
      c0[j] += x0 * bv;
      c1[j] += x1 * bv;
      c2[j] += x2 * bv;
      c3[j] += x3 * bv;
    }
  }
}

inline void matmul_row(const float* a, const float* b, float* c, int k, int n) {
  for (int p = 0; p < k; ++p) {
    const float* bp = b + static_cast<std::size_t>(p) * n;
    const float x = a[p];
#pragma omp simd
    for (int j = 0; j < n; ++j) c[j] += x * bp[j];
  }
}

void transpose(const float* src, float* dst, int rows, int cols) {
#pragma omp parallel for schedule(static) if (static_cast<long>(rows) * cols > 65536)
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) dst[static_cast<std::size_t>(c) * rows + r] = src[static_cast<std::size_t>(r) * cols + c];
}

void softmax_row(float* x, int cols) {
  float mx = -std::numeric_limits<float>::infinity();
  for (int j = 0; j < cols; ++j) mx = std::max(mx, x[j]);
  float sum = 0.0f;
#pragma omp simd reduction(+ : sum)
  for (int j = 0; j < cols; ++j) {
    x[j] = exp_approx(x[j] - mx);
    sum += x[j];
  }
  const float inv = 1.0f / sum;
  for (int j = 0; j < cols; ++j) x[j] *= inv;
}

void layer_norm_row(const float* x, const float* gain, const float* bias, float* out, float* xhat, float* rstd,
                    int cols, float eps) {
  double mean = 0.0;
  for (int j = 0; j < cols; ++j) mean += x[j];
  mean /= cols;
  double var = 0.0;
  for (int j = 0; j < cols; ++j) {
    const double d = x[j] - mean;
    var += d * d;
  }
  var /= cols;
  const float r = static_cast<float>(1.0 / std::sqrt(var + eps));
  *rstd = r;
  for (int j = 0; j < cols; ++j) {
    const float h = static_cast<float>(x[j] - mean) * r;
    xhat[j] = h;
    out[j] = h * gain[j] + bias[j];
  }
}

// One (batch, head) slice of attention.
void attention_head(const float* q, const float* k, const float* v, int key_len, const AttentionShape& s, int b,
                    int h, float* out, float* probs) {
  const int dh = s.dim / s.heads;
  const float scale = 1.0f / std::sqrt(static_cast<float>(dh));
  const int col = h * dh;
  for (int i = 0; i < s.q_len; ++i) {
    const float* qi = q + (static_cast<std::size_t>(b) * s.q_len + i) * s.dim + col;
    float* pi = probs + ((static_cast<std::size_t>(b) * s.heads + h) * s.q_len + i) * s.k_len;
    const int limit = s.causal ? std::min(key_len, i + 1) : key_len;
    std::fill(pi, pi + s.k_len, 0.0f);
    float* oi = out + (static_cast<std::size_t>(b) * s.q_len + i) * s.dim + col;
    std::fill(oi, oi + dh, 0.0f);
    if (limit <= 0) continue;
    for (int j = 0; j < limit; ++j) {
      const float* kj = k + (static_cast<std::size_t>(b) * s.k_len + j) * s.dim + col;
      float dot = 0.0f;
      for (int c = 0; c < dh; ++c) dot += qi[c] * kj[c];
      pi[j] = dot * scale;
    }
    softmax_row(pi, limit);
    for (int j = 0; j < limit; ++j) {
      const float* vj = v + (static_cast<std::size_t>(b) * s.k_len + j) * s.dim + col;
      const float p = pi[j];
      for (int c = 0; c < dh; ++c) oi[c] += p * vj[c];
    }
  }
}

}  // namespace

int max_threads() { return omp_get_max_threads(); }

void matmul(std::span<const float> a, std::span<const float> b, std::span<float> c, int m, int k, int n,
            bool accumulate) {
  const int blocks = m / 4;
#pragma omp parallel
  {
#pragma omp for schedule(static)
    for (int blk = 0; blk < blocks; ++blk) {
      float* cr = c.data() + static_cast<std::size_t>(blk) * 4 * n;
      if (!accumulate) std::fill(cr, cr + 4 * static_cast<std::size_t>(n), 0.0f);
      matmul_block4(a.data() + static_cast<std::size_t>(blk) * 4 * k, b.data(), cr, k, n);
    }
#pragma omp for schedule(static)
    for (int i = blocks * 4; i < m; ++i) {
      float* cr = c.data() + static_cast<std::size_t>(i) * n;
      if (!accumulate) std::fill(cr, cr + n, 0.0f);
      matmul_row(a.data() + static_cast<std::size_t>(i) * k, b.data(), cr, k, n);
    }
  }
}

void matmul_bt(std::span<const float> a, std::span<const float> b, std::span<float> c, int m, int k, int n,
               bool accumulate) {
  std::vector<float> bt(static_cast<std::size_t>(k) * n);
  transpose(b.data(), bt.data(), n, k);
  matmul(a, bt, c, m, k, n, accumulate);
}

void matmul_at(std::span<const float> a, std::span<const float> b, std::span<float> c, int m, int k, int n,
               bool accumulate) {
  std::vector<float> at(static_cast<std::size_t>(m) * k);
  transpose(a.data(), at.data(), k, m);
  matmul(at, b, c, m, k, n, accumulate);
}

void softmax_rows(std::span<float> x, int rows, int cols) {
#pragma omp parallel for schedule(static)
  for (int r = 0; r < rows; ++r) softmax_row(x.data() + static_cast<std::size_t>(r) * cols, cols);
}

void layer_norm(std::span<const float> x, std::span<const float> gain, std::span<const float> bias,
                std::span<float> out, std::span<float> xhat, std::span<float> rstd, int rows, int cols, float eps) {
#pragma omp parallel for schedule(static)
  for (int r = 0; r < rows; ++r) {
    const std::size_t off = static_cast<std::size_t>(r) * cols;
    layer_norm_row(x.data() + off, gain.data(), bias.data(), out.data() + off, xhat.data() + off, rstd.data() + r,
                   cols, eps);
  }
}

void attention_forward(std::span<const float> q, std::span<const float> k, std::span<const float> v,
                       std::span<const int> key_lengths, const AttentionShape& shape, std::span<float> out,
                       std::span<float> probs) {
  const int work = shape.batch * shape.heads;
#pragma omp parallel for schedule(dynamic, 4)
  for (int w = 0; w < work; ++w) {
    const int b = w / shape.heads;
    const int h = w % shape.heads;
    attention_head(q.data(), k.data(), v.data(), key_lengths[b], shape, b, h, out.data(), probs.data());
  }
}

void attention_backward(std::span<const float> q, std::span<const float> k, std::span<const float> v,
                        std::span<const float> probs, std::span<const float> grad_out, const AttentionShape& s,
                        std::span<float> grad_q, std::span<float> grad_k, std::span<float> grad_v) {
  const int dh = s.dim / s.heads;
  const float scale = 1.0f / std::sqrt(static_cast<float>(dh));
  const int work = s.batch * s.heads;
#pragma omp parallel
  {
    std::vector<float> dp(s.k_len);
#pragma omp for schedule(dynamic, 4)
    for (int w = 0; w < work; ++w) {
      const int b = w / s.heads;
      const int col = (w % s.heads) * dh;
      for (int i = 0; i < s.q_len; ++i) {
        const std::size_t qrow = (static_cast<std::size_t>(b) * s.q_len + i) * s.dim + col;
        const float* pi = probs.data() + (static_cast<std::size_t>(w) * s.q_len + i) * s.k_len;
        const float* go = grad_out.data() + qrow;
        float weighted = 0.0f;
        for (int j = 0; j < s.k_len; ++j) {
          if (pi[j] == 0.0f) {
            dp[j] = 0.0f;
            continue;
          }
          const std::size_t krow = (static_cast<std::size_t>(b) * s.k_len + j) * s.dim + col;
          float dot = 0.0f;
          for (int c = 0; c < dh; ++c) {
            dot += go[c] * v[krow + c];
            grad_v[krow + c] += pi[j] * go[c];
          }
          dp[j] = dot;
          weighted += pi[j] * dot;
        }
        for (int j = 0; j < s.k_len; ++j) {
          if (pi[j] == 0.0f) continue;
          const float ds = pi[j] * (dp[j] - weighted) * scale;
          const std::size_t krow = (static_cast<std::size_t>(b) * s.k_len + j) * s.dim + col;
          for (int c = 0; c < dh; ++c) {
            grad_q[qrow + c] += ds * k[krow + c];
            grad_k[krow + c] += ds * q[qrow + c];
          }
        }
      }
    }
  }
}

namespace serial {

void matmul(std::span<const float> a, std::span<const float> b, std::span<float> c, int m, int k, int n,
            bool accumulate) {
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      float sum = accumulate ? c[static_cast<std::size_t>(i) * n + j] : 0.0f;
      for (int p = 0; p < k; ++p) sum += a[static_cast<std::size_t>(i) * k + p] * b[static_cast<std::size_t>(p) * n + j];
      c[static_cast<std::size_t>(i) * n + j] = sum;
    }
}

void matmul_bt(std::span<const float> a, std::span<const float> b, std::span<float> c, int m, int k, int n,
               bool accumulate) {
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      float sum = accumulate ? c[static_cast<std::size_t>(i) * n + j] : 0.0f;
      for (int p = 0; p < k; ++p) sum += a[static_cast<std::size_t>(i) * k + p] * b[static_cast<std::size_t>(j) * k + p];
      c[static_cast<std::size_t>(i) * n + j] = sum;
    }
}

void matmul_at(std::span<const float> a, std::span<const float> b, std::span<float> c, int m, int k, int n,
               bool accumulate) {
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      float sum = accumulate ? c[static_cast<std::size_t>(i) * n + j] : 0.0f;
      for (int p = 0; p < k; ++p) sum += a[static_cast<std::size_t>(p) * m + i] * b[static_cast<std::size_t>(p) * n + j];
      c[static_cast<std::size_t>(i) * n + j] = sum;
    }
}

void softmax_rows(std::span<float> x, int rows, int cols) {
  for (int r = 0; r < rows; ++r) softmax_row(x.data() + static_cast<std::size_t>(r) * cols, cols);
}

void layer_norm(std::span<const float> x, std::span<const float> gain, std::span<const float> bias,
                std::span<float> out, std::span<float> xhat, std::span<float> rstd, int rows, int cols, float eps) {
  for (int r = 0; r < rows; ++r) {
    const std::size_t off = static_cast<std::size_t>(r) * cols;
    layer_norm_row(x.data() + off, gain.data(), bias.data(), out.data() + off, xhat.data() + off, rstd.data() + r,
                   cols, eps);
  }
}

void attention_forward(std::span<const float> q, std::span<const float> k, std::span<const float> v,
                       std::span<const int> key_lengths, const AttentionShape& shape, std::span<float> out,
                       std::span<float> probs) {
  for (int b = 0; b < shape.batch; ++b)
    for (int h = 0; h < shape.heads; ++h)
      attention_head(q.data(), k.data(), v.data(), key_lengths[b], shape, b, h, out.data(), probs.data());
}

}  // namespace serial

}  // namespace chatzero::kernels
