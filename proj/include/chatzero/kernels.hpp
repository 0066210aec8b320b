#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>

// Dense kernels used by the autograd ops. Each kernel has an OpenMP-parallel
// version (namespace kernels) and a plain serial reference (kernels::serial)
// kept for tests and benchmarks. The parallel versions partition output rows
// across threads and keep a fixed per-element summation order, so results do
// not depend on the thread count.

#include <span>

namespace chatzero::kernels {

// exp for float with about 2 ulp error; branch-free so loops vectorize.
inline float exp_approx(float x) {
  x = x < -87.3f ? -87.3f : x;
  x = x > 88.0f ? 88.0f : x;
  const float t = x * 1.44269504088896341f;
  const std::int32_t ni = static_cast<std::int32_t>(t + std::copysign(0.5f, t));
  const float n = static_cast<float>(ni);
  float r = x - n * 0.693359375f;
  r -= n * -2.12194440e-4f;
  float p = 1.9875691500e-4f;
  p = p * r + 1.3981999507e-3f;
  p = p * r + 8.3334519073e-3f;
  p = p * r + 4.1665795894e-2f;
  p = p * r + 1.6666665459e-1f;
  p = p * r + 5.0000001201e-1f;
  p = p * r * r + r + 1.0f;
  const std::int32_t bits = (ni + 127) << 23;
  return p * std::bit_cast<float>(bits);
}

// C[m,n] (+)= A[m,k] * B[k,n]
void matmul(std::span<const float> a, std::span<const float> b, std::span<float> c, int m, int k, int n,
            bool accumulate = false);
// C[m,n] (+)= A[m,k] * B[n,k]^T
void matmul_bt(std::span<const float> a, std::span<const float> b, std::span<float> c, int m, int k, int n,
               bool accumulate = false);
// C[m,n] (+)= A[k,m]^T * B[k,n]
void matmul_at(std::span<const float> a, std::span<const float> b, std::span<float> c, int m, int k, int n,
               bool accumulate = false);

void softmax_rows(std::span<float> x, int rows, int cols);

// Per-row layer norm; writes normalized values (before gain/bias) to xhat and
// 1/sigma per row to rstd.
void layer_norm(std::span<const float> x, std::span<const float> gain, std::span<const float> bias,
                std::span<float> out, std::span<float> xhat, std::span<float> rstd, int rows, int cols, float eps);

// Packed multi-head attention over a batch of padded sequences.
// q is [batch*q_len, dim], k and v are [batch*k_len, dim]; head h owns columns
// [h*dim/heads, (h+1)*dim/heads). Keys at positions >= key_lengths[b] are
// masked, and with causal set query i only sees keys j <= i.
struct AttentionShape {
  int batch = 0;
  int q_len = 0;
  int k_len = 0;
  int dim = 0;
  int heads = 1;
  bool causal = false;
};

// probs receives [batch, heads, q_len, k_len] attention weights.
void attention_forward(std::span<const float> q, std::span<const float> k, std::span<const float> v,
                       std::span<const int> key_lengths, const AttentionShape& shape, std::span<float> out,
                       std::span<float> probs);

void attention_backward(std::span<const float> q, std::span<const float> k, std::span<const float> v,
                        std::span<const float> probs, std::span<const float> grad_out, const AttentionShape& shape,
                        std::span<float> grad_q, std::span<float> grad_k, std::span<float> grad_v);

namespace serial {

void matmul(std::span<const float> a, std::span<const float> b, std::span<float> c, int m, int k, int n,
            bool accumulate = false);
void matmul_bt(std::span<const float> a, std::span<const float> b, std::span<float> c, int m, int k, int n,
               bool accumulate = false);
void matmul_at(std::span<const float> a, std::span<const float> b, std::span<float> c, int m, int k, int n,
               bool accumulate = false);
void softmax_rows(std::span<float> x, int rows, int cols);
void layer_norm(std::span<const float> x, std::span<const float> gain, std::span<const float> bias,
                std::span<float> out, std::span<float> xhat, std::span<float> rstd, int rows, int cols, float eps);
void attention_forward(std::span<const float> q, std::span<const float> k, std::span<const float> v,
                       std::span<const int> key_lengths, const AttentionShape& shape, std::span<float> out,
                       std::span<float> probs);

}  // namespace serial

int max_threads();

}  // namespace chatzero::kernels
