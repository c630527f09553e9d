#pragma once

#include <cmath>
#include <cstddef>

namespace discup::kernels {

// Low-level numeric kernels shared by the autograd forward path and the
// incremental decode/scoring sessions. Both paths must call these same
// routines: per-element accumulation order is part of the contract, since
// incremental results are required to be bit-identical to full forwards.

// C[n,m] = A[n,k] * B[k,m], accumulated in ascending-k order per element.
template <typename S>
void matmul(const S* a, const S* b, S* c, int n, int k, int m) {
  for (int i = 0; i < n; ++i) {
    S* ci = c + size_t(i) * m;
    for (int j = 0; j < m; ++j) ci[j] = S(0);
    const S* ai = a + size_t(i) * k;
    for (int p = 0; p < k; ++p) {
      const S av = ai[p];
      const S* bp = b + size_t(p) * m;
      for (int j = 0; j < m; ++j) ci[j] += av * bp[j];
    }
  }
}

template <typename S>
void add_row(const S* x, const S* bias, S* y, int m) {
  for (int j = 0; j < m; ++j) y[j] = x[j] + bias[j];
}

// y = layernorm(x) * gain + bias over one row; returns mean and rstd for
// the backward pass.
template <typename S>
void layernorm_row(const S* x, const S* gain, const S* bias, S* y, int m,
                   S eps, S* mean_out, S* rstd_out) {
  S mean = S(0);
  for (int j = 0; j < m; ++j) mean += x[j];
  mean /= S(m);
  S var = S(0);
  for (int j = 0; j < m; ++j) {
    S d = x[j] - mean;
    var += d * d;
  }
  var /= S(m);
  S rstd = S(1) / std::sqrt(var + eps);
  for (int j = 0; j < m; ++j) y[j] = (x[j] - mean) * rstd * gain[j] + bias[j];
  *mean_out = mean;
  *rstd_out = rstd;
}

// GELU, tanh approximation.
template <typename S>
S gelu(S x) {
  const S c = S(0.7978845608028654);  // sqrt(2/pi)
  S u = c * (x + S(0.044715) * x * x * x);
  return S(0.5) * x * (S(1) + std::tanh(u));
}

template <typename S>
S gelu_grad(S x) {
  const S c = S(0.7978845608028654);
  S u = c * (x + S(0.044715) * x * x * x);
  S t = std::tanh(u);
  S du = c * (S(1) + S(0.134145) * x * x);
  return S(0.5) * (S(1) + t) + S(0.5) * x * (S(1) - t * t) * du;
}

// In-place stable softmax over one row.
template <typename S>
void softmax_row(S* x, int m) {
  S mx = x[0];
  for (int j = 1; j < m; ++j)
    if (x[j] > mx) mx = x[j];
  S sum = S(0);
  for (int j = 0; j < m; ++j) {
    x[j] = std::exp(x[j] - mx);
    sum += x[j];
  }
  S inv = S(1) / sum;
  for (int j = 0; j < m; ++j) x[j] *= inv;
}

// Attention for one query row t over keys/values rows 0..t (inclusive).
// q: [hs], k/v: rows of stride `stride` each [hs], out: [hs].
// att buffer must hold t+1 entries; left filled with the softmax weights.
template <typename S>
void attention_row(const S* q, const S* k, const S* v, S* out, S* att, int t,
                   int hs, int stride, S scale) {
  for (int j = 0; j <= t; ++j) {
    const S* kj = k + size_t(j) * stride;
    S dot = S(0);
    for (int d = 0; d < hs; ++d) dot += q[d] * kj[d];
    att[j] = dot * scale;
  }
  softmax_row(att, t + 1);
  for (int d = 0; d < hs; ++d) out[d] = S(0);
  for (int j = 0; j <= t; ++j) {
    const S aj = att[j];
    const S* vj = v + size_t(j) * stride;
    for (int d = 0; d < hs; ++d) out[d] += aj * vj[d];
  }
}

}  // namespace discup::kernels
