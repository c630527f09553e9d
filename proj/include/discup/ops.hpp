#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <vector>

#include "discup/error.hpp"
#include "discup/kernels.hpp"
#include "discup/tensor.hpp"

namespace discup {

namespace detail {

template <typename S>
inline void check_same_shape(const Tensor<S>& a, const Tensor<S>& b,
                             const char* op) {
  if (a.shape() != b.shape())
    throw ContractViolation(std::string(op) + ": shape mismatch");
}

inline int rows_of(const std::vector<int>& shape) {
  return shape.size() == 1 ? 1 : shape[0];
}
inline int cols_of(const std::vector<int>& shape) {
  return shape.size() == 1 ? shape[0] : shape[1];
}

template <typename S>
inline void transpose(const S* a, S* at, int n, int m) {
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) at[size_t(j) * n + i] = a[size_t(i) * m + j];
}

// C[n,m] += A[n,k] * B[k,m]
template <typename S>
inline void matmul_acc(const S* a, const S* b, S* c, int n, int k, int m) {
  for (int i = 0; i < n; ++i) {
    S* ci = c + size_t(i) * m;
    const S* ai = a + size_t(i) * k;
    for (int p = 0; p < k; ++p) {
      const S av = ai[p];
      const S* bp = b + size_t(p) * m;
      for (int j = 0; j < m; ++j) ci[j] += av * bp[j];
    }
  }
}

}  // namespace detail

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape(a, b, "add");
  auto out = Tensor<S>::zeros(a.shape());
  for (size_t i = 0; i < a.numel(); ++i)
    out.data()[i] = a.data()[i] + b.data()[i];
  if (a.requires_grad() || b.requires_grad()) {
    auto* on = out.raw();
    on->requires_grad = true;
    on->parents = {a.node(), b.node()};
    auto *an = a.raw(), *bn = b.raw();
    on->backward_fn = [on, an, bn]() {
      if (an->requires_grad) {
        an->ensure_grad();
        for (size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (size_t i = 0; i < on->grad.size(); ++i) bn->grad[i] += on->grad[i];
      }
    };
  }
  return out;
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape(a, b, "sub");
  auto out = Tensor<S>::zeros(a.shape());
  for (size_t i = 0; i < a.numel(); ++i)
    out.data()[i] = a.data()[i] - b.data()[i];
  if (a.requires_grad() || b.requires_grad()) {
    auto* on = out.raw();
    on->requires_grad = true;
    on->parents = {a.node(), b.node()};
    auto *an = a.raw(), *bn = b.raw();
    on->backward_fn = [on, an, bn]() {
      if (an->requires_grad) {
        an->ensure_grad();
        for (size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (size_t i = 0; i < on->grad.size(); ++i) bn->grad[i] -= on->grad[i];
      }
    };
  }
  return out;
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape(a, b, "mul");
  auto out = Tensor<S>::zeros(a.shape());
  for (size_t i = 0; i < a.numel(); ++i)
    out.data()[i] = a.data()[i] * b.data()[i];
  if (a.requires_grad() || b.requires_grad()) {
    auto* on = out.raw();
    on->requires_grad = true;
    on->parents = {a.node(), b.node()};
    auto *an = a.raw(), *bn = b.raw();
    on->backward_fn = [on, an, bn]() {
      if (an->requires_grad) {
        an->ensure_grad();
        for (size_t i = 0; i < on->grad.size(); ++i)
          an->grad[i] += on->grad[i] * bn->value[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (size_t i = 0; i < on->grad.size(); ++i)
          bn->grad[i] += on->grad[i] * an->value[i];
      }
    };
  }
  return out;
}

template <typename S>
Tensor<S> scale(const Tensor<S>& a, S c) {
  auto out = Tensor<S>::zeros(a.shape());
  for (size_t i = 0; i < a.numel(); ++i) out.data()[i] = a.data()[i] * c;
  if (a.requires_grad()) {
    auto* on = out.raw();
    on->requires_grad = true;
    on->parents = {a.node()};
    auto* an = a.raw();
    on->backward_fn = [on, an, c]() {
      an->ensure_grad();
      for (size_t i = 0; i < on->grad.size(); ++i)
        an->grad[i] += on->grad[i] * c;
    };
  }
  return out;
}

// x[n,m] + bias[m], broadcast over rows.
template <typename S>
Tensor<S> add_bias(const Tensor<S>& x, const Tensor<S>& bias) {
  const int n = detail::rows_of(x.shape()), m = detail::cols_of(x.shape());
  if (int(bias.numel()) != m)
    throw ContractViolation("add_bias: bias length mismatch");
  auto out = Tensor<S>::zeros(x.shape());
  for (int i = 0; i < n; ++i)
    kernels::add_row(x.data() + size_t(i) * m, bias.data(),
                     out.data() + size_t(i) * m, m);
  if (x.requires_grad() || bias.requires_grad()) {
    auto* on = out.raw();
    on->requires_grad = true;
    on->parents = {x.node(), bias.node()};
    auto *xn = x.raw(), *bn = bias.raw();
    on->backward_fn = [on, xn, bn, n, m]() {
      if (xn->requires_grad) {
        xn->ensure_grad();
        for (size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += on->grad[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < m; ++j)
            bn->grad[j] += on->grad[size_t(i) * m + j];
      }
    };
  }
  return out;
}

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.cols() != b.rows())
    throw ContractViolation("matmul: incompatible shapes");
  const int n = a.rows(), k = a.cols(), m = b.cols();
  auto out = Tensor<S>::zeros({n, m});
  kernels::matmul(a.data(), b.data(), out.data(), n, k, m);
  if (a.requires_grad() || b.requires_grad()) {
    auto* on = out.raw();
    on->requires_grad = true;
    on->parents = {a.node(), b.node()};
    auto *an = a.raw(), *bn = b.raw();
    on->backward_fn = [on, an, bn, n, k, m]() {
      if (an->requires_grad) {
        an->ensure_grad();
        std::vector<S> bt(size_t(m) * k);
        detail::transpose(bn->value.data(), bt.data(), k, m);
        detail::matmul_acc(on->grad.data(), bt.data(), an->grad.data(), n, m,
                           k);
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        std::vector<S> at(size_t(k) * n);
        detail::transpose(an->value.data(), at.data(), n, k);
        detail::matmul_acc(at.data(), on->grad.data(), bn->grad.data(), k, n,
                           m);
      }
    };
  }
  return out;
}

template <typename S>
Tensor<S> slice_rows(const Tensor<S>& x, int r0, int r1) {
  const int n = x.rows(), m = x.cols();
  if (r0 < 0 || r1 > n || r0 >= r1)
    throw ContractViolation("slice_rows: bad range");
  auto out = Tensor<S>::zeros({r1 - r0, m});
  std::copy(x.data() + size_t(r0) * m, x.data() + size_t(r1) * m, out.data());
  if (x.requires_grad()) {
    auto* on = out.raw();
    on->requires_grad = true;
    on->parents = {x.node()};
    auto* xn = x.raw();
    on->backward_fn = [on, xn, r0, m]() {
      xn->ensure_grad();
      for (size_t i = 0; i < on->grad.size(); ++i)
        xn->grad[size_t(r0) * m + i] += on->grad[i];
    };
  }
  return out;
}

template <typename S>
Tensor<S> slice_cols(const Tensor<S>& x, int c0, int c1) {
  const int n = detail::rows_of(x.shape()), m = detail::cols_of(x.shape());
  if (c0 < 0 || c1 > m || c0 >= c1)
    throw ContractViolation("slice_cols: bad range");
  const int w = c1 - c0;
  auto out = Tensor<S>::zeros({n, w});
  for (int i = 0; i < n; ++i)
    std::copy(x.data() + size_t(i) * m + c0, x.data() + size_t(i) * m + c1,
              out.data() + size_t(i) * w);
  if (x.requires_grad()) {
    auto* on = out.raw();
    on->requires_grad = true;
    on->parents = {x.node()};
    auto* xn = x.raw();
    on->backward_fn = [on, xn, c0, m, w, n]() {
      xn->ensure_grad();
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < w; ++j)
          xn->grad[size_t(i) * m + c0 + j] += on->grad[size_t(i) * w + j];
    };
  }
  return out;
}

template <typename S>
Tensor<S> concat_rows(const std::vector<Tensor<S>>& parts) {
  if (parts.empty()) throw ContractViolation("concat_rows: no inputs");
  const int m = parts[0].cols();
  int n = 0;
  bool needs = false;
  for (const auto& p : parts) {
    if (p.cols() != m) throw ContractViolation("concat_rows: column mismatch");
    n += p.rows();
    needs = needs || p.requires_grad();
  }
  auto out = Tensor<S>::zeros({n, m});
  size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.data(), p.data() + p.numel(), out.data() + off);
    off += p.numel();
  }
  if (needs) {
    auto* on = out.raw();
    on->requires_grad = true;
    for (const auto& p : parts) on->parents.push_back(p.node());
    on->backward_fn = [on]() {
      size_t off = 0;
      for (auto& pn : on->parents) {
        if (pn->requires_grad) {
          pn->ensure_grad();
          for (size_t i = 0; i < pn->value.size(); ++i)
            pn->grad[i] += on->grad[off + i];
        }
        off += pn->value.size();
      }
    };
  }
  return out;
}

// Row lookup: out[i,:] = table[ids[i],:]
template <typename S>
Tensor<S> embedding(const Tensor<S>& table, const std::vector<int>& ids) {
  const int v = table.rows(), d = table.cols();
  auto out = Tensor<S>::zeros({int(ids.size()), d});
  for (size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= v)
      throw ContractViolation("embedding: id out of range");
    std::copy(table.data() + size_t(ids[i]) * d,
              table.data() + size_t(ids[i] + 1) * d, out.data() + i * d);
  }
  if (table.requires_grad()) {
    auto* on = out.raw();
    on->requires_grad = true;
    on->parents = {table.node()};
    auto* tn = table.raw();
    on->backward_fn = [on, tn, ids, d]() {
      tn->ensure_grad();
      for (size_t i = 0; i < ids.size(); ++i)
        for (int j = 0; j < d; ++j)
          tn->grad[size_t(ids[i]) * d + j] += on->grad[i * d + j];
    };
  }
  return out;
}

template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gain,
                     const Tensor<S>& bias, S eps = S(1e-5)) {
  const int n = detail::rows_of(x.shape()), m = detail::cols_of(x.shape());
  if (int(gain.numel()) != m || int(bias.numel()) != m)
    throw ContractViolation("layer_norm: parameter length mismatch");
  auto out = Tensor<S>::zeros(x.shape());
  std::vector<S> means(n), rstds(n);
  for (int i = 0; i < n; ++i)
    kernels::layernorm_row(x.data() + size_t(i) * m, gain.data(), bias.data(),
                           out.data() + size_t(i) * m, m, eps, &means[i],
                           &rstds[i]);
  if (x.requires_grad() || gain.requires_grad() || bias.requires_grad()) {
    auto* on = out.raw();
    on->requires_grad = true;
    on->parents = {x.node(), gain.node(), bias.node()};
    auto *xn = x.raw(), *gn = gain.raw(), *bn = bias.raw();
    on->backward_fn = [on, xn, gn, bn, means, rstds, n, m]() {
      for (int i = 0; i < n; ++i) {
        const S* dy = on->grad.data() + size_t(i) * m;
        const S* xi = xn->value.data() + size_t(i) * m;
        const S mean = means[i], rstd = rstds[i];
        if (gn->requires_grad) {
          gn->ensure_grad();
          for (int j = 0; j < m; ++j)
            gn->grad[j] += dy[j] * (xi[j] - mean) * rstd;
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          for (int j = 0; j < m; ++j) bn->grad[j] += dy[j];
        }
        if (xn->requires_grad) {
          xn->ensure_grad();
          S* dx = xn->grad.data() + size_t(i) * m;
          S sum_dxhat = S(0), sum_dxhat_xhat = S(0);
          for (int j = 0; j < m; ++j) {
            S xhat = (xi[j] - mean) * rstd;
            S dxhat = dy[j] * gn->value[j];
            sum_dxhat += dxhat;
            sum_dxhat_xhat += dxhat * xhat;
          }
          for (int j = 0; j < m; ++j) {
            S xhat = (xi[j] - mean) * rstd;
            S dxhat = dy[j] * gn->value[j];
            dx[j] += rstd * (dxhat - sum_dxhat / S(m) -
                             xhat * sum_dxhat_xhat / S(m));
          }
        }
      }
    };
  }
  return out;
}

template <typename S>
Tensor<S> gelu(const Tensor<S>& x) {
  auto out = Tensor<S>::zeros(x.shape());
  for (size_t i = 0; i < x.numel(); ++i)
    out.data()[i] = kernels::gelu(x.data()[i]);
  if (x.requires_grad()) {
    auto* on = out.raw();
    on->requires_grad = true;
    on->parents = {x.node()};
    auto* xn = x.raw();
    on->backward_fn = [on, xn]() {
      xn->ensure_grad();
      for (size_t i = 0; i < on->grad.size(); ++i)
        xn->grad[i] += on->grad[i] * kernels::gelu_grad(xn->value[i]);
    };
  }
  return out;
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& x) {
  auto out = Tensor<S>::zeros(x.shape());
  for (size_t i = 0; i < x.numel(); ++i)
    out.data()[i] = S(1) / (S(1) + std::exp(-x.data()[i]));
  if (x.requires_grad()) {
    auto* on = out.raw();
    on->requires_grad = true;
    on->parents = {x.node()};
    auto* xn = x.raw();
    on->backward_fn = [on, xn]() {
      xn->ensure_grad();
      for (size_t i = 0; i < on->grad.size(); ++i) {
        S y = on->value[i];
        xn->grad[i] += on->grad[i] * y * (S(1) - y);
      }
    };
  }
  return out;
}

template <typename S>
Tensor<S> tanh_op(const Tensor<S>& x) {
  auto out = Tensor<S>::zeros(x.shape());
  for (size_t i = 0; i < x.numel(); ++i) out.data()[i] = std::tanh(x.data()[i]);
  if (x.requires_grad()) {
    auto* on = out.raw();
    on->requires_grad = true;
    on->parents = {x.node()};
    auto* xn = x.raw();
    on->backward_fn = [on, xn]() {
      xn->ensure_grad();
      for (size_t i = 0; i < on->grad.size(); ++i) {
        S y = on->value[i];
        xn->grad[i] += on->grad[i] * (S(1) - y * y);
      }
    };
  }
  return out;
}

// Row-wise stable softmax. Rejects non-finite input.
template <typename S>
Tensor<S> softmax_rows(const Tensor<S>& x) {
  const int n = detail::rows_of(x.shape()), m = detail::cols_of(x.shape());
  for (size_t i = 0; i < x.numel(); ++i)
    if (!std::isfinite(x.data()[i]))
      throw InvalidInputError("softmax: non-finite input");
  auto out = Tensor<S>::zeros(x.shape());
  for (int i = 0; i < n; ++i) {
    std::copy(x.data() + size_t(i) * m, x.data() + size_t(i + 1) * m,
              out.data() + size_t(i) * m);
    kernels::softmax_row(out.data() + size_t(i) * m, m);
  }
  if (x.requires_grad()) {
    auto* on = out.raw();
    on->requires_grad = true;
    on->parents = {x.node()};
    auto* xn = x.raw();
    on->backward_fn = [on, xn, n, m]() {
      xn->ensure_grad();
      for (int i = 0; i < n; ++i) {
        const S* y = on->value.data() + size_t(i) * m;
        const S* dy = on->grad.data() + size_t(i) * m;
        S dot = S(0);
        for (int j = 0; j < m; ++j) dot += y[j] * dy[j];
        for (int j = 0; j < m; ++j)
          xn->grad[size_t(i) * m + j] += y[j] * (dy[j] - dot);
      }
    };
  }
  return out;
}

template <typename S>
Tensor<S> log_op(const Tensor<S>& x) {
  auto out = Tensor<S>::zeros(x.shape());
  for (size_t i = 0; i < x.numel(); ++i) out.data()[i] = std::log(x.data()[i]);
  if (x.requires_grad()) {
    auto* on = out.raw();
    on->requires_grad = true;
    on->parents = {x.node()};
    auto* xn = x.raw();
    on->backward_fn = [on, xn]() {
      xn->ensure_grad();
      for (size_t i = 0; i < on->grad.size(); ++i)
        xn->grad[i] += on->grad[i] / xn->value[i];
    };
  }
  return out;
}

// Clamp to [lo, hi]; gradient passes through strictly inside the range.
template <typename S>
Tensor<S> clamp(const Tensor<S>& x, S lo, S hi) {
  auto out = Tensor<S>::zeros(x.shape());
  for (size_t i = 0; i < x.numel(); ++i)
    out.data()[i] = std::min(hi, std::max(lo, x.data()[i]));
  if (x.requires_grad()) {
    auto* on = out.raw();
    on->requires_grad = true;
    on->parents = {x.node()};
    auto* xn = x.raw();
    on->backward_fn = [on, xn, lo, hi]() {
      xn->ensure_grad();
      for (size_t i = 0; i < on->grad.size(); ++i)
        if (xn->value[i] > lo && xn->value[i] < hi)
          xn->grad[i] += on->grad[i];
    };
  }
  return out;
}

// Element pick from a flat tensor: out[i] = x[idx[i]].
template <typename S>
Tensor<S> gather(const Tensor<S>& x, const std::vector<int>& idx) {
  auto out = Tensor<S>::zeros({int(idx.size())});
  for (size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= int(x.numel()))
      throw ContractViolation("gather: index out of range");
    out.data()[i] = x.data()[idx[i]];
  }
  if (x.requires_grad()) {
    auto* on = out.raw();
    on->requires_grad = true;
    on->parents = {x.node()};
    auto* xn = x.raw();
    on->backward_fn = [on, xn, idx]() {
      xn->ensure_grad();
      for (size_t i = 0; i < idx.size(); ++i) xn->grad[idx[i]] += on->grad[i];
    };
  }
  return out;
}

template <typename S>
Tensor<S> sum(const Tensor<S>& x) {
  S acc = S(0);
  for (size_t i = 0; i < x.numel(); ++i) acc += x.data()[i];
  auto out = Tensor<S>::scalar(acc);
  if (x.requires_grad()) {
    auto* on = out.raw();
    on->requires_grad = true;
    on->parents = {x.node()};
    auto* xn = x.raw();
    on->backward_fn = [on, xn]() {
      xn->ensure_grad();
      for (size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += on->grad[0];
    };
  }
  return out;
}

template <typename S>
Tensor<S> mean(const Tensor<S>& x) {
  return scale(sum(x), S(1) / S(x.numel()));
}

template <typename S>
Tensor<S> dot(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape(a, b, "dot");
  S acc = S(0);
  for (size_t i = 0; i < a.numel(); ++i) acc += a.data()[i] * b.data()[i];
  auto out = Tensor<S>::scalar(acc);
  if (a.requires_grad() || b.requires_grad()) {
    auto* on = out.raw();
    on->requires_grad = true;
    on->parents = {a.node(), b.node()};
    auto *an = a.raw(), *bn = b.raw();
    on->backward_fn = [on, an, bn]() {
      const S g = on->grad[0];
      if (an->requires_grad) {
        an->ensure_grad();
        for (size_t i = 0; i < an->grad.size(); ++i)
          an->grad[i] += g * bn->value[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (size_t i = 0; i < bn->grad.size(); ++i)
          bn->grad[i] += g * an->value[i];
      }
    };
  }
  return out;
}

// Fused causal multi-head self-attention over a packed qkv tensor.
// qkv rows are [q | k | v], each of width C = qkv.cols()/3; heads split C.
template <typename S>
Tensor<S> causal_self_attention(const Tensor<S>& qkv, int n_heads) {
  const int n = qkv.rows();
  const int c3 = qkv.cols();
  if (c3 % 3 != 0) throw ContractViolation("attention: qkv width not 3*C");
  const int c = c3 / 3;
  if (c % n_heads != 0) throw ContractViolation("attention: C % heads != 0");
  const int hs = c / n_heads;
  const S att_scale = S(1) / std::sqrt(S(hs));

  auto out = Tensor<S>::zeros({n, c});
  auto att = std::make_shared<std::vector<S>>(size_t(n_heads) * n * n, S(0));
  for (int h = 0; h < n_heads; ++h) {
    for (int t = 0; t < n; ++t) {
      const S* q = qkv.data() + size_t(t) * c3 + size_t(h) * hs;
      const S* k = qkv.data() + c + size_t(h) * hs;
      const S* v = qkv.data() + 2 * c + size_t(h) * hs;
      S* o = out.data() + size_t(t) * c + size_t(h) * hs;
      S* a = att->data() + (size_t(h) * n + t) * n;
      kernels::attention_row(q, k, v, o, a, t, hs, c3, att_scale);
    }
  }
  if (qkv.requires_grad()) {
    auto* on = out.raw();
    on->requires_grad = true;
    on->parents = {qkv.node()};
    auto* xn = qkv.raw();
    on->backward_fn = [on, xn, att, n, c, c3, hs, n_heads, att_scale]() {
      xn->ensure_grad();
      std::vector<S> datt(n);
      for (int h = 0; h < n_heads; ++h) {
        for (int t = 0; t < n; ++t) {
          const S* dy = on->grad.data() + size_t(t) * c + size_t(h) * hs;
          const S* a = att->data() + (size_t(h) * n + t) * n;
          const S* q = xn->value.data() + size_t(t) * c3 + size_t(h) * hs;
          S* dq = xn->grad.data() + size_t(t) * c3 + size_t(h) * hs;
          // datt_j = dy . v_j ; dv_j += a_j * dy
          for (int j = 0; j <= t; ++j) {
            const S* vj = xn->value.data() + size_t(j) * c3 + 2 * c +
                          size_t(h) * hs;
            S* dvj = xn->grad.data() + size_t(j) * c3 + 2 * c +
                     size_t(h) * hs;
            S acc = S(0);
            for (int d = 0; d < hs; ++d) {
              acc += dy[d] * vj[d];
              dvj[d] += a[j] * dy[d];
            }
            datt[j] = acc;
          }
          // softmax backward over scores
          S dot_ad = S(0);
          for (int j = 0; j <= t; ++j) dot_ad += a[j] * datt[j];
          for (int j = 0; j <= t; ++j) {
            const S dscore = a[j] * (datt[j] - dot_ad) * att_scale;
            const S* kj =
                xn->value.data() + size_t(j) * c3 + c + size_t(h) * hs;
            S* dkj = xn->grad.data() + size_t(j) * c3 + c + size_t(h) * hs;
            for (int d = 0; d < hs; ++d) {
              dq[d] += dscore * kj[d];
              dkj[d] += dscore * q[d];
            }
          }
        }
      }
    };
  }
  return out;
}

// Mean cross-entropy of softmax(logits[row]) against targets, over rows
// [first_row, first_row + targets.size()).
template <typename S>
Tensor<S> cross_entropy_rows(const Tensor<S>& logits,
                             const std::vector<int>& targets, int first_row) {
  const int n = logits.rows(), m = logits.cols();
  const int count = int(targets.size());
  if (count == 0) throw ContractViolation("cross_entropy: no targets");
  if (first_row < 0 || first_row + count > n)
    throw ContractViolation("cross_entropy: row range out of bounds");
  auto probs = std::make_shared<std::vector<S>>(size_t(count) * m);
  S total = S(0);
  for (int r = 0; r < count; ++r) {
    const S* x = logits.data() + size_t(first_row + r) * m;
    S* p = probs->data() + size_t(r) * m;
    std::copy(x, x + m, p);
    kernels::softmax_row(p, m);
    const int tgt = targets[r];
    if (tgt < 0 || tgt >= m)
      throw ContractViolation("cross_entropy: target out of range");
    total += -std::log(std::max(p[tgt], S(1e-30)));
  }
  auto out = Tensor<S>::scalar(total / S(count));
  if (logits.requires_grad()) {
    auto* on = out.raw();
    on->requires_grad = true;
    on->parents = {logits.node()};
    auto* ln = logits.raw();
    on->backward_fn = [on, ln, probs, targets, first_row, m, count]() {
      ln->ensure_grad();
      const S g = on->grad[0] / S(count);
      for (int r = 0; r < count; ++r) {
        const S* p = probs->data() + size_t(r) * m;
        S* dx = ln->grad.data() + size_t(first_row + r) * m;
        for (int j = 0; j < m; ++j) dx[j] += g * p[j];
        dx[targets[r]] -= g;
      }
    };
  }
  return out;
}

}  // namespace discup
