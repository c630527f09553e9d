#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "discup/tensor.hpp"

namespace discup {

// Central-difference gradient oracle: (f(x+eps*e_i) - f(x-eps*e_i)) / (2 eps)
// per element of each parameter tensor. f is re-evaluated with the parameter
// storage perturbed in place, independent of any recorded graph.
template <typename S>
std::vector<std::vector<S>> finite_difference_gradient(
    const std::function<S()>& f, std::vector<Tensor<S>> params, S eps) {
  std::vector<std::vector<S>> grads;
  grads.reserve(params.size());
  for (auto& p : params) {
    std::vector<S> g(p.numel());
    for (size_t i = 0; i < p.numel(); ++i) {
      const S saved = p.data()[i];
      p.data()[i] = saved + eps;
      const S hi = f();
      p.data()[i] = saved - eps;
      const S lo = f();
      p.data()[i] = saved;
      g[i] = (hi - lo) / (S(2) * eps);
    }
    grads.push_back(std::move(g));
  }
  return grads;
}

// Worst-case disagreement between analytic and finite-difference gradients,
// as |a-fd| / max(|a|, |fd|, 1e-6): relative for meaningful magnitudes,
// absolute against 1e-10 (at the usual 1e-4 threshold) below the floor.
// Double-precision central differences carry ~|f|*u/(2*eps) irreducible
// noise, so sub-floor components cannot be compared relatively.
template <typename S>
S grad_mismatch(const std::vector<S>& analytic, const std::vector<S>& fd) {
  S worst = S(0);
  for (size_t i = 0; i < analytic.size(); ++i) {
    const S a = analytic[i], b = fd[i];
    const S mag = std::max({std::abs(a), std::abs(b), S(1e-6)});
    worst = std::max(worst, std::abs(a - b) / mag);
  }
  return worst;
}

}  // namespace discup
