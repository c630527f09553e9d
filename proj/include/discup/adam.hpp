#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "discup/error.hpp"
#include "discup/tensor.hpp"

namespace discup {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction over a fixed parameter list. Accumulators live
// per parameter element; step() consumes whatever gradients backward()
// deposited and leaves them in place (call zero_grad() between steps).
template <typename S>
class Adam {
 public:
  Adam(std::vector<Tensor<S>> params, AdamConfig cfg = {})
      : params_(std::move(params)), cfg_(cfg) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& p : params_) {
      m_.emplace_back(p.numel(), S(0));
      v_.emplace_back(p.numel(), S(0));
    }
  }

  void step() {
    ++t_;
    const S b1 = S(cfg_.beta1), b2 = S(cfg_.beta2);
    const S corr1 = S(1) - S(std::pow(cfg_.beta1, double(t_)));
    const S corr2 = S(1) - S(std::pow(cfg_.beta2, double(t_)));
    const S lr = S(cfg_.lr), eps = S(cfg_.eps);
    for (size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i];
      const auto& g = p.grad();
      if (g.size() != p.numel())
        throw ContractViolation("adam: gradient/parameter shape mismatch");
      S* w = p.data();
      S* m = m_[i].data();
      S* v = v_[i].data();
      for (size_t j = 0; j < g.size(); ++j) {
        m[j] = b1 * m[j] + (S(1) - b1) * g[j];
        v[j] = b2 * v[j] + (S(1) - b2) * g[j] * g[j];
        const S mhat = m[j] / corr1;
        const S vhat = v[j] / corr2;
        w[j] -= lr * mhat / (std::sqrt(vhat) + eps);
      }
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  int64_t steps() const { return t_; }
  const std::vector<Tensor<S>>& params() const { return params_; }

 private:
  std::vector<Tensor<S>> params_;
  AdamConfig cfg_;
  std::vector<std::vector<S>> m_, v_;
  int64_t t_ = 0;
};

}  // namespace discup
