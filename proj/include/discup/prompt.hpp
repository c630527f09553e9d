#pragma once

#include <cmath>
#include <vector>

#include "discup/error.hpp"
#include "discup/ops.hpp"
#include "discup/rng.hpp"
#include "discup/tensor.hpp"
#include "discup/vocab.hpp"

namespace discup {

// Single-layer unidirectional LSTM, hidden size = d_emb, gate order [i f g o].
template <typename S>
struct LstmParams {
  Tensor<S> w_ih, w_hh;  // (d, 4d) each
  Tensor<S> b_ih, b_hh;  // (4d)
};

// Trainable control prompt: raw parameters plus the recurrent reparameterizer
// that produces the effective prompt rows. Only these parameters ever carry
// gradients during prompt tuning; the language model stays frozen.
template <typename S>
class PromptBlock {
 public:
  PromptBlock() = default;

  PromptBlock(int length, int d_emb, uint64_t seed, AttributeLabel tag = {1})
      : tag(tag) {
    if (length < 1) throw InvalidInputError("prompt: length must be >= 1");
    if (d_emb < 1) throw InvalidInputError("prompt: d_emb must be >= 1");
    Rng rng(seed);
    raw = Tensor<S>::randn({length, d_emb}, S(0.02), rng, true);
    const S bound = S(1) / std::sqrt(S(d_emb));
    lstm.w_ih = Tensor<S>::uniform({d_emb, 4 * d_emb}, -bound, bound, rng, true);
    lstm.w_hh = Tensor<S>::uniform({d_emb, 4 * d_emb}, -bound, bound, rng, true);
    lstm.b_ih = Tensor<S>::uniform({4 * d_emb}, -bound, bound, rng, true);
    lstm.b_hh = Tensor<S>::uniform({4 * d_emb}, -bound, bound, rng, true);
  }

  int length() const { return raw.rows(); }
  int d_emb() const { return raw.cols(); }

  // Effective prompt matrix: row i is the LSTM hidden state after consuming
  // raw rows 0..i. Autograd reaches both the raw rows and the LSTM weights.
  Tensor<S> reparameterize() const {
    const int d = d_emb();
    Tensor<S> h = Tensor<S>::zeros({1, d});
    Tensor<S> c = Tensor<S>::zeros({1, d});
    std::vector<Tensor<S>> rows;
    rows.reserve(size_t(length()));
    for (int i = 0; i < length(); ++i) {
      auto x = slice_rows(raw, i, i + 1);
      auto z = add(add_bias(matmul(x, lstm.w_ih), lstm.b_ih),
                   add_bias(matmul(h, lstm.w_hh), lstm.b_hh));
      auto gi = sigmoid(slice_cols(z, 0, d));
      auto gf = sigmoid(slice_cols(z, d, 2 * d));
      auto gg = tanh_op(slice_cols(z, 2 * d, 3 * d));
      auto go = sigmoid(slice_cols(z, 3 * d, 4 * d));
      c = add(mul(gf, c), mul(gi, gg));
      h = mul(go, tanh_op(c));
      rows.push_back(h);
    }
    return concat_rows(rows);
  }

  std::vector<Tensor<S>> parameters() const {
    return {raw, lstm.w_ih, lstm.w_hh, lstm.b_ih, lstm.b_hh};
  }

  void set_requires_grad(bool rq) {
    for (auto& p : parameters()) p.raw()->requires_grad = rq;
  }

  uint64_t param_hash() const { return bit_hash(parameters()); }

  AttributeLabel tag;
  Tensor<S> raw;         // P'_k
  LstmParams<S> lstm;    // reparameterizer weights
};

// Frozen inference-time prompt: the reparameterizer output at convergence.
template <typename S>
struct MaterializedPrompt {
  AttributeLabel tag;
  Tensor<S> matrix;  // (length, d_emb), no gradients
};

template <typename S>
MaterializedPrompt<S> materialize(const PromptBlock<S>& block) {
  auto eff = block.reparameterize();
  MaterializedPrompt<S> out;
  out.tag = block.tag;
  out.matrix = Tensor<S>::from(eff.shape(), eff.value());
  return out;
}

}  // namespace discup
