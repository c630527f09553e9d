#include <cmath>

#include "discup/gradcheck.hpp"
#include "discup/prompt.hpp"
#include "discup/transformer.hpp"
#include "doctest.h"

using namespace discup;

TEST_CASE("prompt initialization is deterministic per seed") {
  PromptBlock<float> a(10, 64, 7);
  PromptBlock<float> b(10, 64, 7);
  PromptBlock<float> c(10, 64, 8);
  CHECK(a.raw.shape() == std::vector<int>{10, 64});
  CHECK(a.raw.value() == b.raw.value());
  CHECK(a.lstm.w_ih.value() == b.lstm.w_ih.value());
  CHECK(a.raw.value() != c.raw.value());
  CHECK(PromptBlock<float>(12, 64, 1).length() == 12);
  CHECK_THROWS_AS(PromptBlock<float>(0, 64, 1), InvalidInputError);
}

TEST_CASE("reparameterize has shape l x d and is pure") {
  PromptBlock<float> block(6, 16, 3);
  auto a = block.reparameterize();
  auto b = block.reparameterize();
  CHECK(a.shape() == std::vector<int>{6, 16});
  CHECK(a.value() == b.value());
}

TEST_CASE("zeroed LSTM weights and biases collapse the output to zero") {
  PromptBlock<float> block(5, 8, 9);
  for (auto& t : {block.lstm.w_ih, block.lstm.w_hh, block.lstm.b_ih,
                  block.lstm.b_hh})
    for (auto& v : const_cast<std::vector<float>&>(t.value())) v = 0.0f;
  auto eff = block.reparameterize();
  for (float v : eff.value()) CHECK(v == 0.0f);
}

TEST_CASE("gradients flow through the reparameterizer to P' and the LSTM") {
  PromptBlock<double> block(4, 8, 13);
  Rng rng(5);
  auto w = TensorD::randn({4, 8}, 1.0, rng, false);
  auto forward = [&]() { return dot(w, block.reparameterize()); };
  auto loss = forward();
  loss.backward();
  auto params = block.parameters();
  auto fd = finite_difference_gradient<double>(
      [&]() { return forward().item(); }, params, 1e-5);
  for (size_t i = 0; i < params.size(); ++i) {
    CAPTURE(i);
    CHECK(grad_mismatch(params[i].grad(), fd[i]) < 1e-4);
    // and the gradient is not entirely zero
    double mag = 0.0;
    for (double g : params[i].grad()) mag += std::abs(g);
    CHECK(mag > 0.0);
  }
}

TEST_CASE("materialized prompt snapshots the live block") {
  TransformerConfig cfg = {.vocab_size = 16, .d_emb = 16, .n_layers = 1,
                           .n_heads = 2, .max_ctx = 32};
  CausalLM<float> lm(cfg, 17);
  PromptBlock<float> block(4, 16, 19);

  auto live = block.reparameterize();
  auto snap = materialize(block);
  CHECK(snap.matrix.value() == live.value());
  CHECK_FALSE(snap.matrix.requires_grad());

  std::vector<int> tokens = {0, 3, 7};
  auto logits_live = lm.forward(tokens, live);
  auto logits_snap = lm.forward(tokens, snap.matrix);
  CHECK(logits_live.value() == logits_snap.value());

  // mutating the block afterwards must not leak into the snapshot
  auto before = snap.matrix.value();
  block.raw.value()[0] += 1.0f;
  CHECK(snap.matrix.value() == before);
  CHECK(block.reparameterize().value() != before);
}
