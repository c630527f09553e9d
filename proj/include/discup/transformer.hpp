#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "discup/adam.hpp"
#include "discup/corpus.hpp"
#include "discup/error.hpp"
#include "discup/kernels.hpp"
#include "discup/ops.hpp"
#include "discup/rng.hpp"
#include "discup/tensor.hpp"

namespace discup {

struct TransformerConfig {
  int vocab_size = 64;
  int d_emb = 64;
  int n_layers = 2;
  int n_heads = 4;
  int max_ctx = 64;

  void validate() const {
    if (vocab_size < 2 || d_emb < 1 || n_layers < 1 || n_heads < 1 ||
        max_ctx < 1)
      throw InvalidInputError("transformer config: bad dimensions");
    if (d_emb % n_heads != 0)
      throw InvalidInputError("transformer config: d_emb % n_heads != 0");
  }
};

template <typename S>
struct TransformerBlock {
  Tensor<S> ln1_g, ln1_b, w_qkv, b_qkv, w_proj, b_proj;
  Tensor<S> ln2_g, ln2_b, w_up, b_up, w_down, b_down;
};

// Decoder-only transformer trunk: embeddings, masked self-attention blocks
// and the final layer norm. Hidden states only; heads live in CausalLM and
// Discriminator.
template <typename S>
class Backbone {
 public:
  Backbone() = default;

  Backbone(TransformerConfig cfg, Rng& rng) : cfg_(cfg) {
    cfg.validate();
    const int d = cfg.d_emb;
    const S std = S(0.02);
    tok_emb = Tensor<S>::randn({cfg.vocab_size, d}, std, rng);
    pos_emb = Tensor<S>::randn({cfg.max_ctx, d}, std, rng);
    blocks.resize(size_t(cfg.n_layers));
    for (auto& b : blocks) {
      b.ln1_g = ones({d});
      b.ln1_b = Tensor<S>::zeros({d});
      b.w_qkv = Tensor<S>::randn({d, 3 * d}, std, rng);
      b.b_qkv = Tensor<S>::zeros({3 * d});
      b.w_proj = Tensor<S>::randn({d, d}, std, rng);
      b.b_proj = Tensor<S>::zeros({d});
      b.ln2_g = ones({d});
      b.ln2_b = Tensor<S>::zeros({d});
      b.w_up = Tensor<S>::randn({d, 4 * d}, std, rng);
      b.b_up = Tensor<S>::zeros({4 * d});
      b.w_down = Tensor<S>::randn({4 * d, d}, std, rng);
      b.b_down = Tensor<S>::zeros({d});
    }
    lnf_g = ones({d});
    lnf_b = Tensor<S>::zeros({d});
  }

  // Hidden states for the concatenation [prefix rows | token embeddings],
  // causal across the whole span. Returns all rows after the final norm.
  Tensor<S> hidden(const std::vector<int>& tokens,
                   const Tensor<S>& prefix = {}) const {
    if (tokens.empty()) throw InvalidInputError("forward: empty context");
    const int pre = prefix.defined() ? prefix.rows() : 0;
    if (prefix.defined() && prefix.cols() != cfg_.d_emb)
      throw ContractViolation("forward: prefix width != d_emb");
    const int total = pre + int(tokens.size());
    if (total > cfg_.max_ctx)
      throw LengthError("forward: context length " + std::to_string(total) +
                        " exceeds max " + std::to_string(cfg_.max_ctx));

    Tensor<S> emb = embedding(tok_emb, tokens);
    if (prefix.defined()) emb = concat_rows<S>({prefix, emb});
    Tensor<S> x = add(emb, slice_rows(pos_emb, 0, total));
    for (const auto& b : blocks) {
      auto qkv = add_bias(matmul(layer_norm(x, b.ln1_g, b.ln1_b), b.w_qkv),
                          b.b_qkv);
      auto att = causal_self_attention(qkv, cfg_.n_heads);
      x = add(x, add_bias(matmul(att, b.w_proj), b.b_proj));
      auto up = gelu(
          add_bias(matmul(layer_norm(x, b.ln2_g, b.ln2_b), b.w_up), b.b_up));
      x = add(x, add_bias(matmul(up, b.w_down), b.b_down));
    }
    return layer_norm(x, lnf_g, lnf_b);
  }

  std::vector<Tensor<S>> parameters() const {
    std::vector<Tensor<S>> ps = {tok_emb, pos_emb};
    for (const auto& b : blocks)
      for (const auto& t : {b.ln1_g, b.ln1_b, b.w_qkv, b.b_qkv, b.w_proj,
                            b.b_proj, b.ln2_g, b.ln2_b, b.w_up, b.b_up,
                            b.w_down, b.b_down})
        ps.push_back(t);
    ps.push_back(lnf_g);
    ps.push_back(lnf_b);
    return ps;
  }

  void set_requires_grad(bool rq) {
    for (auto& p : parameters()) p.raw()->requires_grad = rq;
  }

  const TransformerConfig& config() const { return cfg_; }

  Tensor<S> tok_emb, pos_emb;
  std::vector<TransformerBlock<S>> blocks;
  Tensor<S> lnf_g, lnf_b;

 private:
  static Tensor<S> ones(std::vector<int> shape) {
    auto t = Tensor<S>::zeros(std::move(shape));
    for (auto& v : t.value()) v = S(1);
    return t;
  }

  TransformerConfig cfg_;
};

// Causal language model: backbone plus a linear vocabulary projection.
template <typename S>
class CausalLM {
 public:
  CausalLM() = default;

  CausalLM(TransformerConfig cfg, uint64_t seed) {
    Rng rng(seed);
    backbone = Backbone<S>(cfg, rng);
    w_out = Tensor<S>::randn({cfg.d_emb, cfg.vocab_size}, S(0.02), rng);
    b_out = Tensor<S>::zeros({cfg.vocab_size});
    set_requires_grad(false);
  }

  const TransformerConfig& config() const { return backbone.config(); }

  // Logits for the token positions only; a supplied prefix occupies the
  // first rows of the context but produces no logit rows of its own.
  Tensor<S> forward(const std::vector<int>& tokens,
                    const Tensor<S>& prefix = {}) const {
    auto h = backbone.hidden(tokens, prefix);
    if (prefix.defined()) h = slice_rows(h, prefix.rows(), h.rows());
    return add_bias(matmul(h, w_out), b_out);
  }

  // softmax over the final position's logits.
  std::vector<S> next_token_distribution(const std::vector<int>& context,
                                         const Tensor<S>& prefix = {}) const {
    auto logits = forward(context, prefix);
    const int v = config().vocab_size;
    std::vector<S> p(logits.data() + size_t(logits.rows() - 1) * v,
                     logits.data() + size_t(logits.rows()) * v);
    kernels::softmax_row(p.data(), v);
    return p;
  }

  std::vector<Tensor<S>> parameters() const {
    auto ps = backbone.parameters();
    ps.push_back(w_out);
    ps.push_back(b_out);
    return ps;
  }

  void set_requires_grad(bool rq) {
    backbone.set_requires_grad(rq);
    w_out.raw()->requires_grad = rq;
    b_out.raw()->requires_grad = rq;
  }

  uint64_t param_hash() const { return bit_hash(parameters()); }

  Backbone<S> backbone;
  Tensor<S> w_out, b_out;
};

// Indices of the k largest values, descending, ties broken by ascending id.
template <typename S>
std::vector<int> top_k_indices(const S* v, int n, int k) {
  std::vector<int> idx(static_cast<size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(),
            [&](int a, int b) { return v[a] > v[b] || (v[a] == v[b] && a < b); });
  idx.resize(size_t(std::min(k, n)));
  return idx;
}

struct GenerationConfig {
  int max_new_tokens = 20;
  int top_k = 10;
  uint64_t seed = 0;
  double temperature = 1.0;

  void validate() const {
    if (max_new_tokens < 1)
      throw InvalidInputError("generation: max_new_tokens < 1");
    if (top_k < 1) throw InvalidInputError("generation: top_k < 1");
    if (!(temperature > 0.0))
      throw InvalidInputError("generation: temperature <= 0");
  }
};

// Incremental backbone evaluation with per-layer qkv caches. Runs the same
// kernels in the same order as the batched graph forward, so each row's
// hidden state is bit-identical to Backbone::hidden on the same context.
// Uncommitted rows (probes) reuse the next cache slot without advancing it.
template <typename S>
class RowPass {
 public:
  explicit RowPass(const Backbone<S>& backbone)
      : bb_(&backbone), cfg_(backbone.config()) {
    cache_.assign(size_t(cfg_.n_layers),
                  std::vector<S>(size_t(cfg_.max_ctx) * 3 * cfg_.d_emb));
    x_.resize(size_t(cfg_.d_emb));
    xn_.resize(size_t(cfg_.d_emb));
    tmp_.resize(size_t(4 * cfg_.d_emb));
    tmp2_.resize(size_t(4 * cfg_.d_emb));
    attn_out_.resize(size_t(cfg_.d_emb));
    att_.resize(size_t(cfg_.max_ctx));
    hidden_.resize(size_t(cfg_.d_emb));
  }

  void reset() { len_ = 0; }
  int length() const { return len_; }
  const std::vector<S>& hidden() const { return hidden_; }

  void token_row(int id, bool commit) {
    if (id < 0 || id >= cfg_.vocab_size)
      throw ContractViolation("row pass: token id out of range");
    input_row(bb_->tok_emb.data() + size_t(id) * cfg_.d_emb, commit);
  }

  void input_row(const S* row, bool commit) {
    if (len_ >= cfg_.max_ctx) throw LengthError("row pass: context overflow");
    const int d = cfg_.d_emb, c3 = 3 * d;
    const int hs = d / cfg_.n_heads;
    const S att_scale = S(1) / std::sqrt(S(hs));

    const S* pos = bb_->pos_emb.data() + size_t(len_) * d;
    for (int j = 0; j < d; ++j) x_[j] = row[j] + pos[j];

    for (int l = 0; l < cfg_.n_layers; ++l) {
      const auto& b = bb_->blocks[size_t(l)];
      S mean, rstd;
      kernels::layernorm_row(x_.data(), b.ln1_g.data(), b.ln1_b.data(),
                             xn_.data(), d, S(1e-5), &mean, &rstd);
      S* qkv = cache_[size_t(l)].data() + size_t(len_) * c3;
      kernels::matmul(xn_.data(), b.w_qkv.data(), qkv, 1, d, c3);
      kernels::add_row(qkv, b.b_qkv.data(), qkv, c3);
      for (int h = 0; h < cfg_.n_heads; ++h) {
        kernels::attention_row(qkv + size_t(h) * hs,
                               cache_[size_t(l)].data() + d + size_t(h) * hs,
                               cache_[size_t(l)].data() + 2 * d + size_t(h) * hs,
                               attn_out_.data() + size_t(h) * hs, att_.data(),
                               len_, hs, c3, att_scale);
      }
      kernels::matmul(attn_out_.data(), b.w_proj.data(), tmp_.data(), 1, d, d);
      kernels::add_row(tmp_.data(), b.b_proj.data(), tmp_.data(), d);
      for (int j = 0; j < d; ++j) x_[j] = x_[j] + tmp_[j];

      kernels::layernorm_row(x_.data(), b.ln2_g.data(), b.ln2_b.data(),
                             xn_.data(), d, S(1e-5), &mean, &rstd);
      kernels::matmul(xn_.data(), b.w_up.data(), tmp_.data(), 1, d, 4 * d);
      kernels::add_row(tmp_.data(), b.b_up.data(), tmp_.data(), 4 * d);
      for (int j = 0; j < 4 * d; ++j) tmp2_[j] = kernels::gelu(tmp_[j]);
      kernels::matmul(tmp2_.data(), b.w_down.data(), tmp_.data(), 1, 4 * d, d);
      kernels::add_row(tmp_.data(), b.b_down.data(), tmp_.data(), d);
      for (int j = 0; j < d; ++j) x_[j] = x_[j] + tmp_[j];
    }
    S mean, rstd;
    kernels::layernorm_row(x_.data(), bb_->lnf_g.data(), bb_->lnf_b.data(),
                           hidden_.data(), d, S(1e-5), &mean, &rstd);
    if (commit) ++len_;
  }

 private:
  const Backbone<S>* bb_;
  TransformerConfig cfg_;
  std::vector<std::vector<S>> cache_;
  std::vector<S> x_, xn_, tmp_, tmp2_, attn_out_, att_, hidden_;
  int len_ = 0;
};

// Incremental language-model decoding on top of RowPass.
template <typename S>
class DecodeSession {
 public:
  explicit DecodeSession(const CausalLM<S>& model)
      : model_(&model), pass_(model.backbone) {
    logits_.resize(size_t(model.config().vocab_size));
  }

  void reset() { pass_.reset(); }
  int length() const { return pass_.length(); }

  void append_prefix(const Tensor<S>& prefix) {
    const int d = model_->config().d_emb;
    if (prefix.cols() != d)
      throw ContractViolation("decode: prefix width != d_emb");
    for (int i = 0; i < prefix.rows(); ++i) {
      pass_.input_row(prefix.data() + size_t(i) * d, true);
      project();
    }
  }

  void append_token(int id) {
    pass_.token_row(id, true);
    project();
  }

  // Logits of the most recently appended position.
  const std::vector<S>& logits() const { return logits_; }

 private:
  void project() {
    const int d = model_->config().d_emb;
    const int v = model_->config().vocab_size;
    kernels::matmul(pass_.hidden().data(), model_->w_out.data(),
                    logits_.data(), 1, d, v);
    kernels::add_row(logits_.data(), model_->b_out.data(), logits_.data(), v);
  }

  const CausalLM<S>* model_;
  RowPass<S> pass_;
  std::vector<S> logits_;
};

// Draw an id from the renormalized top-k of a probability row.
template <typename S>
int sample_top_k(const std::vector<S>& probs, int k, Rng& rng) {
  auto idx = top_k_indices(probs.data(), int(probs.size()), k);
  S total = S(0);
  for (int i : idx) total += probs[size_t(i)];
  const S r = S(rng.uniform()) * total;
  S acc = S(0);
  for (int i : idx) {
    acc += probs[size_t(i)];
    if (r < acc) return i;
  }
  return idx.back();
}

// Exactly max_new_tokens sampled ids (no early stop); top-k sampling with a
// per-call seeded stream. Returns only the newly generated ids.
template <typename S>
std::vector<int> sample_continuation(const CausalLM<S>& model,
                                     const std::vector<int>& prompt,
                                     const Tensor<S>& prefix,
                                     const GenerationConfig& gen) {
  gen.validate();
  if (prompt.empty())
    throw InvalidInputError("sample_continuation: empty prompt");
  const auto& cfg = model.config();
  const int pre = prefix.defined() ? prefix.rows() : 0;
  if (pre + int(prompt.size()) + gen.max_new_tokens > cfg.max_ctx)
    throw LengthError("sample_continuation: context overflow");

  DecodeSession<S> session(model);
  if (prefix.defined()) session.append_prefix(prefix);
  for (int id : prompt) session.append_token(id);

  Rng rng(gen.seed);
  std::vector<int> out;
  out.reserve(size_t(gen.max_new_tokens));
  std::vector<S> probs(size_t(cfg.vocab_size));
  for (int step = 0; step < gen.max_new_tokens; ++step) {
    const auto& logits = session.logits();
    for (int j = 0; j < cfg.vocab_size; ++j)
      probs[size_t(j)] = logits[size_t(j)] / S(gen.temperature);
    kernels::softmax_row(probs.data(), cfg.vocab_size);
    const int id = sample_top_k(probs, std::min(gen.top_k, cfg.vocab_size),
                                rng);
    out.push_back(id);
    session.append_token(id);
  }
  return out;
}

struct TrainConfig {
  int epochs = 6;
  double lr = 1e-3;
  int batch = 8;
  uint64_t seed = 1;
};

namespace detail {

template <typename S>
void check_bos_corpus(const AttributeCorpus& corpus, const char* who) {
  if (corpus.empty())
    throw InvalidInputError(std::string(who) + ": empty corpus");
  for (const auto& s : corpus.samples)
    if (s.ids.size() < 2 || s.ids[0] != Vocab::kBos)
      throw InvalidInputError(std::string(who) +
                              ": sample must be BOS-prefixed");
}

}  // namespace detail

// Next-token MLE over the corpus. Returns the per-epoch mean per-token loss
// observed during training. The model is left frozen (requires_grad=false).
template <typename S>
std::vector<double> mle_train(CausalLM<S>& model, const AttributeCorpus& corpus,
                              const TrainConfig& cfg) {
  detail::check_bos_corpus<S>(corpus, "mle_train");
  model.set_requires_grad(true);
  Adam<S> opt(model.parameters(), {.lr = cfg.lr});
  Rng rng(cfg.seed);
  std::vector<double> epoch_losses;

  std::vector<size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), size_t(0));
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    size_t tok_count = 0;
    for (size_t base = 0; base < order.size(); base += size_t(cfg.batch)) {
      const size_t take = std::min(size_t(cfg.batch), order.size() - base);
      opt.zero_grad();
      for (size_t b = 0; b < take; ++b) {
        const auto& ids = corpus.samples[order[base + b]].ids;
        std::vector<int> input(ids.begin(), ids.end() - 1);
        std::vector<int> targets(ids.begin() + 1, ids.end());
        auto ce = cross_entropy_rows(model.forward(input), targets, 0);
        scale(ce, S(1) / S(take)).backward();
        loss_sum += double(ce.item()) * double(targets.size());
        tok_count += targets.size();
      }
      opt.step();
    }
    epoch_losses.push_back(loss_sum / double(tok_count));
  }
  model.set_requires_grad(false);
  return epoch_losses;
}

// Mean negative log-likelihood per predicted token, double accumulation.
template <typename S>
double mean_nll(const CausalLM<S>& model,
                const std::vector<std::vector<int>>& texts) {
  if (texts.empty()) throw InvalidInputError("mean_nll: empty input");
  double sum = 0.0;
  size_t count = 0;
  for (const auto& ids : texts) {
    if (ids.size() < 2)
      throw InvalidInputError("mean_nll: text too short to score");
    std::vector<int> input(ids.begin(), ids.end() - 1);
    auto logits = model.forward(input);
    const int v = model.config().vocab_size;
    for (size_t t = 0; t + 1 < ids.size(); ++t) {
      const S* row = logits.data() + t * size_t(v);
      double mx = double(row[0]);
      for (int j = 1; j < v; ++j) mx = std::max(mx, double(row[j]));
      double lse = 0.0;
      for (int j = 0; j < v; ++j) lse += std::exp(double(row[j]) - mx);
      sum += (mx + std::log(lse)) - double(row[ids[t + 1]]);
      ++count;
    }
  }
  return sum / double(count);
}

// Eval-mode pass through the same cross-entropy path mle_train optimizes.
template <typename S>
double mle_eval_loss(const CausalLM<S>& model, const AttributeCorpus& corpus) {
  detail::check_bos_corpus<S>(corpus, "mle_eval_loss");
  double loss_sum = 0.0;
  size_t tok_count = 0;
  for (const auto& s : corpus.samples) {
    std::vector<int> input(s.ids.begin(), s.ids.end() - 1);
    std::vector<int> targets(s.ids.begin() + 1, s.ids.end());
    auto ce = cross_entropy_rows(model.forward(input), targets, 0);
    loss_sum += double(ce.item()) * double(targets.size());
    tok_count += targets.size();
  }
  return loss_sum / double(tok_count);
}

// exp(mean NLL per predicted token) under the plain model, no prompt prefix.
template <typename S>
double perplexity(const CausalLM<S>& model,
                  const std::vector<std::vector<int>>& texts) {
  return std::exp(mean_nll(model, texts));
}

inline std::vector<std::vector<int>> texts_of(const AttributeCorpus& corpus) {
  std::vector<std::vector<int>> out;
  out.reserve(corpus.size());
  for (const auto& s : corpus.samples) out.push_back(s.ids);
  return out;
}

}  // namespace discup
