#pragma once

#include <numeric>
#include <set>
#include <vector>

#include "discup/adam.hpp"
#include "discup/corpus.hpp"
#include "discup/error.hpp"
#include "discup/ops.hpp"
#include "discup/transformer.hpp"
#include "discup/vocab.hpp"

namespace discup {

// Attribute discriminator p_d(a|x): a small causal backbone with a linear
// classification head on the final position's hidden state. It scores raw
// token sequences only; control prompts are never part of its input.
template <typename S>
class Discriminator {
 public:
  static constexpr int kClasses = 2;

  Discriminator() = default;

  Discriminator(TransformerConfig cfg, uint64_t seed,
                S head_init_std = S(0.02)) {
    Rng rng(seed);
    backbone = Backbone<S>(cfg, rng);
    w_head = head_init_std > S(0)
                 ? Tensor<S>::randn({cfg.d_emb, kClasses}, head_init_std, rng)
                 : Tensor<S>::zeros({cfg.d_emb, kClasses});
    b_head = Tensor<S>::zeros({kClasses});
    set_requires_grad(false);
  }

  const TransformerConfig& config() const { return backbone.config(); }

  // Graph-building head logits for training.
  Tensor<S> train_logits(const std::vector<int>& seq) const {
    auto h = backbone.hidden(seq);
    return add_bias(matmul(slice_rows(h, h.rows() - 1, h.rows()), w_head),
                    b_head);
  }

  std::vector<S> class_probs(const std::vector<int>& seq) const {
    if (seq.empty()) throw InvalidInputError("disc_score: empty sequence");
    auto logits = train_logits(seq);
    std::vector<S> p(logits.data(), logits.data() + kClasses);
    kernels::softmax_row(p.data(), kClasses);
    return p;
  }

  // p_d(a | seq), deterministic.
  S score(const std::vector<int>& seq, AttributeLabel a) const {
    return class_probs(seq)[size_t(a.cls)];
  }

  // Scores of context + candidate_i for every candidate. Shares the context
  // rows through an incremental pass; results equal per-candidate score()
  // calls bit-exactly (batching is a pure optimization).
  std::vector<S> score_batch(const std::vector<int>& context,
                             const std::vector<int>& candidates,
                             AttributeLabel a) const {
    if (context.empty())
      throw InvalidInputError("disc_score_batch: empty context");
    std::set<int> uniq(candidates.begin(), candidates.end());
    if (uniq.size() != candidates.size())
      throw ContractViolation("disc_score_batch: duplicate candidates");

    RowPass<S> pass(backbone);
    for (int id : context) pass.token_row(id, true);
    std::vector<S> out;
    out.reserve(candidates.size());
    std::vector<S> logits(kClasses);
    for (int c : candidates) {
      pass.token_row(c, false);
      kernels::matmul(pass.hidden().data(), w_head.data(), logits.data(), 1,
                      config().d_emb, kClasses);
      kernels::add_row(logits.data(), b_head.data(), logits.data(), kClasses);
      kernels::softmax_row(logits.data(), kClasses);
      out.push_back(logits[size_t(a.cls)]);
    }
    return out;
  }

  std::vector<Tensor<S>> parameters() const {
    auto ps = backbone.parameters();
    ps.push_back(w_head);
    ps.push_back(b_head);
    return ps;
  }

  void set_requires_grad(bool rq) {
    backbone.set_requires_grad(rq);
    w_head.raw()->requires_grad = rq;
    b_head.raw()->requires_grad = rq;
  }

  uint64_t param_hash() const { return bit_hash(parameters()); }

  Backbone<S> backbone;
  Tensor<S> w_head, b_head;
};

// Cross-entropy training with random-prefix augmentation: each sequence also
// contributes prefixes at 3 random cut points under the full-sequence label,
// so partial sequences are in-distribution for candidate scoring.
template <typename S>
std::vector<double> disc_train(Discriminator<S>& disc,
                               const AttributeCorpus& corpus,
                               const TrainConfig& cfg) {
  detail::check_bos_corpus<S>(corpus, "disc_train");
  bool has[2] = {false, false};
  for (const auto& s : corpus.samples) {
    if (s.label != 0 && s.label != 1)
      throw InvalidInputError("disc_train: corpus must be fully labeled");
    has[s.label] = true;
  }
  if (!has[0] || !has[1])
    throw InvalidInputError("disc_train: both classes must be present");

  disc.set_requires_grad(true);
  Adam<S> opt(disc.parameters(), {.lr = cfg.lr});
  Rng rng(cfg.seed);
  std::vector<double> epoch_losses;

  std::vector<size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), size_t(0));
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    size_t item_count = 0;
    for (size_t base = 0; base < order.size(); base += size_t(cfg.batch)) {
      const size_t take = std::min(size_t(cfg.batch), order.size() - base);
      // expand the minibatch with prefix-augmented variants
      std::vector<std::pair<std::vector<int>, int>> items;
      for (size_t b = 0; b < take; ++b) {
        const auto& s = corpus.samples[order[base + b]];
        items.emplace_back(s.ids, s.label);
        const int len = int(s.ids.size());
        for (int cut = 0; cut < 3 && len > 3; ++cut) {
          const int keep = 2 + int(rng.below(uint64_t(len - 3)));  // [2,len-2]
          items.emplace_back(
              std::vector<int>(s.ids.begin(), s.ids.begin() + keep), s.label);
        }
      }
      opt.zero_grad();
      for (const auto& [seq, label] : items) {
        auto ce = cross_entropy_rows(disc.train_logits(seq), {label}, 0);
        scale(ce, S(1) / S(items.size())).backward();
        loss_sum += double(ce.item());
        ++item_count;
      }
      opt.step();
    }
    epoch_losses.push_back(loss_sum / double(item_count));
  }
  disc.set_requires_grad(false);
  return epoch_losses;
}

// Held-out classification accuracy (argmax against the label).
template <typename S>
double disc_accuracy(const Discriminator<S>& disc,
                     const AttributeCorpus& corpus) {
  if (corpus.empty()) throw InvalidInputError("disc_accuracy: empty corpus");
  size_t hits = 0;
  for (const auto& s : corpus.samples) {
    auto p = disc.class_probs(s.ids);
    const int pred = p[1] > p[0] ? 1 : 0;
    hits += pred == s.label ? 1 : 0;
  }
  return double(hits) / double(corpus.size());
}

}  // namespace discup
