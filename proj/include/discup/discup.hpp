#pragma once

#include <algorithm>
#include <cmath>
#include <iostream>
#include <memory>
#include <numeric>
#include <vector>

#include "discup/adam.hpp"
#include "discup/corpus.hpp"
#include "discup/discriminator.hpp"
#include "discup/error.hpp"
#include "discup/ops.hpp"
#include "discup/prompt.hpp"
#include "discup/transformer.hpp"

namespace discup {

// Probabilities are clamped to [eps, 1-eps] before any log in the tuning
// objective; the unlikelihood term diverges as p -> 1 otherwise.
inline constexpr double kProbClamp = 1e-7;

// Top-k candidates at one position: ids ordered by descending base
// probability (ties by ascending id), discriminator scores d, complements
// d' = 1-d, and the temperature-softmax weights s, s' over the set.
template <typename S>
struct CandidateSet {
  int position = 0;
  std::vector<int> ids;
  std::vector<S> base_probs;
  std::vector<S> d, d_comp;
  std::vector<S> s, s_comp;
};

struct DiscupConfig {
  double alpha = 0.01;
  int top_k = 16;
  AttributeLabel attribute = {1};
  int epochs = 6;
  double lr = 1e-3;
  bool unlikelihood = true;
  uint64_t seed = 1;
  int prompt_len = 10;
  int batch = 8;

  void validate() const {
    if (!(alpha > 0.0)) throw InvalidInputError("discup: alpha must be > 0");
    if (top_k < 1) throw InvalidInputError("discup: top_k must be >= 1");
    if (unlikelihood && top_k < 2)
      throw InvalidInputError("discup: top_k must be >= 2 with unlikelihood");
    if (epochs < 0) throw InvalidInputError("discup: negative epochs");
    if (prompt_len < 1) throw InvalidInputError("discup: prompt_len < 1");
    if (batch < 1) throw InvalidInputError("discup: batch < 1");
  }
};

// Top-k of a next-token distribution from the un-prompted frozen CLM.
// k larger than the vocabulary clamps with a warning.
template <typename S>
CandidateSet<S> select_candidates(const std::vector<S>& distribution, int k) {
  if (k < 1) throw InvalidInputError("select_candidates: k must be >= 1");
  const int v = int(distribution.size());
  double total = 0.0;
  for (S p : distribution) total += double(p);
  if (std::abs(total - 1.0) > 1e-3)
    throw ContractViolation("select_candidates: input is not a distribution");
  if (k > v) {
    std::cerr << "warning: select_candidates: k=" << k << " clamped to |V|="
              << v << "\n";
    k = v;
  }
  CandidateSet<S> set;
  set.ids = top_k_indices(distribution.data(), v, k);
  set.base_probs.reserve(set.ids.size());
  for (int id : set.ids) set.base_probs.push_back(distribution[size_t(id)]);
  return set;
}

// Temperature softmax over the candidate set only (Boltzmann weights of the
// discriminator scores).
template <typename S>
std::vector<S> soft_targets(const std::vector<S>& scores, double alpha) {
  if (!(alpha > 0.0)) throw InvalidInputError("soft_targets: alpha must be > 0");
  if (scores.empty()) throw InvalidInputError("soft_targets: empty scores");
  double mx = double(scores[0]);
  for (S v : scores) mx = std::max(mx, double(v));
  std::vector<double> e(scores.size());
  double sum = 0.0;
  for (size_t i = 0; i < scores.size(); ++i) {
    e[i] = std::exp((double(scores[i]) - mx) / alpha);
    sum += e[i];
  }
  std::vector<S> out(scores.size());
  for (size_t i = 0; i < scores.size(); ++i) out[i] = S(e[i] / sum);
  return out;
}

// Fill d and d' = 1-d by scoring context+candidate partial sequences.
template <typename S>
void score_candidates(CandidateSet<S>& set, const std::vector<int>& context,
                      const Discriminator<S>& disc, AttributeLabel attribute) {
  set.d = disc.score_batch(context, set.ids, attribute);
  set.d_comp.resize(set.d.size());
  for (size_t i = 0; i < set.d.size(); ++i) set.d_comp[i] = S(1) - set.d[i];
}

template <typename S>
void fill_soft_targets(CandidateSet<S>& set, double alpha) {
  set.s = soft_targets(set.d, alpha);
  set.s_comp = soft_targets(set.d_comp, alpha);
}

// --- fused likelihood/unlikelihood loss over logit rows ---

template <typename S>
struct DiscupTerm {
  int row = 0;
  std::vector<int> cand;
  std::vector<S> s, s_comp;
};

template <typename S>
struct DiscupLoss {
  Tensor<S> total;  // scalar, sum over terms
  double like_sum = 0.0;
  double unlike_sum = 0.0;
};

// L = sum_t [ -sum_C s[c] log p(c)  - (if enabled) sum_C s'[c] log(1-p(c)) ]
// with p = softmax(logits[row]) clamped to [eps, 1-eps] before the logs.
template <typename S>
DiscupLoss<S> discup_loss_rows(const Tensor<S>& logits,
                               const std::vector<DiscupTerm<S>>& terms,
                               bool use_unlike) {
  const int n = logits.rows(), v = logits.cols();
  const S eps = S(kProbClamp);
  auto probs = std::make_shared<std::vector<S>>(terms.size() * size_t(v));

  double like_sum = 0.0, unlike_sum = 0.0;
  for (size_t t = 0; t < terms.size(); ++t) {
    const auto& term = terms[t];
    if (term.row < 0 || term.row >= n)
      throw ContractViolation("discup loss: row out of range");
    if (term.s.size() != term.cand.size() ||
        (use_unlike && term.s_comp.size() != term.cand.size()))
      throw ContractViolation("discup loss: soft targets not filled");
    S* p = probs->data() + t * size_t(v);
    std::copy(logits.data() + size_t(term.row) * v,
              logits.data() + size_t(term.row + 1) * v, p);
    kernels::softmax_row(p, v);
    for (size_t i = 0; i < term.cand.size(); ++i) {
      const S q = std::min(S(1) - eps, std::max(eps, p[term.cand[i]]));
      like_sum += -double(term.s[i]) * std::log(double(q));
      if (use_unlike)
        unlike_sum += -double(term.s_comp[i]) * std::log(1.0 - double(q));
    }
  }

  DiscupLoss<S> out;
  out.like_sum = like_sum;
  out.unlike_sum = unlike_sum;
  out.total = Tensor<S>::scalar(S(like_sum + unlike_sum));

  if (logits.requires_grad()) {
    auto* on = out.total.raw();
    on->requires_grad = true;
    on->parents = {logits.node()};
    auto* ln = logits.raw();
    on->backward_fn = [on, ln, probs, terms, use_unlike, v, eps]() {
      ln->ensure_grad();
      const S g = on->grad[0];
      for (size_t t = 0; t < terms.size(); ++t) {
        const auto& term = terms[t];
        const S* p = probs->data() + t * size_t(v);
        S* dx = ln->grad.data() + size_t(term.row) * v;
        // A = sum of s over unclamped candidates; W = sum s'p/(1-p)
        S a_like = S(0), w_unlike = S(0);
        for (size_t i = 0; i < term.cand.size(); ++i) {
          const S pc = p[term.cand[i]];
          if (pc <= eps || pc >= S(1) - eps) continue;
          a_like += term.s[i];
          if (use_unlike) w_unlike += term.s_comp[i] * pc / (S(1) - pc);
        }
        const S coef = a_like - w_unlike;
        for (int j = 0; j < v; ++j) dx[j] += g * p[j] * coef;
        for (size_t i = 0; i < term.cand.size(); ++i) {
          const S pc = p[term.cand[i]];
          if (pc <= eps || pc >= S(1) - eps) continue;
          S delta = -term.s[i];
          if (use_unlike) delta += term.s_comp[i] * pc / (S(1) - pc);
          dx[term.cand[i]] += g * delta;
        }
      }
    };
  }
  return out;
}

// Single-position objective: candidates were chosen from the un-prompted
// frozen CLM; the probability is taken from the prompted forward pass.
template <typename S>
Tensor<S> step_loss(const CausalLM<S>& model, const Tensor<S>& prompt_matrix,
                    const std::vector<int>& context, const CandidateSet<S>& set,
                    bool unlikelihood_enabled) {
  auto logits = model.forward(context, prompt_matrix);
  DiscupTerm<S> term{logits.rows() - 1, set.ids, set.s, set.s_comp};
  return discup_loss_rows(logits, {term}, unlikelihood_enabled).total;
}

struct TuneLogRow {
  int epoch = 0;
  double like = 0.0;
  double unlike = 0.0;
};

template <typename S>
struct TuneResult {
  PromptBlock<S> prompt;
  std::vector<TuneLogRow> log;
  int selected_epoch = -1;  // -1 when no scorer ran (last epoch kept)
};

// Optional per-epoch control-performance scorer; when supplied, tuning keeps
// the checkpoint with the best score (earliest epoch wins ties).
template <typename S>
using EpochScorer = std::function<double(const PromptBlock<S>&, int)>;

namespace detail {

template <typename S>
std::vector<std::vector<S>> snapshot_params(const PromptBlock<S>& block) {
  std::vector<std::vector<S>> vals;
  for (const auto& p : block.parameters()) vals.push_back(p.value());
  return vals;
}

template <typename S>
void restore_params(PromptBlock<S>& block,
                    const std::vector<std::vector<S>>& vals) {
  auto params = block.parameters();
  for (size_t i = 0; i < params.size(); ++i) params[i].value() = vals[i];
}

}  // namespace detail

namespace detail {

template <typename S>
void check_frozen(const std::vector<Tensor<S>>& params, const char* who) {
  for (const auto& p : params)
    if (p.requires_grad())
      throw ContractViolation(std::string(who) +
                              ": model must be frozen during prompt tuning");
}

}  // namespace detail

// Discriminator-cooperative unlikelihood prompt tuning. The CLM and the
// discriminator stay frozen; only the prompt block learns. Candidates come
// from the un-prompted CLM and are re-scored fresh every epoch.
template <typename S>
TuneResult<S> discup_train(const CausalLM<S>& clm, const Discriminator<S>& disc,
                           const AttributeCorpus& corpus,
                           const DiscupConfig& cfg,
                           const EpochScorer<S>& scorer = {}) {
  cfg.validate();
  detail::check_bos_corpus<S>(corpus, "discup_train");
  detail::check_frozen(clm.parameters(), "discup_train");
  detail::check_frozen(disc.parameters(), "discup_train");
  const uint64_t clm_hash = clm.param_hash();
  const uint64_t disc_hash = disc.param_hash();

  TuneResult<S> result;
  result.prompt = PromptBlock<S>(cfg.prompt_len, clm.config().d_emb,
                                 mix_seed(cfg.seed, 0), cfg.attribute);
  if (cfg.epochs == 0) return result;

  auto& prompt = result.prompt;
  Adam<S> opt(prompt.parameters(), {.lr = cfg.lr});
  Rng rng(mix_seed(cfg.seed, 1));
  const int v = clm.config().vocab_size;

  std::vector<size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), size_t(0));
  std::vector<S> dist(static_cast<size_t>(v));
  double best_score = -1.0;
  std::vector<std::vector<S>> best_params;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double like_sum = 0.0, unlike_sum = 0.0;
    size_t pos_count = 0;
    for (size_t base = 0; base < order.size(); base += size_t(cfg.batch)) {
      const size_t take = std::min(size_t(cfg.batch), order.size() - base);
      opt.zero_grad();
      for (size_t b = 0; b < take; ++b) {
        const auto& ids = corpus.samples[order[base + b]].ids;
        const std::vector<int> input(ids.begin(), ids.end() - 1);
        const int n_pos = int(input.size());

        // candidate distributions from the frozen CLM, no prompt
        auto clean_logits = clm.forward(input);

        // discriminator scores over shared context rows
        RowPass<S> pass(disc.backbone);
        pass.token_row(ids[0], true);
        std::vector<DiscupTerm<S>> terms(static_cast<size_t>(n_pos));
        std::vector<S> head(Discriminator<S>::kClasses);
        for (int t = 1; t <= n_pos; ++t) {
          const S* row = clean_logits.data() + size_t(t - 1) * v;
          std::copy(row, row + v, dist.data());
          kernels::softmax_row(dist.data(), v);
          auto set = select_candidates(dist, cfg.top_k);
          set.position = t;
          set.d.reserve(set.ids.size());
          for (int c : set.ids) {
            pass.token_row(c, false);
            kernels::matmul(pass.hidden().data(), disc.w_head.data(),
                            head.data(), 1, disc.config().d_emb,
                            Discriminator<S>::kClasses);
            kernels::add_row(head.data(), disc.b_head.data(), head.data(),
                             Discriminator<S>::kClasses);
            kernels::softmax_row(head.data(), Discriminator<S>::kClasses);
            set.d.push_back(head[size_t(cfg.attribute.cls)]);
          }
          set.d_comp.resize(set.d.size());
          for (size_t i = 0; i < set.d.size(); ++i)
            set.d_comp[i] = S(1) - set.d[i];
          fill_soft_targets(set, cfg.alpha);
          terms[size_t(t - 1)] = DiscupTerm<S>{t - 1, std::move(set.ids),
                                               std::move(set.s),
                                               std::move(set.s_comp)};
          if (t < n_pos) pass.token_row(ids[size_t(t)], true);
        }

        // prompted forward carries the gradient to the prompt parameters
        auto logits = clm.forward(input, prompt.reparameterize());
        auto loss = discup_loss_rows(logits, terms, cfg.unlikelihood);
        scale(loss.total, S(1) / S(take * size_t(n_pos))).backward();
        like_sum += loss.like_sum;
        unlike_sum += loss.unlike_sum;
        pos_count += size_t(n_pos);
      }
      opt.step();
    }
    result.log.push_back({epoch, like_sum / double(pos_count),
                          unlike_sum / double(pos_count)});
    if (scorer) {
      const double score = scorer(prompt, epoch);
      if (score > best_score) {
        best_score = score;
        best_params = detail::snapshot_params(prompt);
        result.selected_epoch = epoch;
      }
    }
  }
  if (scorer && !best_params.empty())
    detail::restore_params(prompt, best_params);

  if (clm.param_hash() != clm_hash || disc.param_hash() != disc_hash)
    throw ContractViolation("discup_train: frozen parameters changed");
  return result;
}

// Vanilla prompt tuning baseline: next-token MLE on the attribute corpus
// with the prompt prefixed and only prompt parameters trainable.
template <typename S>
TuneResult<S> vanilla_prompt_train(const CausalLM<S>& clm,
                                   const AttributeCorpus& corpus,
                                   const DiscupConfig& cfg,
                                   const EpochScorer<S>& scorer = {}) {
  cfg.validate();
  detail::check_bos_corpus<S>(corpus, "vanilla_prompt_train");
  detail::check_frozen(clm.parameters(), "vanilla_prompt_train");
  for (const auto& s : corpus.samples)
    if (s.label >= 0 && s.label != cfg.attribute.cls)
      throw InvalidInputError(
          "vanilla_prompt_train: corpus must contain only the target "
          "attribute");
  const uint64_t clm_hash = clm.param_hash();

  TuneResult<S> result;
  result.prompt = PromptBlock<S>(cfg.prompt_len, clm.config().d_emb,
                                 mix_seed(cfg.seed, 0), cfg.attribute);
  if (cfg.epochs == 0) return result;

  auto& prompt = result.prompt;
  Adam<S> opt(prompt.parameters(), {.lr = cfg.lr});
  Rng rng(mix_seed(cfg.seed, 1));

  std::vector<size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), size_t(0));
  double best_score = -1.0;
  std::vector<std::vector<S>> best_params;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    size_t tok_count = 0;
    for (size_t base = 0; base < order.size(); base += size_t(cfg.batch)) {
      const size_t take = std::min(size_t(cfg.batch), order.size() - base);
      opt.zero_grad();
      for (size_t b = 0; b < take; ++b) {
        const auto& ids = corpus.samples[order[base + b]].ids;
        const std::vector<int> input(ids.begin(), ids.end() - 1);
        const std::vector<int> targets(ids.begin() + 1, ids.end());
        auto ce = cross_entropy_rows(clm.forward(input, prompt.reparameterize()),
                                     targets, 0);
        scale(ce, S(1) / S(take)).backward();
        loss_sum += double(ce.item()) * double(targets.size());
        tok_count += targets.size();
      }
      opt.step();
    }
    result.log.push_back({epoch, loss_sum / double(tok_count), 0.0});
    if (scorer) {
      const double score = scorer(prompt, epoch);
      if (score > best_score) {
        best_score = score;
        best_params = detail::snapshot_params(prompt);
        result.selected_epoch = epoch;
      }
    }
  }
  if (scorer && !best_params.empty())
    detail::restore_params(prompt, best_params);

  if (clm.param_hash() != clm_hash)
    throw ContractViolation("vanilla_prompt_train: frozen parameters changed");
  return result;
}

// --- Appendix-style gradient diagnostics on the simplified objective ---

// Derivatives of L = -log p_like - log(1 - p_unlike) over softmax(logits).
// loss_grad follows the true loss convention (descent = negative); paper_grad
// is its negation, the convention under which the like-gradient is positive
// and the unlike-gradient equals -2*p_unlike.
struct GradientSignReport {
  std::vector<double> loss_grad;
  std::vector<double> fd_grad;
  std::vector<double> paper_grad;
  double p_like = 0.0, p_unlike = 0.0;
  double loss = 0.0;
};

inline double simplified_unlikelihood_loss(const std::vector<double>& logits,
                                           int like, int unlike) {
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  double sum = 0.0;
  for (double v : logits) sum += std::exp(v - mx);
  const double p_like = std::exp(logits[size_t(like)] - mx) / sum;
  const double p_unlike = std::exp(logits[size_t(unlike)] - mx) / sum;
  return -std::log(p_like) - std::log(1.0 - p_unlike);
}

inline GradientSignReport gradient_sign_probe(const std::vector<double>& logits,
                                              int like, int unlike) {
  const int v = int(logits.size());
  if (v < 2) throw InvalidInputError("gradient_sign_probe: need >= 2 logits");
  if (like == unlike)
    throw InvalidInputError("gradient_sign_probe: like and unlike collide");
  if (like < 0 || like >= v || unlike < 0 || unlike >= v)
    throw InvalidInputError("gradient_sign_probe: index out of range");

  GradientSignReport rep;
  std::vector<double> p = logits;
  double mx = p[0];
  for (double x : p) mx = std::max(mx, x);
  double sum = 0.0;
  for (double& x : p) {
    x = std::exp(x - mx);
    sum += x;
  }
  for (double& x : p) x /= sum;
  rep.p_like = p[size_t(like)];
  rep.p_unlike = p[size_t(unlike)];
  rep.loss = simplified_unlikelihood_loss(logits, like, unlike);

  const double ratio = rep.p_unlike / (1.0 - rep.p_unlike);
  rep.loss_grad.resize(size_t(v));
  rep.paper_grad.resize(size_t(v));
  for (int i = 0; i < v; ++i) {
    const double d_like = p[size_t(i)] - (i == like ? 1.0 : 0.0);
    const double d_unlike = ratio * ((i == unlike ? 1.0 : 0.0) - p[size_t(i)]);
    rep.loss_grad[size_t(i)] = d_like + d_unlike;
    rep.paper_grad[size_t(i)] = -rep.loss_grad[size_t(i)];
  }

  rep.fd_grad.resize(size_t(v));
  const double eps = 1e-6;
  for (int i = 0; i < v; ++i) {
    std::vector<double> hi = logits, lo = logits;
    hi[size_t(i)] += eps;
    lo[size_t(i)] -= eps;
    rep.fd_grad[size_t(i)] =
        (simplified_unlikelihood_loss(hi, like, unlike) -
         simplified_unlikelihood_loss(lo, like, unlike)) /
        (2.0 * eps);
  }

  // sign structure guaranteed by the objective: raising the like logit can
  // only lower the loss, raising the unlike logit can only raise it, and
  // every other direction flips sign exactly at p_unlike = 0.5.
  if (!(rep.loss_grad[size_t(like)] < 0.0))
    throw ContractViolation("gradient_sign_probe: like-gradient sign");
  if (!(rep.loss_grad[size_t(unlike)] > 0.0))
    throw ContractViolation("gradient_sign_probe: unlike-gradient sign");
  const double flip = 1.0 - 2.0 * rep.p_unlike;
  for (int i = 0; i < v; ++i) {
    if (i == like || i == unlike) continue;
    if (rep.loss_grad[size_t(i)] * flip < -1e-15)
      throw ContractViolation("gradient_sign_probe: other-token sign");
  }
  return rep;
}

}  // namespace discup
