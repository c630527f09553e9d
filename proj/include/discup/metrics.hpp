#pragma once

#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "discup/corpus.hpp"
#include "discup/discriminator.hpp"
#include "discup/discup.hpp"
#include "discup/error.hpp"
#include "discup/prompt.hpp"
#include "discup/transformer.hpp"
#include "discup/vocab.hpp"

namespace discup {

struct EvalReport {
  double correctness = 0.0;
  double ppl = 0.0;
  double dist1 = 0.0, dist2 = 0.0, dist3 = 0.0;
  double coverage = 0.0;
  int samples = 0;
  std::string config_echo;

  static constexpr const char* kCsvHeader =
      "correctness,ppl,dist1,dist2,dist3,coverage,samples";

  std::string to_kv() const {
    std::ostringstream out;
    out.precision(10);
    out << "samples=" << samples << "\n"
        << "correctness=" << correctness << "\n"
        << "ppl=" << ppl << "\n"
        << "dist1=" << dist1 << "\n"
        << "dist2=" << dist2 << "\n"
        << "dist3=" << dist3 << "\n"
        << "coverage=" << coverage << "\n"
        << "config=" << config_echo << "\n";
    return out.str();
  }

  std::string to_csv_row() const {
    std::ostringstream out;
    out.precision(10);
    out << correctness << ',' << ppl << ',' << dist1 << ',' << dist2 << ','
        << dist3 << ',' << coverage << ',' << samples;
    return out.str();
  }
};

struct KeywordList {
  std::vector<int> ids;

  static KeywordList domain_markers(const Vocab& v) {
    KeywordList k;
    for (int i = 0; i < v.domain_count; ++i) k.ids.push_back(v.domain_base + i);
    return k;
  }

  void validate(int vocab_size) const {
    if (ids.empty()) throw InvalidInputError("keyword list is empty");
    for (int id : ids)
      if (id < 0 || id >= vocab_size)
        throw InvalidInputError("keyword id outside the vocabulary");
  }
};

// Fraction of texts the judge assigns p(attribute|text) strictly above 0.5.
template <typename S>
double correctness(const std::vector<std::vector<int>>& texts,
                   const Discriminator<S>& judge, AttributeLabel attribute) {
  if (texts.empty()) throw InvalidInputError("correctness: empty text set");
  size_t hits = 0;
  for (const auto& t : texts)
    if (judge.score(t, attribute) > S(0.5)) ++hits;
  return double(hits) / double(texts.size());
}

struct Distinctness {
  double dist1 = 0.0, dist2 = 0.0, dist3 = 0.0;
};

// Unique n-grams across all texts divided by total n-grams, per order.
// Texts shorter than n contribute no n-grams of that order.
inline Distinctness distinctness(const std::vector<std::vector<int>>& texts) {
  if (texts.empty()) throw InvalidInputError("distinctness: empty text set");
  double out[3] = {0.0, 0.0, 0.0};
  for (int n = 1; n <= 3; ++n) {
    std::set<std::vector<int>> uniq;
    size_t total = 0;
    for (const auto& t : texts) {
      if (int(t.size()) < n) continue;
      for (size_t i = 0; i + size_t(n) <= t.size(); ++i) {
        uniq.insert(std::vector<int>(t.begin() + long(i),
                                     t.begin() + long(i + size_t(n))));
        ++total;
      }
    }
    out[n - 1] = total == 0 ? 0.0 : double(uniq.size()) / double(total);
  }
  return {out[0], out[1], out[2]};
}

// Fraction of texts containing at least one keyword token.
inline double coverage_rate(const std::vector<std::vector<int>>& texts,
                            const KeywordList& keywords) {
  if (texts.empty()) throw InvalidInputError("coverage_rate: empty text set");
  if (keywords.ids.empty())
    throw InvalidInputError("coverage_rate: empty keyword list");
  std::set<int> kw(keywords.ids.begin(), keywords.ids.end());
  size_t hits = 0;
  for (const auto& t : texts) {
    bool found = false;
    for (int id : t) found = found || kw.count(id) > 0;
    hits += found ? 1 : 0;
  }
  return double(hits) / double(texts.size());
}

// One continuation per prompt; per-prompt sampling seeds derive as
// seed ^ prompt-index, so a parallel runner would reproduce the serial
// result exactly.
template <typename S>
std::vector<std::vector<int>> generate_continuations(
    const CausalLM<S>& clm, const Tensor<S>& prompt,
    const std::vector<std::vector<int>>& prompt_set,
    const GenerationConfig& gen) {
  std::vector<std::vector<int>> continuations;
  continuations.reserve(prompt_set.size());
  for (size_t i = 0; i < prompt_set.size(); ++i) {
    GenerationConfig g = gen;
    g.seed = gen.seed ^ uint64_t(i);
    continuations.push_back(sample_continuation(clm, prompt_set[i], prompt, g));
  }
  return continuations;
}

// All four metrics over already-generated continuations. Correctness and
// perplexity judge the whole text (prompt + continuation); diversity and
// coverage are computed over the generated tokens.
template <typename S>
EvalReport eval_generations(const std::vector<std::vector<int>>& prompt_set,
                            const std::vector<std::vector<int>>& continuations,
                            const Discriminator<S>& judge_disc,
                            const CausalLM<S>& judge_lm,
                            const KeywordList& keywords,
                            AttributeLabel attribute,
                            const std::string& config_echo = "") {
  if (prompt_set.empty())
    throw InvalidInputError("eval_generations: empty prompt set");
  if (prompt_set.size() != continuations.size())
    throw ContractViolation("eval_generations: prompt/continuation mismatch");
  keywords.validate(judge_lm.config().vocab_size);

  std::vector<std::vector<int>> full_texts;
  full_texts.reserve(prompt_set.size());
  for (size_t i = 0; i < prompt_set.size(); ++i) {
    std::vector<int> full = prompt_set[i];
    full.insert(full.end(), continuations[i].begin(), continuations[i].end());
    full_texts.push_back(std::move(full));
  }

  EvalReport report;
  report.samples = int(prompt_set.size());
  report.correctness = correctness(full_texts, judge_disc, attribute);
  report.ppl = perplexity(judge_lm, full_texts);
  auto d = distinctness(continuations);
  report.dist1 = d.dist1;
  report.dist2 = d.dist2;
  report.dist3 = d.dist3;
  report.coverage = coverage_rate(continuations, keywords);
  report.config_echo = config_echo;
  return report;
}

// Generate one continuation per evaluation prompt, then compute all metrics.
template <typename S>
EvalReport run_eval_suite(const CausalLM<S>& clm, const Tensor<S>& prompt,
                          const Discriminator<S>& judge_disc,
                          const CausalLM<S>& judge_lm,
                          const std::vector<std::vector<int>>& prompt_set,
                          const GenerationConfig& gen,
                          const KeywordList& keywords,
                          const std::string& config_echo = "",
                          AttributeLabel attribute = {1}) {
  if (prompt_set.empty())
    throw InvalidInputError("run_eval_suite: empty prompt set");
  auto continuations = generate_continuations(clm, prompt, prompt_set, gen);
  return eval_generations(prompt_set, continuations, judge_disc, judge_lm,
                          keywords, attribute, config_echo);
}

enum class SweepAxis { prompt_length, candidate_k, train_size };

inline SweepAxis parse_sweep_axis(const std::string& s) {
  if (s == "prompt_length") return SweepAxis::prompt_length;
  if (s == "candidate_k") return SweepAxis::candidate_k;
  if (s == "train_size") return SweepAxis::train_size;
  throw InvalidInputError("unknown sweep axis: " + s);
}

template <typename S>
struct SweepContext {
  const CausalLM<S>* clm = nullptr;
  const Discriminator<S>* disc = nullptr;
  const Discriminator<S>* judge_disc = nullptr;
  const CausalLM<S>* judge_lm = nullptr;
  AttributeCorpus tune_corpus;
  std::vector<std::vector<int>> eval_prompts;
  GenerationConfig gen;
  KeywordList keywords;
  DiscupConfig base;
};

struct SweepRow {
  double axis_value = 0.0;
  EvalReport report;
};

// Retunes a DisCup prompt per axis value and evaluates it.
template <typename S>
std::vector<SweepRow> sweep(SweepAxis axis, const std::vector<double>& values,
                            const SweepContext<S>& ctx) {
  if (values.empty()) throw InvalidInputError("sweep: no axis values");
  std::vector<SweepRow> rows;
  for (double value : values) {
    DiscupConfig cfg = ctx.base;
    AttributeCorpus corpus = ctx.tune_corpus;
    switch (axis) {
      case SweepAxis::prompt_length:
        cfg.prompt_len = int(value);
        break;
      case SweepAxis::candidate_k:
        cfg.top_k = int(value);
        break;
      case SweepAxis::train_size: {
        const size_t n = std::min(size_t(value), corpus.samples.size());
        if (n == 0) throw InvalidInputError("sweep: train_size value is 0");
        corpus.samples.resize(n);
        break;
      }
    }
    auto tuned = discup_train(*ctx.clm, *ctx.disc, corpus, cfg);
    auto eff = materialize(tuned.prompt);
    std::ostringstream echo;
    echo << "alpha=" << cfg.alpha << " top_k=" << cfg.top_k
         << " prompt_len=" << cfg.prompt_len << " train_size="
         << corpus.samples.size();
    rows.push_back({value, run_eval_suite(*ctx.clm, eff.matrix, *ctx.judge_disc,
                                          *ctx.judge_lm, ctx.eval_prompts,
                                          ctx.gen, ctx.keywords, echo.str(),
                                          cfg.attribute)});
  }
  return rows;
}

inline std::string sweep_to_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream out;
  out.precision(10);
  out << "axis_value,correctness,ppl,dist1,dist2,dist3,coverage\n";
  for (const auto& r : rows)
    out << r.axis_value << ',' << r.report.correctness << ',' << r.report.ppl
        << ',' << r.report.dist1 << ',' << r.report.dist2 << ','
        << r.report.dist3 << ',' << r.report.coverage << "\n";
  return out.str();
}

}  // namespace discup
