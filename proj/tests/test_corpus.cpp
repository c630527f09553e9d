#include <cmath>
#include <set>

#include "discup/corpus.hpp"
#include "discup/metrics.hpp"
#include "doctest.h"

using namespace discup;

namespace {

// 10-line logistic-regression oracle on token-frequency features
double logistic_oracle_accuracy(const AttributeCorpus& train,
                                const AttributeCorpus& held_out, int vocab) {
  std::vector<double> w(size_t(vocab), 0.0);
  for (int it = 0; it < 200; ++it)
    for (const auto& s : train.samples) {
      double z = 0.0;
      for (int id : s.ids) z += w[size_t(id)];
      const double p = 1.0 / (1.0 + std::exp(-z));
      const double g = double(s.label) - p;
      for (int id : s.ids) w[size_t(id)] += 0.05 * g;
    }
  size_t hits = 0;
  for (const auto& s : held_out.samples) {
    double z = 0.0;
    for (int id : s.ids) z += w[size_t(id)];
    hits += ((z > 0.0) == (s.label == 1)) ? 1 : 0;
  }
  return double(hits) / double(held_out.size());
}

std::vector<std::vector<int>> token_parts(const AttributeCorpus& c) {
  std::vector<std::vector<int>> out;
  for (const auto& s : c.samples)
    out.push_back(std::vector<int>(s.ids.begin() + 1, s.ids.end()));
  return out;
}

}  // namespace

TEST_CASE("vocabulary layout and token rendering") {
  const Vocab v = Vocab::standard();
  CHECK(v.size == 64);
  CHECK(Vocab::kBos == 0);
  CHECK(v.pos_count == 16);
  CHECK(v.neg_count == 16);
  CHECK(v.neutral_count == 22);  // 24 minus the two reserved ids
  CHECK(v.domain_count == 8);
  CHECK(v.pos_base + v.pos_count == v.neg_base);
  CHECK(v.domain_base + v.domain_count == v.size);

  // bijective rendering over the whole vocabulary
  std::set<std::string> seen;
  for (int id = 0; id < v.size; ++id) {
    auto s = v.token_string(id);
    CHECK(seen.insert(s).second);
    CHECK(v.token_id(s) == id);
  }
  CHECK(v.token_string(0) == "<bos>");
  CHECK(v.token_string(v.domain_base) == "d0");
  CHECK_THROWS_AS(v.token_id("zzz"), FormatError);
}

TEST_CASE("gen_corpus sample counts and label presence") {
  CorpusSpec spec;
  spec.samples_per_class = 1000;
  spec.seed = 1;
  auto corpus = gen_corpus(spec);
  CHECK(corpus.size() == 2000);
  size_t pos = 0, neg = 0;
  for (const auto& s : corpus.samples) {
    CHECK(s.ids.size() == size_t(spec.seq_len) + 1);
    CHECK(s.ids[0] == Vocab::kBos);
    for (int id : s.ids) CHECK(id < spec.vocab_size());
    (s.label == 1 ? pos : neg)++;
  }
  CHECK(pos == 1000);
  CHECK(neg == 1000);

  // pure function of the spec
  auto again = gen_corpus(spec);
  CHECK(again.size() == corpus.size());
  for (size_t i = 0; i < corpus.size(); ++i)
    CHECK(again.samples[i].ids == corpus.samples[i].ids);
}

TEST_CASE("domain marker injection controls corpus coverage") {
  const Vocab v = Vocab::standard();
  auto kw = KeywordList::domain_markers(v);

  CorpusSpec clean;
  clean.samples_per_class = 300;
  clean.inject_prob = 0.0;
  clean.seed = 2;
  CHECK(coverage_rate(token_parts(gen_corpus(clean)), kw) == 0.0);

  CorpusSpec skewed = clean;
  skewed.samples_per_class = 5000;  // 10000 samples total
  skewed.inject_prob = 0.5;
  const double cov = coverage_rate(token_parts(gen_corpus(skewed)), kw);
  CHECK(cov >= 0.45);
  CHECK(cov <= 0.55);

  // post-hoc injection mirrors generation-time injection semantics
  auto base = gen_corpus(clean);
  auto injected = inject_domain_markers(base, clean, 1.0, 9);
  CHECK(coverage_rate(token_parts(injected), kw) == 1.0);
  CHECK(coverage_rate(token_parts(base), kw) == 0.0);  // input untouched
}

TEST_CASE("spec validation") {
  CorpusSpec bad;
  bad.mix_target = 0.9;  // ratios no longer sum to 1
  CHECK_THROWS_AS(gen_corpus(bad), InvalidInputError);
  CorpusSpec bad2;
  bad2.seq_len = 2;
  CHECK_THROWS_AS(gen_corpus(bad2), InvalidInputError);
  CorpusSpec bad3;
  bad3.inject_prob = 1.5;
  CHECK_THROWS_AS(gen_corpus(bad3), InvalidInputError);
}

TEST_CASE("split is stratified, disjoint and deterministic") {
  CorpusSpec spec;
  spec.samples_per_class = 1000;
  spec.seed = 3;
  auto corpus = gen_corpus(spec);
  auto parts = split(corpus, {0.5, 0.2, 0.1, 0.1, 0.1}, 7);
  REQUIRE(parts.size() == 5);
  CHECK(std::abs(int(parts[0].size()) - 1000) <= 1);
  CHECK(std::abs(int(parts[1].size()) - 400) <= 1);
  CHECK(std::abs(int(parts[2].size()) - 200) <= 1);
  CHECK(std::abs(int(parts[3].size()) - 200) <= 1);
  CHECK(std::abs(int(parts[4].size()) - 200) <= 1);

  // union equals the corpus, pairwise intersections empty (as multisets)
  std::multiset<std::string> all, joined;
  auto key = [](const Sample& s) {
    std::string k = std::to_string(s.label);
    for (int id : s.ids) k += ":" + std::to_string(id);
    return k;
  };
  size_t total = 0;
  for (const auto& s : corpus.samples) all.insert(key(s));
  for (const auto& p : parts) {
    total += p.size();
    for (const auto& s : p.samples) joined.insert(key(s));
  }
  CHECK(total == corpus.size());
  CHECK(all == joined);

  // label stratification
  for (const auto& p : parts) {
    size_t pos = 0;
    for (const auto& s : p.samples) pos += s.label == 1 ? 1 : 0;
    CHECK(std::abs(double(pos) / double(p.size()) - 0.5) < 0.01);
  }

  auto parts2 = split(corpus, {0.5, 0.2, 0.1, 0.1, 0.1}, 7);
  for (size_t k = 0; k < parts.size(); ++k)
    for (size_t i = 0; i < parts[k].size(); ++i)
      CHECK(parts2[k].samples[i].ids == parts[k].samples[i].ids);

  CHECK_THROWS_AS(split(corpus, {0.5, 0.2}, 7), InvalidInputError);
}

TEST_CASE("label separability under a logistic token-frequency oracle") {
  CorpusSpec spec;
  spec.samples_per_class = 200;
  spec.seed = 5;
  auto corpus = gen_corpus(spec);
  auto parts = split(corpus, {0.7, 0.3}, 11);
  CHECK(logistic_oracle_accuracy(parts[0], parts[1], spec.vocab_size()) >
        0.95);
}

TEST_CASE("corpus TSV roundtrip") {
  const Vocab v = Vocab::standard();
  CorpusSpec spec;
  spec.samples_per_class = 20;
  spec.inject_prob = 0.5;
  spec.seed = 13;
  auto corpus = gen_corpus(spec);

  auto text = corpus_to_tsv(corpus, v);
  auto back = corpus_from_tsv(text, v);
  REQUIRE(back.size() == corpus.size());
  for (size_t i = 0; i < corpus.size(); ++i) {
    CHECK(back.samples[i].label == corpus.samples[i].label);
    CHECK(back.samples[i].ids == corpus.samples[i].ids);
  }

  // unlabeled corpora omit the label column
  auto unl = corpus.unlabeled();
  auto text2 = corpus_to_tsv(unl, v);
  CHECK(text2.find('\t') == std::string::npos);
  auto back2 = corpus_from_tsv(text2, v);
  CHECK(back2.samples[0].label == -1);
  CHECK(back2.samples[0].ids == corpus.samples[0].ids);
}

TEST_CASE("gen_prompts produces BOS-prefixed contexts of the requested kind") {
  CorpusSpec spec;
  const Vocab v = spec.vocab();
  auto neutral = gen_prompts(spec, 10, 4, -1, 17);
  CHECK(neutral.size() == 10);
  for (const auto& p : neutral) {
    CHECK(p.size() == 5);
    CHECK(p[0] == Vocab::kBos);
    for (size_t i = 1; i < p.size(); ++i) {
      CHECK(p[i] >= v.neutral_base);
      CHECK(p[i] < v.neutral_base + v.neutral_count);
    }
  }
  auto adversarial = gen_prompts(spec, 6, 4, 0, 19);
  CHECK(adversarial.size() == 6);
  for (const auto& p : adversarial) CHECK(p.size() == 5);
  // deterministic
  auto again = gen_prompts(spec, 10, 4, -1, 17);
  CHECK(again == neutral);
}
