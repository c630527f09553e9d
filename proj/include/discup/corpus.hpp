#pragma once

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "discup/error.hpp"
#include "discup/fsio.hpp"
#include "discup/rng.hpp"
#include "discup/vocab.hpp"

namespace discup {

// One training/evaluation sample: BOS-prefixed token ids, optionally labeled.
struct Sample {
  int label = -1;  // -1 = unlabeled, else AttributeLabel cls
  std::vector<int> ids;
};

struct AttributeCorpus {
  std::vector<Sample> samples;

  size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }

  AttributeCorpus filter_label(int cls) const {
    AttributeCorpus out;
    for (const auto& s : samples)
      if (s.label == cls) out.samples.push_back(s);
    return out;
  }

  AttributeCorpus unlabeled() const {
    AttributeCorpus out = *this;
    for (auto& s : out.samples) s.label = -1;
    return out;
  }
};

// Synthetic attribute-language description. Token partition sizes cover the
// whole vocabulary (BOS/PAD counted in the neutral share); samples follow a
// label-conditioned first-order Markov chain so a causal LM has real
// next-token signal to learn.
struct CorpusSpec {
  int pos = 16, neg = 16, neutral = 24, domain = 8;
  int seq_len = 24;
  double mix_target = 0.60, mix_neutral = 0.35, mix_opposite = 0.05;
  // Per-sample attribute-strength modulation: half the samples are strongly
  // attributed (target + spread) and half mildly (target - spread), keeping
  // the corpus-level mix at the configured ratios. Mirrors the strong/mild
  // grades of real sentiment corpora; 0 disables.
  double strength_spread = 0.25;
  double inject_prob = 0.0;
  int samples_per_class = 1000;
  uint64_t seed = 1;

  int vocab_size() const { return pos + neg + neutral + domain; }

  Vocab vocab() const { return Vocab::make(pos, neg, neutral, domain); }

  void validate() const {
    if (pos < 1 || neg < 1 || neutral < 3 || domain < 1)
      throw InvalidInputError("corpus spec: bad vocabulary partition");
    if (seq_len < 3) throw InvalidInputError("corpus spec: seq_len < 3");
    if (std::abs(mix_target + mix_neutral + mix_opposite - 1.0) > 1e-9)
      throw InvalidInputError("corpus spec: mix ratios must sum to 1");
    if (inject_prob < 0.0 || inject_prob > 1.0)
      throw InvalidInputError("corpus spec: inject_prob out of [0,1]");
    if (strength_spread < 0.0 || strength_spread > mix_target)
      throw InvalidInputError("corpus spec: strength_spread out of range");
    if (samples_per_class < 1)
      throw InvalidInputError("corpus spec: samples_per_class < 1");
  }
};

namespace detail {

struct CategoryRange {
  int base, count;
};

// Deterministic in-category successor; gives the chain its bigram structure.
inline int successor(int prev, CategoryRange cat) {
  return cat.base + (prev * 31 + 7) % cat.count;
}

inline int draw_token(Rng& rng, int prev, CategoryRange cat) {
  if (prev >= 0 && rng.uniform() < 0.7) return successor(prev, cat);
  return cat.base + int(rng.below(uint64_t(cat.count)));
}

// Heavier head so the dominant markers stay visible under top-k truncation.
inline const std::vector<double>& marker_weights() {
  static const std::vector<double> w = {0.45, 0.22, 0.12, 0.08,
                                        0.05, 0.04, 0.02, 0.02};
  return w;
}

inline int draw_marker(Rng& rng, const Vocab& v) {
  std::vector<double> w(marker_weights().begin(),
                        marker_weights().begin() + v.domain_count);
  return v.domain_base + int(rng.weighted(w));
}

inline std::vector<int> markov_sequence(Rng& rng, const Vocab& v,
                                        const CorpusSpec& spec, int label,
                                        int len) {
  const CategoryRange target{v.attribute_base({label}),
                             v.attribute_count({label})};
  const CategoryRange opposite{v.attribute_base(AttributeLabel{label}.opposite()),
                               v.attribute_count(AttributeLabel{label}.opposite())};
  const CategoryRange neutral{v.neutral_base, v.neutral_count};

  // strong or mild sample; the two variants average back to the base mix
  const double spread =
      rng.uniform() < 0.5 ? spec.strength_spread : -spec.strength_spread;
  double m_target = spec.mix_target + spread;
  double m_opp = std::max(0.0, spec.mix_opposite - 0.2 * spread);
  double m_neu = std::max(0.0, 1.0 - m_target - m_opp);
  m_target = 1.0 - m_neu - m_opp;

  std::vector<int> ids;
  ids.reserve(size_t(len) + 1);
  ids.push_back(Vocab::kBos);
  int prev = -1;
  for (int t = 0; t < len; ++t) {
    const double u = rng.uniform();
    CategoryRange cat =
        u < m_target ? target : u < m_target + m_neu ? neutral : opposite;
    const int tok = draw_token(rng, prev, cat);
    ids.push_back(tok);
    prev = tok;
  }
  return ids;
}

inline void maybe_inject(Rng& rng, const Vocab& v, const CorpusSpec& spec,
                         std::vector<int>& ids) {
  if (rng.uniform() >= spec.inject_prob) return;
  const int marker = draw_marker(rng, v);
  // two distinct positions past the opening token (ids[0] is BOS)
  const int span = int(ids.size()) - 2;
  if (span < 2) throw InvalidInputError("inject: sequence too short");
  int p1 = 2 + int(rng.below(uint64_t(span)));
  int p2 = 2 + int(rng.below(uint64_t(span - 1)));
  if (p2 >= p1) ++p2;
  ids[size_t(p1)] = marker;
  ids[size_t(p2)] = marker;
}

}  // namespace detail

// Labeled synthetic corpus, deterministic per spec.
inline AttributeCorpus gen_corpus(const CorpusSpec& spec) {
  spec.validate();
  const Vocab v = spec.vocab();
  Rng rng(spec.seed);
  AttributeCorpus corpus;
  corpus.samples.reserve(size_t(spec.samples_per_class) * 2);
  for (int label : {1, 0}) {
    for (int i = 0; i < spec.samples_per_class; ++i) {
      Sample s;
      s.label = label;
      s.ids = detail::markov_sequence(rng, v, spec, label, spec.seq_len);
      detail::maybe_inject(rng, v, spec, s.ids);
      corpus.samples.push_back(std::move(s));
    }
  }
  return corpus;
}

// Post-hoc domain-marker injection (used to skew a tuning corpus).
inline AttributeCorpus inject_domain_markers(const AttributeCorpus& in,
                                             const CorpusSpec& spec,
                                             double prob, uint64_t seed) {
  CorpusSpec s2 = spec;
  s2.inject_prob = prob;
  const Vocab v = spec.vocab();
  Rng rng(seed);
  AttributeCorpus out = in;
  for (auto& s : out.samples) detail::maybe_inject(rng, v, s2, s.ids);
  return out;
}

// Short prompt contexts for evaluation. label = -1 draws purely neutral
// tokens; otherwise tokens follow the given attribute's mix.
inline std::vector<std::vector<int>> gen_prompts(const CorpusSpec& spec,
                                                 int count, int len, int label,
                                                 uint64_t seed) {
  const Vocab v = spec.vocab();
  Rng rng(seed);
  std::vector<std::vector<int>> prompts;
  prompts.reserve(size_t(count));
  for (int i = 0; i < count; ++i) {
    if (label < 0) {
      std::vector<int> ids{Vocab::kBos};
      int prev = -1;
      for (int t = 0; t < len; ++t) {
        int tok = detail::draw_token(rng, prev,
                                     {v.neutral_base, v.neutral_count});
        ids.push_back(tok);
        prev = tok;
      }
      prompts.push_back(std::move(ids));
    } else {
      prompts.push_back(detail::markov_sequence(rng, v, spec, label, len));
    }
  }
  return prompts;
}

// Deterministic, label-stratified, disjoint partitions.
inline std::vector<AttributeCorpus> split(const AttributeCorpus& corpus,
                                          const std::vector<double>& fractions,
                                          uint64_t seed) {
  double total = 0.0;
  for (double f : fractions) {
    if (f < 0.0) throw InvalidInputError("split: negative fraction");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9)
    throw InvalidInputError("split: fractions must sum to 1");

  std::vector<AttributeCorpus> parts(fractions.size());
  // strata by label value (unlabeled samples form their own stratum)
  std::vector<int> labels;
  for (const auto& s : corpus.samples) {
    bool seen = false;
    for (int l : labels) seen = seen || l == s.label;
    if (!seen) labels.push_back(s.label);
  }
  Rng rng(seed);
  for (int label : labels) {
    std::vector<size_t> idx;
    for (size_t i = 0; i < corpus.samples.size(); ++i)
      if (corpus.samples[i].label == label) idx.push_back(i);
    rng.shuffle(idx);
    const size_t n = idx.size();
    size_t start = 0;
    double cum = 0.0;
    for (size_t k = 0; k < fractions.size(); ++k) {
      cum += fractions[k];
      const size_t end =
          k + 1 == fractions.size() ? n : size_t(std::llround(cum * double(n)));
      for (size_t i = start; i < end && i < n; ++i)
        parts[k].samples.push_back(corpus.samples[idx[i]]);
      start = end;
    }
  }
  return parts;
}

// --- corpus file format: one sample per line, "label<TAB>tok tok ..." ---

inline std::string corpus_to_tsv(const AttributeCorpus& corpus,
                                 const Vocab& v) {
  std::ostringstream out;
  for (const auto& s : corpus.samples) {
    if (s.ids.empty() || s.ids[0] != Vocab::kBos)
      throw ContractViolation("corpus: sample does not start with BOS");
    if (s.label >= 0) out << AttributeLabel{s.label}.name() << '\t';
    for (size_t i = 1; i < s.ids.size(); ++i) {
      if (i > 1) out << ' ';
      out << v.token_string(s.ids[i]);
    }
    out << '\n';
  }
  return out.str();
}

inline AttributeCorpus corpus_from_tsv(const std::string& text,
                                       const Vocab& v) {
  AttributeCorpus corpus;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    Sample s;
    std::string toks = line;
    const size_t tab = line.find('\t');
    if (tab != std::string::npos) {
      s.label = AttributeLabel::parse(line.substr(0, tab)).cls;
      toks = line.substr(tab + 1);
    }
    s.ids.push_back(Vocab::kBos);
    std::istringstream ts(toks);
    std::string tok;
    while (ts >> tok) s.ids.push_back(v.token_id(tok));
    if (s.ids.size() < 2) throw FormatError("corpus: empty sample line");
    corpus.samples.push_back(std::move(s));
  }
  return corpus;
}

inline void save_corpus(const AttributeCorpus& corpus, const Vocab& v,
                        const std::string& path) {
  atomic_write_file(path, corpus_to_tsv(corpus, v));
}

inline AttributeCorpus load_corpus(const std::string& path, const Vocab& v) {
  return corpus_from_tsv(read_file(path), v);
}

}  // namespace discup
