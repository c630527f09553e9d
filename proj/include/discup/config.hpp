#pragma once

#include <sstream>
#include <string>

#include "discup/corpus.hpp"
#include "discup/discup.hpp"
#include "discup/error.hpp"
#include "discup/transformer.hpp"

namespace discup {

// Whole-workbench configuration as a flat key=value file. Unknown keys are a
// hard error; command-line flags override file values.
struct RunConfig {
  // synthetic corpus
  int samples_per_class = 1000;
  int seq_len = 24;
  double mix_target = 0.60, mix_neutral = 0.35, mix_opposite = 0.05;
  double strength_spread = 0.25;   // strong/mild per-sample modulation
  double inject_prob = 0.3;        // base-corpus domain-marker rate
  int vocab_pos = 16, vocab_neg = 16, vocab_neutral = 24, vocab_domain = 8;
  // pipeline data handling
  double tune_inject_prob = 0.5;   // markers into the tuning corpus
  int eval_neutral = 200;
  int eval_adversarial = 100;
  int prompt_ctx_len = 4;
  // architectures
  int clm_d_emb = 64, clm_layers = 2, clm_heads = 4, clm_ctx = 64;
  int disc_d_emb = 32, disc_layers = 2, disc_heads = 2, disc_ctx = 64;
  // training
  int clm_epochs = 6, disc_epochs = 4, judge_lm_epochs = 4,
      judge_disc_epochs = 4, tune_epochs = 6;
  double lr = 1e-3;
  int batch = 8;
  // control-prompt tuning
  double alpha = 0.005;
  int top_k = 8;
  int prompt_len = 10;
  int prompt_len_adversarial = 12;
  bool unlikelihood = true;
  std::string target_attribute = "positive";
  // generation
  int max_new_tokens = 20;
  int sample_top_k = 10;
  double temperature = 1.0;
  uint64_t seed = 1;

  CorpusSpec corpus_spec(uint64_t corpus_seed) const {
    CorpusSpec spec;
    spec.pos = vocab_pos;
    spec.neg = vocab_neg;
    spec.neutral = vocab_neutral;
    spec.domain = vocab_domain;
    spec.seq_len = seq_len;
    spec.mix_target = mix_target;
    spec.mix_neutral = mix_neutral;
    spec.mix_opposite = mix_opposite;
    spec.strength_spread = strength_spread;
    spec.inject_prob = inject_prob;
    spec.samples_per_class = samples_per_class;
    spec.seed = corpus_seed;
    return spec;
  }

  TransformerConfig clm_arch() const {
    return {vocab_pos + vocab_neg + vocab_neutral + vocab_domain, clm_d_emb,
            clm_layers, clm_heads, clm_ctx};
  }

  TransformerConfig disc_arch() const {
    return {vocab_pos + vocab_neg + vocab_neutral + vocab_domain, disc_d_emb,
            disc_layers, disc_heads, disc_ctx};
  }

  AttributeLabel target() const {
    return AttributeLabel::parse(target_attribute);
  }

  GenerationConfig gen_config(uint64_t gen_seed) const {
    return {max_new_tokens, sample_top_k, gen_seed, temperature};
  }

  DiscupConfig discup_config(bool adversarial_length, uint64_t tune_seed) const {
    DiscupConfig cfg;
    cfg.alpha = alpha;
    cfg.top_k = top_k;
    cfg.attribute = target();
    cfg.epochs = tune_epochs;
    cfg.lr = lr;
    cfg.unlikelihood = unlikelihood;
    cfg.seed = tune_seed;
    cfg.prompt_len = adversarial_length ? prompt_len_adversarial : prompt_len;
    cfg.batch = batch;
    return cfg;
  }
};

namespace config_detail {

inline void assign(RunConfig& c, const std::string& key,
                   const std::string& value) {
  auto as_int = [&]() { return std::stoi(value); };
  auto as_double = [&]() { return std::stod(value); };
  auto as_u64 = [&]() { return uint64_t(std::stoull(value)); };
  auto as_bool = [&]() {
    if (value == "1" || value == "true") return true;
    if (value == "0" || value == "false") return false;
    throw InvalidInputError("config: boolean key " + key + " got '" + value +
                            "'");
  };
  if (key == "samples_per_class") c.samples_per_class = as_int();
  else if (key == "seq_len") c.seq_len = as_int();
  else if (key == "mix_target") c.mix_target = as_double();
  else if (key == "mix_neutral") c.mix_neutral = as_double();
  else if (key == "mix_opposite") c.mix_opposite = as_double();
  else if (key == "strength_spread") c.strength_spread = as_double();
  else if (key == "inject_prob") c.inject_prob = as_double();
  else if (key == "vocab_pos") c.vocab_pos = as_int();
  else if (key == "vocab_neg") c.vocab_neg = as_int();
  else if (key == "vocab_neutral") c.vocab_neutral = as_int();
  else if (key == "vocab_domain") c.vocab_domain = as_int();
  else if (key == "tune_inject_prob") c.tune_inject_prob = as_double();
  else if (key == "eval_neutral") c.eval_neutral = as_int();
  else if (key == "eval_adversarial") c.eval_adversarial = as_int();
  else if (key == "prompt_ctx_len") c.prompt_ctx_len = as_int();
  else if (key == "clm_d_emb") c.clm_d_emb = as_int();
  else if (key == "clm_layers") c.clm_layers = as_int();
  else if (key == "clm_heads") c.clm_heads = as_int();
  else if (key == "clm_ctx") c.clm_ctx = as_int();
  else if (key == "disc_d_emb") c.disc_d_emb = as_int();
  else if (key == "disc_layers") c.disc_layers = as_int();
  else if (key == "disc_heads") c.disc_heads = as_int();
  else if (key == "disc_ctx") c.disc_ctx = as_int();
  else if (key == "clm_epochs") c.clm_epochs = as_int();
  else if (key == "disc_epochs") c.disc_epochs = as_int();
  else if (key == "judge_lm_epochs") c.judge_lm_epochs = as_int();
  else if (key == "judge_disc_epochs") c.judge_disc_epochs = as_int();
  else if (key == "tune_epochs") c.tune_epochs = as_int();
  else if (key == "lr") c.lr = as_double();
  else if (key == "batch") c.batch = as_int();
  else if (key == "alpha") c.alpha = as_double();
  else if (key == "top_k") c.top_k = as_int();
  else if (key == "prompt_len") c.prompt_len = as_int();
  else if (key == "prompt_len_adversarial") c.prompt_len_adversarial = as_int();
  else if (key == "unlikelihood") c.unlikelihood = as_bool();
  else if (key == "target_attribute") c.target_attribute = value;
  else if (key == "max_new_tokens") c.max_new_tokens = as_int();
  else if (key == "sample_top_k") c.sample_top_k = as_int();
  else if (key == "temperature") c.temperature = as_double();
  else if (key == "seed") c.seed = as_u64();
  else throw InvalidInputError("config: unknown key '" + key + "'");
}

}  // namespace config_detail

inline RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    // trim
    const size_t first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const size_t last = line.find_last_not_of(" \t\r");
    line = line.substr(first, last - first + 1);
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw InvalidInputError("config line " + std::to_string(lineno) +
                              ": expected key=value");
    try {
      config_detail::assign(cfg, line.substr(0, eq), line.substr(eq + 1));
    } catch (const InvalidInputError&) {
      throw;
    } catch (const std::exception&) {
      throw InvalidInputError("config line " + std::to_string(lineno) +
                              ": bad value for " + line.substr(0, eq));
    }
  }
  return cfg;
}

inline RunConfig load_config(const std::string& path) {
  return parse_config(read_file(path));
}

inline std::string config_to_string(const RunConfig& c) {
  std::ostringstream out;
  out.precision(12);
  out << "samples_per_class=" << c.samples_per_class << "\n"
      << "seq_len=" << c.seq_len << "\n"
      << "mix_target=" << c.mix_target << "\n"
      << "mix_neutral=" << c.mix_neutral << "\n"
      << "mix_opposite=" << c.mix_opposite << "\n"
      << "strength_spread=" << c.strength_spread << "\n"
      << "inject_prob=" << c.inject_prob << "\n"
      << "vocab_pos=" << c.vocab_pos << "\n"
      << "vocab_neg=" << c.vocab_neg << "\n"
      << "vocab_neutral=" << c.vocab_neutral << "\n"
      << "vocab_domain=" << c.vocab_domain << "\n"
      << "tune_inject_prob=" << c.tune_inject_prob << "\n"
      << "eval_neutral=" << c.eval_neutral << "\n"
      << "eval_adversarial=" << c.eval_adversarial << "\n"
      << "prompt_ctx_len=" << c.prompt_ctx_len << "\n"
      << "clm_d_emb=" << c.clm_d_emb << "\n"
      << "clm_layers=" << c.clm_layers << "\n"
      << "clm_heads=" << c.clm_heads << "\n"
      << "clm_ctx=" << c.clm_ctx << "\n"
      << "disc_d_emb=" << c.disc_d_emb << "\n"
      << "disc_layers=" << c.disc_layers << "\n"
      << "disc_heads=" << c.disc_heads << "\n"
      << "disc_ctx=" << c.disc_ctx << "\n"
      << "clm_epochs=" << c.clm_epochs << "\n"
      << "disc_epochs=" << c.disc_epochs << "\n"
      << "judge_lm_epochs=" << c.judge_lm_epochs << "\n"
      << "judge_disc_epochs=" << c.judge_disc_epochs << "\n"
      << "tune_epochs=" << c.tune_epochs << "\n"
      << "lr=" << c.lr << "\n"
      << "batch=" << c.batch << "\n"
      << "alpha=" << c.alpha << "\n"
      << "top_k=" << c.top_k << "\n"
      << "prompt_len=" << c.prompt_len << "\n"
      << "prompt_len_adversarial=" << c.prompt_len_adversarial << "\n"
      << "unlikelihood=" << (c.unlikelihood ? 1 : 0) << "\n"
      << "target_attribute=" << c.target_attribute << "\n"
      << "max_new_tokens=" << c.max_new_tokens << "\n"
      << "sample_top_k=" << c.sample_top_k << "\n"
      << "temperature=" << c.temperature << "\n"
      << "seed=" << c.seed << "\n";
  return out.str();
}

}  // namespace discup
