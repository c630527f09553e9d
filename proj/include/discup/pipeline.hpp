#pragma once

#include <filesystem>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "discup/checkpoint.hpp"
#include "discup/config.hpp"
#include "discup/corpus.hpp"
#include "discup/discup.hpp"
#include "discup/fsio.hpp"
#include "discup/metrics.hpp"

namespace discup {

// Deterministic stage seed streams off the master seed.
enum class SeedStream : uint64_t {
  corpus = 1,
  split = 2,
  tune_inject = 3,
  neutral_prompts = 4,
  clm_init = 5,
  clm_train = 6,
  disc_init = 7,
  disc_train = 8,
  judge_disc_init = 9,
  judge_disc_train = 10,
  judge_lm_init = 11,
  judge_lm_train = 12,
  tune_vanilla = 13,
  tune_discup = 14,
  val_prompts = 17,
  val_gen = 18,
  gen_base = 20,
  gen_method = 24,  // + method*4 + set
};

inline uint64_t stage_seed(uint64_t master, SeedStream stream,
                           uint64_t offset = 0) {
  return mix_seed(master, uint64_t(stream) + offset);
}

struct StageStatus {
  std::string name;
  bool skipped = false;
};

struct PipelineResult {
  std::string out_dir;
  EvalReport report[3][2];  // [vanilla|discup|discup_nounl][neutral|adv]
  double base_samples_ppl = 0.0;
  std::string manifest;
  uint64_t manifest_hash = 0;
  std::vector<StageStatus> stages;

  const EvalReport& vanilla(int set) const { return report[0][set]; }
  const EvalReport& discup(int set) const { return report[1][set]; }
  const EvalReport& discup_nounl(int set) const { return report[2][set]; }
};

// A pipeline stage failed; carries the stage name for diagnostics.
struct StageFailure {
  std::string stage;
  std::string message;
};

namespace pipe_detail {

inline const char* kMethods[3] = {"vanilla", "discup", "discup_nounl"};
inline const char* kSets[2] = {"neutral", "adversarial"};

inline std::string gens_to_tsv(const std::vector<std::vector<int>>& prompts,
                               const std::vector<std::vector<int>>& conts,
                               const Vocab& v) {
  std::ostringstream out;
  for (size_t i = 0; i < prompts.size(); ++i) {
    for (size_t j = 1; j < prompts[i].size(); ++j)
      out << (j > 1 ? " " : "") << v.token_string(prompts[i][j]);
    out << '\t';
    for (size_t j = 0; j < conts[i].size(); ++j)
      out << (j > 0 ? " " : "") << v.token_string(conts[i][j]);
    out << '\n';
  }
  return out.str();
}

struct Gens {
  std::vector<std::vector<int>> prompts;  // BOS-prefixed
  std::vector<std::vector<int>> conts;
};

inline Gens gens_from_tsv(const std::string& text, const Vocab& v) {
  Gens g;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const size_t tab = line.find('\t');
    if (tab == std::string::npos)
      throw FormatError("generations file: missing tab separator");
    auto parse_tokens = [&](const std::string& part, bool bos) {
      std::vector<int> ids;
      if (bos) ids.push_back(Vocab::kBos);
      std::istringstream ts(part);
      std::string tok;
      while (ts >> tok) ids.push_back(v.token_id(tok));
      return ids;
    };
    g.prompts.push_back(parse_tokens(line.substr(0, tab), true));
    g.conts.push_back(parse_tokens(line.substr(tab + 1), false));
  }
  return g;
}

// Stage runner with resume support: a stage reruns when an output is missing
// or an input was regenerated earlier in this run.
class StageRunner {
 public:
  StageRunner(const std::string& dir, bool resume,
              std::vector<StageStatus>& log)
      : dir_(dir), resume_(resume), log_(log) {}

  template <typename Fn>
  void run(const std::string& name, const std::vector<std::string>& inputs,
           const std::vector<std::string>& outputs, Fn&& fn) {
    bool need = !resume_;
    for (const auto& out : outputs)
      need = need || !file_exists(path(out));
    for (const auto& in : inputs) need = need || regenerated_.count(in) > 0;
    if (!need) {
      log_.push_back({name, true});
      return;
    }
    try {
      fn();
    } catch (const std::exception& e) {
      throw StageFailure{name, e.what()};
    }
    for (const auto& out : outputs) regenerated_.insert(out);
    log_.push_back({name, false});
  }

  std::string path(const std::string& rel) const {
    return (std::filesystem::path(dir_) / rel).string();
  }

 private:
  std::string dir_;
  bool resume_;
  std::vector<StageStatus>& log_;
  std::set<std::string> regenerated_;
};

inline void write_train_log(const std::string& path, const std::string& header,
                            const std::vector<TuneLogRow>& rows) {
  std::ostringstream out;
  out.precision(10);
  out << header << "\n";
  for (const auto& r : rows)
    out << "epoch=" << r.epoch << " like_loss=" << r.like
        << " unlike_loss=" << r.unlike << "\n";
  atomic_write_file(path, out.str());
}

inline void write_loss_log(const std::string& path, const std::string& header,
                           const std::vector<double>& losses) {
  std::ostringstream out;
  out.precision(10);
  out << header << "\n";
  for (size_t i = 0; i < losses.size(); ++i)
    out << "epoch=" << i << " loss=" << losses[i] << "\n";
  atomic_write_file(path, out.str());
}

// Control-performance scorer for best-epoch checkpoint selection: fraction
// of continuations from a small neutral validation prompt set that the
// steering discriminator classifies as the target attribute.
template <typename S>
EpochScorer<S> control_performance_scorer(
    const CausalLM<S>& clm, const Discriminator<S>& disc,
    std::vector<std::vector<int>> val_prompts, GenerationConfig gen,
    AttributeLabel target) {
  return [&clm, &disc, val_prompts = std::move(val_prompts), gen,
          target](const PromptBlock<S>& block, int) {
    auto eff = materialize(block);
    auto conts = generate_continuations(clm, eff.matrix, val_prompts, gen);
    size_t hits = 0;
    for (size_t i = 0; i < val_prompts.size(); ++i) {
      std::vector<int> full = val_prompts[i];
      full.insert(full.end(), conts[i].begin(), conts[i].end());
      hits += disc.score(full, target) > S(0.5) ? 1 : 0;
    }
    return double(hits) / double(val_prompts.size());
  };
}

}  // namespace pipe_detail

// End-to-end pipeline: data, models, prompt tuning, generation, evaluation,
// manifest. Deterministic per (config, master seed); with resume=true only
// stages with missing outputs (and their downstream consumers) recompute.
inline PipelineResult pipeline_run(const RunConfig& cfg,
                                   const std::string& out_dir,
                                   bool resume = false) {
  using namespace pipe_detail;
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);

  PipelineResult result;
  result.out_dir = out_dir;
  StageRunner stages(out_dir, resume, result.stages);
  const uint64_t master = cfg.seed;
  const CorpusSpec spec = cfg.corpus_spec(stage_seed(master, SeedStream::corpus));
  const Vocab vocab = spec.vocab();
  const AttributeLabel target = cfg.target();

  // manifest artifacts in stage order
  std::vector<std::string> artifacts;
  auto artifact = [&](const std::string& rel) {
    artifacts.push_back(rel);
    return stages.path(rel);
  };

  const std::string f_corpus = artifact("corpus.tsv");
  const std::string f_clm_corpus = artifact("corpus_clm.tsv");
  const std::string f_disc_corpus = artifact("corpus_disc.tsv");
  const std::string f_judge_corpus = artifact("corpus_judge.tsv");
  const std::string f_tune_corpus = artifact("corpus_tune.tsv");
  const std::string f_neutral = artifact("prompts_neutral.tsv");
  const std::string f_adv = artifact("prompts_adversarial.tsv");
  const std::string f_clm = artifact("clm.ckpt");
  const std::string f_clm_log = artifact("clm_train.log");
  const std::string f_disc = artifact("disc.ckpt");
  const std::string f_disc_log = artifact("disc_train.log");
  const std::string f_judge_disc = artifact("judge_disc.ckpt");
  const std::string f_judge_disc_log = artifact("judge_disc_train.log");
  const std::string f_judge_lm = artifact("judge_lm.ckpt");
  const std::string f_judge_lm_log = artifact("judge_lm_train.log");
  const std::string f_vanilla = artifact("prompt_vanilla.ckpt");
  const std::string f_vanilla_log = artifact("tune_vanilla.log");
  const std::string f_discup = artifact("prompt_discup.ckpt");
  const std::string f_discup_log = artifact("tune_discup.log");
  const std::string f_nounl = artifact("prompt_discup_nounl.ckpt");
  const std::string f_nounl_log = artifact("tune_discup_nounl.log");
  std::string f_gens[3][2];
  for (int m = 0; m < 3; ++m)
    for (int s = 0; s < 2; ++s)
      f_gens[m][s] = artifact(std::string("gens_") + kMethods[m] + "_" +
                              kSets[s] + ".tsv");
  const std::string f_base_samples = artifact("base_samples.tsv");
  std::string f_eval[3][2];
  for (int m = 0; m < 3; ++m)
    for (int s = 0; s < 2; ++s)
      f_eval[m][s] = artifact(std::string("eval_") + kMethods[m] + "_" +
                              kSets[s] + ".kv");
  const std::string f_summary = artifact("summary.txt");

  stages.run("gen-data", {}, {"corpus.tsv"}, [&]() {
    save_corpus(gen_corpus(spec), vocab, f_corpus);
  });

  stages.run(
      "split", {"corpus.tsv"},
      {"corpus_clm.tsv", "corpus_disc.tsv", "corpus_judge.tsv",
       "corpus_tune.tsv", "prompts_neutral.tsv", "prompts_adversarial.tsv"},
      [&]() {
        auto corpus = load_corpus(f_corpus, vocab);
        auto parts = split(corpus, {0.4, 0.2, 0.1, 0.2, 0.1},
                           stage_seed(master, SeedStream::split));
        save_corpus(parts[0], vocab, f_clm_corpus);
        save_corpus(parts[1], vocab, f_disc_corpus);
        save_corpus(parts[2], vocab, f_judge_corpus);
        auto tune = inject_domain_markers(
            parts[3], spec, cfg.tune_inject_prob,
            stage_seed(master, SeedStream::tune_inject));
        save_corpus(tune, vocab, f_tune_corpus);

        // neutral contexts are synthesized; adversarial contexts are held-out
        // opposite-attribute prefixes from the eval partition
        auto neutral = gen_prompts(spec, cfg.eval_neutral, cfg.prompt_ctx_len,
                                   -1,
                                   stage_seed(master, SeedStream::neutral_prompts));
        AttributeCorpus neutral_c;
        for (auto& p : neutral) neutral_c.samples.push_back({-1, p});
        save_corpus(neutral_c, vocab, f_neutral);

        AttributeCorpus adv;
        for (const auto& s : parts[4].samples) {
          if (s.label != target.opposite().cls) continue;
          if (int(adv.samples.size()) >= cfg.eval_adversarial) break;
          Sample p;
          p.label = -1;
          p.ids = std::vector<int>(
              s.ids.begin(),
              s.ids.begin() + std::min<size_t>(s.ids.size(),
                                               size_t(cfg.prompt_ctx_len) + 1));
          // evaluation prompts stay marker-free so coverage isolates what
          // the tuned prompts learned
          bool has_marker = false;
          for (int id : p.ids) has_marker = has_marker || vocab.is_domain(id);
          if (has_marker) continue;
          adv.samples.push_back(std::move(p));
        }
        if (adv.samples.empty())
          throw InvalidInputError("pipeline: no adversarial prompts available");
        save_corpus(adv, vocab, f_adv);
      });

  stages.run("train-clm", {"corpus_clm.tsv"}, {"clm.ckpt", "clm_train.log"},
             [&]() {
               auto corpus = load_corpus(f_clm_corpus, vocab);
               CausalLM<float> clm(cfg.clm_arch(),
                                   stage_seed(master, SeedStream::clm_init));
               auto losses = mle_train(
                   clm, corpus,
                   {cfg.clm_epochs, cfg.lr, cfg.batch,
                    stage_seed(master, SeedStream::clm_train)});
               save_checkpoint(clm, f_clm, {{"seed", std::to_string(master)}});
               write_loss_log(f_clm_log, "# train-clm epochs=" +
                                             std::to_string(cfg.clm_epochs),
                              losses);
             });

  auto train_disc_stage = [&](const char* name, const std::string& corpus_file,
                              const std::string& ckpt_file,
                              const std::string& log_file, int epochs,
                              SeedStream init_s, SeedStream train_s) {
    stages.run(name, {corpus_file}, {fs::path(ckpt_file).filename().string(),
                                     fs::path(log_file).filename().string()},
               [&]() {
                 auto corpus = load_corpus(stages.path(corpus_file), vocab);
                 Discriminator<float> disc(cfg.disc_arch(),
                                           stage_seed(master, init_s));
                 auto losses = disc_train(disc, corpus,
                                          {epochs, cfg.lr, cfg.batch,
                                           stage_seed(master, train_s)});
                 save_checkpoint(disc, ckpt_file);
                 write_loss_log(log_file,
                                std::string("# ") + name +
                                    " epochs=" + std::to_string(epochs),
                                losses);
               });
  };
  train_disc_stage("train-disc", "corpus_disc.tsv", f_disc, f_disc_log,
                   cfg.disc_epochs, SeedStream::disc_init,
                   SeedStream::disc_train);
  train_disc_stage("train-judge-disc", "corpus_judge.tsv", f_judge_disc,
                   f_judge_disc_log, cfg.judge_disc_epochs,
                   SeedStream::judge_disc_init, SeedStream::judge_disc_train);

  stages.run("train-judge-lm", {"corpus_clm.tsv"},
             {"judge_lm.ckpt", "judge_lm_train.log"}, [&]() {
               auto corpus = load_corpus(f_clm_corpus, vocab);
               CausalLM<float> judge(cfg.clm_arch(),
                                     stage_seed(master, SeedStream::judge_lm_init));
               auto losses = mle_train(
                   judge, corpus,
                   {cfg.judge_lm_epochs, cfg.lr, cfg.batch,
                    stage_seed(master, SeedStream::judge_lm_train)});
               save_checkpoint(judge, f_judge_lm);
               write_loss_log(f_judge_lm_log,
                              "# train-judge-lm epochs=" +
                                  std::to_string(cfg.judge_lm_epochs),
                              losses);
             });

  const auto val_prompts =
      gen_prompts(spec, 32, cfg.prompt_ctx_len, -1,
                  stage_seed(master, SeedStream::val_prompts));
  const GenerationConfig val_gen =
      cfg.gen_config(stage_seed(master, SeedStream::val_gen));

  stages.run("tune-vanilla", {"clm.ckpt", "disc.ckpt", "corpus_tune.tsv"},
             {"prompt_vanilla.ckpt", "tune_vanilla.log"}, [&]() {
               auto clm = load_causal_lm(f_clm);
               auto disc = load_discriminator(f_disc);
               auto tune = load_corpus(f_tune_corpus, vocab)
                               .filter_label(target.cls);
               DiscupConfig dc = cfg.discup_config(
                   false, stage_seed(master, SeedStream::tune_vanilla));
               auto scorer = control_performance_scorer(clm, disc, val_prompts,
                                                        val_gen, target);
               auto tuned = vanilla_prompt_train(clm, tune, dc, scorer);
               save_checkpoint(materialize(tuned.prompt), f_vanilla);
               std::ostringstream hdr;
               hdr << "# tune-vanilla prompt_len=" << dc.prompt_len
                   << " epochs=" << dc.epochs << " lr=" << dc.lr
                   << " seed=" << cfg.seed
                   << " selected_epoch=" << tuned.selected_epoch;
               write_train_log(f_vanilla_log, hdr.str(), tuned.log);
             });

  auto tune_discup_stage = [&](const char* name, bool unlike,
                               const std::string& ckpt_file,
                               const std::string& log_file) {
    stages.run(name, {"clm.ckpt", "disc.ckpt", "corpus_tune.tsv"},
               {fs::path(ckpt_file).filename().string(),
                fs::path(log_file).filename().string()},
               [&]() {
                 auto clm = load_causal_lm(f_clm);
                 auto disc = load_discriminator(f_disc);
                 auto tune = load_corpus(f_tune_corpus, vocab).unlabeled();
                 DiscupConfig dc = cfg.discup_config(
                     target.cls == 0,
                     stage_seed(master, SeedStream::tune_discup));
                 dc.unlikelihood = unlike;
                 auto scorer = control_performance_scorer(
                     clm, disc, val_prompts, val_gen, target);
                 auto tuned = discup_train(clm, disc, tune, dc, scorer);
                 save_checkpoint(materialize(tuned.prompt), ckpt_file);
                 std::ostringstream hdr;
                 hdr << "# " << name << " alpha=" << dc.alpha
                     << " top_k=" << dc.top_k
                     << " prompt_len=" << dc.prompt_len
                     << " epochs=" << dc.epochs << " lr=" << dc.lr
                     << " unlikelihood=" << (dc.unlikelihood ? 1 : 0)
                     << " seed=" << cfg.seed
                     << " selected_epoch=" << tuned.selected_epoch;
                 write_train_log(log_file, hdr.str(), tuned.log);
               });
  };
  tune_discup_stage("tune-discup", cfg.unlikelihood, f_discup, f_discup_log);
  tune_discup_stage("tune-discup-nounl", false, f_nounl, f_nounl_log);

  stages.run(
      "generate",
      {"clm.ckpt", "prompt_vanilla.ckpt", "prompt_discup.ckpt",
       "prompt_discup_nounl.ckpt", "prompts_neutral.tsv",
       "prompts_adversarial.tsv"},
      {fs::path(f_gens[0][0]).filename().string(),
       fs::path(f_gens[0][1]).filename().string(),
       fs::path(f_gens[1][0]).filename().string(),
       fs::path(f_gens[1][1]).filename().string(),
       fs::path(f_gens[2][0]).filename().string(),
       fs::path(f_gens[2][1]).filename().string(), "base_samples.tsv"},
      [&]() {
        auto clm = load_causal_lm(f_clm);
        const TensorF prompts_m[3] = {load_prompt(f_vanilla).matrix,
                                      load_prompt(f_discup).matrix,
                                      load_prompt(f_nounl).matrix};
        std::vector<std::vector<int>> sets[2] = {
            texts_of(load_corpus(f_neutral, vocab)),
            texts_of(load_corpus(f_adv, vocab))};
        for (int m = 0; m < 3; ++m)
          for (int s = 0; s < 2; ++s) {
            auto gen = cfg.gen_config(stage_seed(
                master, SeedStream::gen_method, uint64_t(m * 2 + s)));
            auto conts =
                generate_continuations(clm, prompts_m[m], sets[s], gen);
            atomic_write_file(f_gens[m][s],
                              gens_to_tsv(sets[s], conts, vocab));
          }
        // unconditioned samples from the frozen CLM (fluency reference)
        std::vector<std::vector<int>> bos_prompts(
            size_t(cfg.eval_neutral), std::vector<int>{Vocab::kBos});
        auto base_conts = generate_continuations(
            clm, TensorF{}, bos_prompts,
            cfg.gen_config(stage_seed(master, SeedStream::gen_base)));
        atomic_write_file(f_base_samples,
                          gens_to_tsv(bos_prompts, base_conts, vocab));
      });

  stages.run(
      "eval",
      {"judge_disc.ckpt", "judge_lm.ckpt", "gens_vanilla_neutral.tsv",
       "gens_vanilla_adversarial.tsv", "gens_discup_neutral.tsv",
       "gens_discup_adversarial.tsv", "gens_discup_nounl_neutral.tsv",
       "gens_discup_nounl_adversarial.tsv", "base_samples.tsv"},
      {fs::path(f_eval[0][0]).filename().string(),
       fs::path(f_eval[0][1]).filename().string(),
       fs::path(f_eval[1][0]).filename().string(),
       fs::path(f_eval[1][1]).filename().string(),
       fs::path(f_eval[2][0]).filename().string(),
       fs::path(f_eval[2][1]).filename().string(), "summary.txt"},
      [&]() {
        auto judge_disc = load_discriminator(f_judge_disc);
        auto judge_lm = load_causal_lm(f_judge_lm);
        auto keywords = KeywordList::domain_markers(vocab);
        for (int m = 0; m < 3; ++m)
          for (int s = 0; s < 2; ++s) {
            auto gens = gens_from_tsv(read_file(f_gens[m][s]), vocab);
            std::ostringstream echo;
            echo << kMethods[m] << "/" << kSets[s] << " alpha=" << cfg.alpha
                 << " top_k=" << cfg.top_k << " seed=" << cfg.seed;
            auto rep = eval_generations(gens.prompts, gens.conts, judge_disc,
                                        judge_lm, keywords, target,
                                        echo.str());
            result.report[m][s] = rep;
            atomic_write_file(f_eval[m][s], rep.to_kv());
            atomic_write_file(
                f_eval[m][s] + ".csv",
                std::string(EvalReport::kCsvHeader) + "\n" + rep.to_csv_row() +
                    "\n");
          }
        auto base = gens_from_tsv(read_file(f_base_samples), vocab);
        std::vector<std::vector<int>> base_texts;
        for (size_t i = 0; i < base.conts.size(); ++i) {
          std::vector<int> t = base.prompts[i];
          t.insert(t.end(), base.conts[i].begin(), base.conts[i].end());
          base_texts.push_back(std::move(t));
        }
        result.base_samples_ppl = perplexity(judge_lm, base_texts);

        std::ostringstream sum;
        sum.precision(6);
        sum << "target_attribute=" << target.name() << "\n"
            << "base_samples_ppl=" << result.base_samples_ppl << "\n";
        for (int m = 0; m < 3; ++m)
          for (int s = 0; s < 2; ++s)
            sum << kMethods[m] << "_" << kSets[s]
                << ": correctness=" << result.report[m][s].correctness
                << " ppl=" << result.report[m][s].ppl
                << " coverage=" << result.report[m][s].coverage << " dist="
                << result.report[m][s].dist1 << "/"
                << result.report[m][s].dist2 << "/"
                << result.report[m][s].dist3 << "\n";
        atomic_write_file(f_summary, sum.str());
      });

  // eval artifacts also include the csv twins
  for (int m = 0; m < 3; ++m)
    for (int s = 0; s < 2; ++s)
      artifacts.push_back(std::string("eval_") + kMethods[m] + "_" + kSets[s] +
                          ".kv.csv");

  // reload reports when the eval stage was skipped
  if (result.report[0][0].samples == 0) {
    for (int m = 0; m < 3; ++m)
      for (int s = 0; s < 2; ++s) {
        auto kv = read_file(f_eval[m][s]);
        EvalReport rep;
        std::istringstream in(kv);
        std::string line;
        while (std::getline(in, line)) {
          const size_t eq = line.find('=');
          if (eq == std::string::npos) continue;
          const std::string key = line.substr(0, eq);
          const std::string val = line.substr(eq + 1);
          if (key == "samples") rep.samples = std::stoi(val);
          else if (key == "correctness") rep.correctness = std::stod(val);
          else if (key == "ppl") rep.ppl = std::stod(val);
          else if (key == "dist1") rep.dist1 = std::stod(val);
          else if (key == "dist2") rep.dist2 = std::stod(val);
          else if (key == "dist3") rep.dist3 = std::stod(val);
          else if (key == "coverage") rep.coverage = std::stod(val);
          else if (key == "config") rep.config_echo = val;
        }
        result.report[m][s] = rep;
      }
    auto judge_lm = load_causal_lm(f_judge_lm);
    auto base = gens_from_tsv(read_file(f_base_samples), vocab);
    std::vector<std::vector<int>> base_texts;
    for (size_t i = 0; i < base.conts.size(); ++i) {
      std::vector<int> t = base.prompts[i];
      t.insert(t.end(), base.conts[i].begin(), base.conts[i].end());
      base_texts.push_back(std::move(t));
    }
    result.base_samples_ppl = perplexity(judge_lm, base_texts);
  }

  // manifest: every produced file with its content hash, stage order
  {
    std::ostringstream out;
    out << "# manifest seed=" << cfg.seed << "\n";
    for (const auto& rel : artifacts) {
      const std::string data = read_file(stages.path(rel));
      out << std::hex << std::setw(16) << std::setfill('0') << fnv1a64(data)
          << std::dec << "  " << data.size() << "  " << rel << "\n";
    }
    result.manifest = out.str();
    atomic_write_file(stages.path("manifest.txt"), result.manifest);
    result.manifest_hash = fnv1a64(result.manifest);
  }
  return result;
}

}  // namespace discup
