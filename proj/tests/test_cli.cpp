#include <filesystem>
#include <fstream>

#include "discup/cli.hpp"
#include "doctest.h"

using namespace discup;

namespace {

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() /
           ("discup_cli_" + std::to_string(::getpid()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string file(const std::string& name) const {
    return (path / name).string();
  }
};

int run_cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv = {"discup"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return cli_main(int(argv.size()), argv.data());
}

void write(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
}

}  // namespace

TEST_CASE("configuration defaults") {
  RunConfig cfg;
  CHECK(cfg.prompt_len == 10);               // control-prompt length
  CHECK(cfg.prompt_len_adversarial == 12);   // negative-steering length
  CHECK(cfg.max_new_tokens == 20);           // fixed generation length
  CHECK(cfg.sample_top_k == 10);             // top-10 sampling
  CHECK(cfg.tune_epochs == 6);               // tuning epochs
  CHECK(cfg.lr == 1e-3);                     // Adam learning rate
  // alpha stays within the searched range
  CHECK((cfg.alpha == 0.005 || cfg.alpha == 0.01));
  // negative steering picks the longer prompt
  cfg.target_attribute = "negative";
  CHECK(cfg.discup_config(cfg.target().cls == 0, 1).prompt_len == 12);
  cfg.target_attribute = "positive";
  CHECK(cfg.discup_config(cfg.target().cls == 0, 1).prompt_len == 10);

  AdamConfig adam;
  CHECK(adam.beta1 == 0.9);
  CHECK(adam.beta2 == 0.999);
  CHECK(adam.eps == 1e-8);
  CHECK(adam.lr == 1e-3);
}

TEST_CASE("bogus subcommands and unknown flags exit 1") {
  CHECK(run_cli({"bogus"}) == 1);
  CHECK(run_cli({}) == 1);
  CHECK(run_cli({"gen-data", "--out", "/tmp/x.tsv", "--bogus-flag"}) == 1);
  CHECK(run_cli({"gen-data"}) == 1);  // missing required --out
}

TEST_CASE("gen-data writes the configured sample count") {
  TempDir dir;
  write(dir.file("run.cfg"), "samples_per_class=25\nseq_len=12\n");
  CHECK(run_cli({"gen-data", "--config", dir.file("run.cfg"), "--out",
                 dir.file("corpus.tsv")}) == 0);
  auto corpus = load_corpus(dir.file("corpus.tsv"), Vocab::standard());
  CHECK(corpus.size() == 50);
  CHECK(corpus.samples[0].ids.size() == 13);  // BOS + seq_len
}

TEST_CASE("unknown config keys are a hard error (exit 1)") {
  TempDir dir;
  write(dir.file("bad.cfg"), "samples_per_class=10\nmisspelled_key=3\n");
  CHECK(run_cli({"gen-data", "--config", dir.file("bad.cfg"), "--out",
                 dir.file("c.tsv")}) == 1);
  write(dir.file("bad2.cfg"), "alpha=not_a_number\n");
  CHECK(run_cli({"gen-data", "--config", dir.file("bad2.cfg"), "--out",
                 dir.file("c.tsv")}) == 1);
}

TEST_CASE("train, tune and generate round through the CLI") {
  TempDir dir;
  // tiny-but-real configuration so the whole chain stays fast
  write(dir.file("run.cfg"),
        "samples_per_class=40\nseq_len=10\nclm_epochs=1\ndisc_epochs=1\n"
        "tune_epochs=1\nclm_d_emb=16\nclm_layers=1\nclm_heads=2\nclm_ctx=48\n"
        "disc_d_emb=16\ndisc_layers=1\ndisc_heads=2\ntop_k=6\nprompt_len=3\n"
        "prompt_len_adversarial=3\nmax_new_tokens=6\nseed=7\n");
  const std::string cfg = dir.file("run.cfg");

  REQUIRE(run_cli({"gen-data", "--config", cfg, "--out",
                   dir.file("corpus.tsv")}) == 0);
  REQUIRE(run_cli({"train-clm", "--config", cfg, "--corpus",
                   dir.file("corpus.tsv"), "--out", dir.file("clm.ckpt")}) ==
          0);
  REQUIRE(run_cli({"train-disc", "--config", cfg, "--corpus",
                   dir.file("corpus.tsv"), "--out", dir.file("disc.ckpt")}) ==
          0);
  REQUIRE(run_cli({"tune-vanilla", "--config", cfg, "--clm",
                   dir.file("clm.ckpt"), "--corpus", dir.file("corpus.tsv"),
                   "--out", dir.file("vanilla.ckpt")}) == 0);
  REQUIRE(run_cli({"tune-discup", "--config", cfg, "--clm",
                   dir.file("clm.ckpt"), "--disc", dir.file("disc.ckpt"),
                   "--corpus", dir.file("corpus.tsv"), "--out",
                   dir.file("discup.ckpt"), "--alpha", "0.005"}) == 0);

  // alpha flag propagates into the training log header
  {
    std::ifstream log(dir.file("discup.ckpt.log"));
    std::string header;
    std::getline(log, header);
    CHECK(header.find("alpha=0.005") != std::string::npos);
    CHECK(header.rfind("# tune-discup", 0) == 0);
    std::string first_row;
    std::getline(log, first_row);
    CHECK(first_row.rfind("epoch=0 like_loss=", 0) == 0);
  }

  // prompts file for generation: reuse a few corpus lines, unlabeled
  {
    auto corpus = load_corpus(dir.file("corpus.tsv"), Vocab::standard());
    AttributeCorpus prompts;
    for (int i = 0; i < 5; ++i) {
      Sample s;
      s.label = -1;
      s.ids = std::vector<int>(corpus.samples[size_t(i)].ids.begin(),
                               corpus.samples[size_t(i)].ids.begin() + 4);
      prompts.samples.push_back(s);
    }
    save_corpus(prompts, Vocab::standard(), dir.file("prompts.tsv"));
  }
  REQUIRE(run_cli({"generate", "--config", cfg, "--clm", dir.file("clm.ckpt"),
                   "--prompt", dir.file("discup.ckpt"), "--prompts",
                   dir.file("prompts.tsv"), "--out", dir.file("gens.tsv")}) ==
          0);
  auto gens =
      pipe_detail::gens_from_tsv(read_file(dir.file("gens.tsv")),
                                 Vocab::standard());
  CHECK(gens.conts.size() == 5);
  CHECK(gens.conts[0].size() == 6);

  REQUIRE(run_cli({"eval", "--config", cfg, "--gens", dir.file("gens.tsv"),
                   "--judge-disc", dir.file("disc.ckpt"), "--judge-lm",
                   dir.file("clm.ckpt"), "--out", dir.file("report.kv")}) ==
          0);
  auto kv = read_file(dir.file("report.kv"));
  CHECK(kv.find("correctness=") != std::string::npos);
  CHECK(kv.find("ppl=") != std::string::npos);
  CHECK(file_exists(dir.file("report.kv.csv")));

  // model-kind mixups through the CLI are runtime failures (exit 2)
  CHECK(run_cli({"generate", "--config", cfg, "--clm", dir.file("disc.ckpt"),
                 "--prompts", dir.file("prompts.tsv"), "--out",
                 dir.file("g2.tsv")}) == 2);
}

TEST_CASE("sweep subcommand emits one CSV row per axis value") {
  TempDir dir;
  write(dir.file("run.cfg"),
        "samples_per_class=40\nseq_len=10\nclm_epochs=1\ndisc_epochs=1\n"
        "tune_epochs=1\nclm_d_emb=16\nclm_layers=1\nclm_heads=2\nclm_ctx=48\n"
        "disc_d_emb=16\ndisc_layers=1\ndisc_heads=2\ntop_k=4\nprompt_len=2\n"
        "prompt_len_adversarial=2\nmax_new_tokens=5\nseed=21\n");
  const std::string cfg = dir.file("run.cfg");
  REQUIRE(run_cli({"gen-data", "--config", cfg, "--out",
                   dir.file("corpus.tsv")}) == 0);
  REQUIRE(run_cli({"train-clm", "--config", cfg, "--corpus",
                   dir.file("corpus.tsv"), "--out", dir.file("clm.ckpt")}) ==
          0);
  REQUIRE(run_cli({"train-disc", "--config", cfg, "--corpus",
                   dir.file("corpus.tsv"), "--out", dir.file("disc.ckpt")}) ==
          0);
  {
    auto corpus = load_corpus(dir.file("corpus.tsv"), Vocab::standard());
    AttributeCorpus prompts;
    for (int i = 0; i < 4; ++i) {
      Sample s;
      s.label = -1;
      s.ids = std::vector<int>(corpus.samples[size_t(i)].ids.begin(),
                               corpus.samples[size_t(i)].ids.begin() + 3);
      prompts.samples.push_back(s);
    }
    save_corpus(prompts, Vocab::standard(), dir.file("prompts.tsv"));
  }
  REQUIRE(run_cli({"sweep", "--config", cfg, "--axis", "candidate_k",
                   "--values", "2,4", "--clm", dir.file("clm.ckpt"), "--disc",
                   dir.file("disc.ckpt"), "--judge-disc", dir.file("disc.ckpt"),
                   "--judge-lm", dir.file("clm.ckpt"), "--corpus",
                   dir.file("corpus.tsv"), "--prompts", dir.file("prompts.tsv"),
                   "--out", dir.file("sweep.csv")}) == 0);
  auto csv = read_file(dir.file("sweep.csv"));
  CHECK(csv.rfind("axis_value,correctness,ppl,dist1,dist2,dist3,coverage\n",
                  0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
  CHECK(run_cli({"sweep", "--config", cfg, "--axis", "bogus_axis", "--values",
                 "1", "--clm", dir.file("clm.ckpt"), "--disc",
                 dir.file("disc.ckpt"), "--judge-disc", dir.file("disc.ckpt"),
                 "--judge-lm", dir.file("clm.ckpt"), "--corpus",
                 dir.file("corpus.tsv"), "--prompts", dir.file("prompts.tsv"),
                 "--out", dir.file("s2.csv")}) == 1);
}

TEST_CASE("probe-gradients passes and writes a report") {
  TempDir dir;
  CHECK(run_cli({"probe-gradients", "--seed", "3", "--out",
                 dir.file("probe.txt")}) == 0);
  auto text = read_file(dir.file("probe.txt"));
  CHECK(text.find("[PASS]") != std::string::npos);
  CHECK(text.find("[FAIL]") == std::string::npos);
}

TEST_CASE("pipeline resume regenerates only downstream stages") {
  TempDir dir;
  write(dir.file("run.cfg"),
        "samples_per_class=30\nseq_len=8\nclm_epochs=1\ndisc_epochs=1\n"
        "judge_lm_epochs=1\njudge_disc_epochs=1\ntune_epochs=1\n"
        "clm_d_emb=16\nclm_layers=1\nclm_heads=2\nclm_ctx=48\n"
        "disc_d_emb=16\ndisc_layers=1\ndisc_heads=2\ntop_k=4\nprompt_len=2\n"
        "prompt_len_adversarial=2\nmax_new_tokens=5\neval_neutral=6\n"
        "eval_adversarial=3\nseed=11\n");
  RunConfig cfg = load_config(dir.file("run.cfg"));
  const std::string out = dir.file("run");

  auto first = pipeline_run(cfg, out, false);
  for (const auto& s : first.stages) CHECK_FALSE(s.skipped);

  // identical rerun from scratch into a second directory: same hashes
  auto second = pipeline_run(cfg, dir.file("run2"), false);
  // manifests differ only by path-independent content; compare hashes
  CHECK(second.manifest == first.manifest);
  CHECK(second.manifest_hash == first.manifest_hash);

  // resume with everything present: all stages skip, manifest unchanged
  auto resumed = pipeline_run(cfg, out, true);
  for (const auto& s : resumed.stages) CHECK(s.skipped);
  CHECK(resumed.manifest == first.manifest);

  // delete an intermediate artifact: its stage and downstream consumers
  // rerun, upstream artifacts are untouched
  const auto corpus_mtime =
      std::filesystem::last_write_time(out + "/corpus.tsv");
  const auto vanilla_mtime =
      std::filesystem::last_write_time(out + "/prompt_vanilla.ckpt");
  std::filesystem::remove(out + "/judge_lm.ckpt");
  auto partial = pipeline_run(cfg, out, true);
  std::map<std::string, bool> skipped;
  for (const auto& s : partial.stages) skipped[s.name] = s.skipped;
  CHECK(skipped.at("gen-data"));
  CHECK(skipped.at("split"));
  CHECK(skipped.at("train-clm"));
  CHECK(skipped.at("train-disc"));
  CHECK(skipped.at("train-judge-disc"));
  CHECK_FALSE(skipped.at("train-judge-lm"));
  CHECK(skipped.at("tune-vanilla"));
  CHECK(skipped.at("tune-discup"));
  CHECK(skipped.at("tune-discup-nounl"));
  CHECK(skipped.at("generate"));
  CHECK_FALSE(skipped.at("eval"));  // consumes the judge LM
  CHECK(std::filesystem::last_write_time(out + "/corpus.tsv") == corpus_mtime);
  CHECK(std::filesystem::last_write_time(out + "/prompt_vanilla.ckpt") ==
        vanilla_mtime);
  // regenerated artifacts are byte-identical, so the manifest is stable
  CHECK(partial.manifest == first.manifest);
}
