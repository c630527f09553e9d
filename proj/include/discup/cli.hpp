#pragma once

#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "discup/checkpoint.hpp"
#include "discup/config.hpp"
#include "discup/corpus.hpp"
#include "discup/discup.hpp"
#include "discup/gradcheck.hpp"
#include "discup/metrics.hpp"
#include "discup/pipeline.hpp"

namespace discup {

namespace cli_detail {

// Values for the flag set shared by every subcommand; a flag only takes
// effect when the user actually passed it.
struct CommonOpts {
  std::string config_path;
  std::string out;
  uint64_t seed = 0;
  double alpha = 0.0;
  int topk = 0;
  int prompt_len = 0;
  int epochs = 0;
  double lr = 0.0;

  CLI::Option *seed_o = nullptr, *alpha_o = nullptr, *topk_o = nullptr,
              *plen_o = nullptr, *epochs_o = nullptr, *lr_o = nullptr;

  void attach(CLI::App* sub, bool out_required) {
    sub->add_option("--config", config_path, "key=value config file");
    auto* out_o = sub->add_option("--out", out, "output path");
    if (out_required) out_o->required();
    seed_o = sub->add_option("--seed", seed, "master seed");
    alpha_o = sub->add_option("--alpha", alpha, "soft-target temperature");
    topk_o = sub->add_option("--topk", topk, "candidate-set size");
    plen_o = sub->add_option("--prompt-len", prompt_len, "control-prompt length");
    epochs_o = sub->add_option("--epochs", epochs,
                               "epochs for this subcommand's training loop");
    lr_o = sub->add_option("--lr", lr, "learning rate");
  }

  enum class EpochsTarget { none, clm, disc, tune };

  RunConfig make_config(EpochsTarget et = EpochsTarget::tune) const {
    RunConfig cfg =
        config_path.empty() ? RunConfig{} : load_config(config_path);
    if (seed_o && seed_o->count()) cfg.seed = seed;
    if (alpha_o && alpha_o->count()) cfg.alpha = alpha;
    if (topk_o && topk_o->count()) cfg.top_k = topk;
    if (plen_o && plen_o->count()) {
      cfg.prompt_len = prompt_len;
      cfg.prompt_len_adversarial = prompt_len;
    }
    if (lr_o && lr_o->count()) cfg.lr = lr;
    if (epochs_o && epochs_o->count()) {
      switch (et) {
        case EpochsTarget::clm: cfg.clm_epochs = epochs; break;
        case EpochsTarget::disc: cfg.disc_epochs = epochs; break;
        case EpochsTarget::tune: cfg.tune_epochs = epochs; break;
        case EpochsTarget::none: break;
      }
    }
    return cfg;
  }
};

inline std::vector<double> parse_values(const std::string& csv) {
  std::vector<double> out;
  std::istringstream in(csv);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (item.empty()) continue;
    out.push_back(std::stod(item));
  }
  if (out.empty()) throw InvalidInputError("--values: no values given");
  return out;
}

inline AttributeCorpus load_target_corpus(const std::string& path,
                                          const Vocab& vocab,
                                          AttributeLabel target) {
  auto corpus = load_corpus(path, vocab);
  bool labeled = false;
  for (const auto& s : corpus.samples) labeled = labeled || s.label >= 0;
  return labeled ? corpus.filter_label(target.cls) : corpus;
}

// --- probe-gradients: sign suite + full-objective finite differences ---

inline bool probe_gradients_run(uint64_t seed, std::ostream& out) {
  bool ok = true;
  auto line = [&](bool pass, const std::string& what) {
    out << (pass ? "[PASS] " : "[FAIL] ") << what << "\n";
    ok = ok && pass;
  };

  {  // sign suite over random logit vectors
    Rng rng(mix_seed(seed, 1));
    bool signs = true, magnitude = true, fd_match = true;
    for (int i = 0; i < 1000 && signs; ++i) {
      const int v = 3 + int(rng.below(14));
      std::vector<double> logits(static_cast<size_t>(v));
      for (auto& x : logits) x = rng.normal(0.0, 2.0);
      const int like = int(rng.below(uint64_t(v)));
      int unlike = int(rng.below(uint64_t(v)));
      if (unlike == like) unlike = (unlike + 1) % v;
      GradientSignReport rep;
      try {
        rep = gradient_sign_probe(logits, like, unlike);
      } catch (const ContractViolation&) {
        signs = false;
        break;
      }
      magnitude = magnitude &&
                  std::abs(std::abs(rep.loss_grad[size_t(unlike)]) -
                           2.0 * rep.p_unlike) < 1e-6;
      double max_abs = 0.0;
      for (size_t j = 0; j < rep.loss_grad.size(); ++j)
        max_abs = std::max(max_abs,
                           std::abs(rep.loss_grad[j] - rep.fd_grad[j]));
      fd_match = fd_match && max_abs < 1e-6;
    }
    line(signs, "like/unlike/other gradient signs over 1000 random vectors");
    line(magnitude, "|dL/dh_unlike| = 2*p_unlike within 1e-6");
    line(fd_match, "analytic matches central differences within 1e-6");
  }

  {  // boundary p_unlike = 0.5
    std::vector<double> logits = {0.0, 0.4, -0.3};
    logits[0] = std::log(std::exp(0.4) + std::exp(-0.3));
    auto rep = gradient_sign_probe(logits, 1, 0);
    line(std::abs(rep.loss_grad[2]) < 1e-8,
         "other-token derivative is zero at p_unlike = 0.5");
  }

  {  // full tuning objective against finite differences, 64-bit
    TransformerConfig cfg = {.vocab_size = 16, .d_emb = 16, .n_layers = 1,
                             .n_heads = 2, .max_ctx = 32};
    CausalLM<double> lm(cfg, mix_seed(seed, 2));
    Discriminator<double> disc(
        {.vocab_size = 16, .d_emb = 8, .n_layers = 1, .n_heads = 2,
         .max_ctx = 32},
        mix_seed(seed, 3));
    PromptBlock<double> prompt(4, 16, mix_seed(seed, 4));
    std::vector<int> context = {0, 5, 11, 3};
    auto set = select_candidates(lm.next_token_distribution(context), 8);
    score_candidates(set, context, disc, {1});
    fill_soft_targets(set, 0.1);
    auto forward = [&]() {
      return step_loss(lm, prompt.reparameterize(), context, set, true);
    };
    forward().backward();
    auto params = prompt.parameters();
    auto fd = finite_difference_gradient<double>(
        [&]() { return forward().item(); }, params, 1e-5);
    double worst = 0.0;
    for (size_t i = 0; i < params.size(); ++i)
      worst = std::max(worst, double(grad_mismatch(params[i].grad(), fd[i])));
    std::ostringstream what;
    what << "full-objective prompt gradient vs finite differences (max err "
         << worst << ")";
    line(worst < 1e-4, what.str());
  }
  return ok;
}

}  // namespace cli_detail

inline int cli_main(int argc, const char* const* argv) {
  using cli_detail::CommonOpts;
  using ET = CommonOpts::EpochsTarget;

  CLI::App app{
      "discup: discriminator-cooperative unlikelihood prompt-tuning "
      "workbench"};
  app.require_subcommand(1);
  int exit_code = 0;

  // gen-data
  auto* gen_data = app.add_subcommand("gen-data",
                                      "generate a synthetic attribute corpus");
  auto gd_opts = std::make_shared<CommonOpts>();
  gd_opts->attach(gen_data, true);
  gen_data->callback([gd_opts]() {
    RunConfig cfg = gd_opts->make_config(ET::none);
    auto spec = cfg.corpus_spec(cfg.seed);
    save_corpus(gen_corpus(spec), spec.vocab(), gd_opts->out);
    std::cout << "wrote " << 2 * spec.samples_per_class << " samples to "
              << gd_opts->out << "\n";
  });

  // train-clm
  auto* train_clm = app.add_subcommand("train-clm",
                                       "train the base causal language model");
  auto tc_opts = std::make_shared<CommonOpts>();
  auto tc_corpus = std::make_shared<std::string>();
  tc_opts->attach(train_clm, true);
  train_clm->add_option("--corpus", *tc_corpus, "training corpus TSV")
      ->required();
  train_clm->callback([tc_opts, tc_corpus]() {
    RunConfig cfg = tc_opts->make_config(ET::clm);
    const Vocab vocab = cfg.corpus_spec(0).vocab();
    auto corpus = load_corpus(*tc_corpus, vocab);
    CausalLM<float> lm(cfg.clm_arch(), mix_seed(cfg.seed, 1));
    auto losses = mle_train(lm, corpus, {cfg.clm_epochs, cfg.lr, cfg.batch,
                                         mix_seed(cfg.seed, 2)});
    save_checkpoint(lm, tc_opts->out, {{"seed", std::to_string(cfg.seed)}});
    pipe_detail::write_loss_log(
        tc_opts->out + ".log",
        "# train-clm epochs=" + std::to_string(cfg.clm_epochs) +
            " lr=" + std::to_string(cfg.lr),
        losses);
    std::cout << "final per-token loss " << losses.back() << ", saved "
              << tc_opts->out << "\n";
  });

  // train-disc
  auto* train_disc_cmd =
      app.add_subcommand("train-disc", "train an attribute discriminator");
  auto td_opts = std::make_shared<CommonOpts>();
  auto td_corpus = std::make_shared<std::string>();
  td_opts->attach(train_disc_cmd, true);
  train_disc_cmd->add_option("--corpus", *td_corpus, "labeled corpus TSV")
      ->required();
  train_disc_cmd->callback([td_opts, td_corpus]() {
    RunConfig cfg = td_opts->make_config(ET::disc);
    const Vocab vocab = cfg.corpus_spec(0).vocab();
    auto corpus = load_corpus(*td_corpus, vocab);
    Discriminator<float> disc(cfg.disc_arch(), mix_seed(cfg.seed, 1));
    auto losses = disc_train(disc, corpus, {cfg.disc_epochs, cfg.lr, cfg.batch,
                                            mix_seed(cfg.seed, 2)});
    save_checkpoint(disc, td_opts->out, {{"seed", std::to_string(cfg.seed)}});
    pipe_detail::write_loss_log(
        td_opts->out + ".log",
        "# train-disc epochs=" + std::to_string(cfg.disc_epochs),
        losses);
    std::cout << "final loss " << losses.back() << ", saved " << td_opts->out
              << "\n";
  });

  // tune-vanilla
  auto* tune_vanilla =
      app.add_subcommand("tune-vanilla", "vanilla MLE prompt tuning baseline");
  auto tv_opts = std::make_shared<CommonOpts>();
  auto tv_clm = std::make_shared<std::string>();
  auto tv_corpus = std::make_shared<std::string>();
  auto tv_disc = std::make_shared<std::string>();
  tv_opts->attach(tune_vanilla, true);
  tune_vanilla->add_option("--clm", *tv_clm, "frozen CLM checkpoint")
      ->required();
  tune_vanilla->add_option("--corpus", *tv_corpus, "attribute corpus TSV")
      ->required();
  tune_vanilla->add_option(
      "--disc", *tv_disc,
      "discriminator for best-epoch selection (optional)");
  tune_vanilla->callback([tv_opts, tv_clm, tv_corpus, tv_disc]() {
    RunConfig cfg = tv_opts->make_config(ET::tune);
    const Vocab vocab = cfg.corpus_spec(0).vocab();
    auto clm = load_causal_lm(*tv_clm);
    auto corpus =
        cli_detail::load_target_corpus(*tv_corpus, vocab, cfg.target());
    DiscupConfig dc = cfg.discup_config(false, mix_seed(cfg.seed, 3));
    TuneResult<float> tuned;
    if (tv_disc->empty()) {
      tuned = vanilla_prompt_train(clm, corpus, dc);
    } else {
      auto disc = load_discriminator(*tv_disc);
      auto scorer = pipe_detail::control_performance_scorer(
          clm, disc,
          gen_prompts(cfg.corpus_spec(0), 32, cfg.prompt_ctx_len, -1,
                      mix_seed(cfg.seed, 7)),
          cfg.gen_config(mix_seed(cfg.seed, 8)), cfg.target());
      tuned = vanilla_prompt_train(clm, corpus, dc, scorer);
    }
    save_checkpoint(materialize(tuned.prompt), tv_opts->out);
    std::ostringstream hdr;
    hdr << "# tune-vanilla prompt_len=" << dc.prompt_len
        << " epochs=" << dc.epochs << " lr=" << dc.lr << " seed=" << cfg.seed
        << " selected_epoch=" << tuned.selected_epoch;
    pipe_detail::write_train_log(tv_opts->out + ".log", hdr.str(), tuned.log);
    std::cout << hdr.str() << "\n";
    if (!tuned.log.empty())
      std::cout << "final mle loss " << tuned.log.back().like << "\n";
  });

  // tune-discup
  auto* tune_discup = app.add_subcommand(
      "tune-discup", "discriminator-cooperative unlikelihood prompt tuning");
  auto tdc_opts = std::make_shared<CommonOpts>();
  auto tdc_clm = std::make_shared<std::string>();
  auto tdc_disc = std::make_shared<std::string>();
  auto tdc_corpus = std::make_shared<std::string>();
  auto tdc_unlike = std::make_shared<int>(1);
  tdc_opts->attach(tune_discup, true);
  tune_discup->add_option("--clm", *tdc_clm, "frozen CLM checkpoint")
      ->required();
  tune_discup->add_option("--disc", *tdc_disc, "discriminator checkpoint")
      ->required();
  tune_discup->add_option("--corpus", *tdc_corpus, "tuning corpus TSV")
      ->required();
  tune_discup->add_option("--unlikelihood", *tdc_unlike,
                          "enable the unlikelihood term (1/0)");
  tune_discup->callback([tdc_opts, tdc_clm, tdc_disc, tdc_corpus,
                         tdc_unlike]() {
    RunConfig cfg = tdc_opts->make_config(ET::tune);
    const Vocab vocab = cfg.corpus_spec(0).vocab();
    auto clm = load_causal_lm(*tdc_clm);
    auto disc = load_discriminator(*tdc_disc);
    auto corpus = load_corpus(*tdc_corpus, vocab).unlabeled();
    DiscupConfig dc = cfg.discup_config(cfg.target().cls == 0,
                                        mix_seed(cfg.seed, 4));
    dc.unlikelihood = *tdc_unlike != 0;
    auto scorer = pipe_detail::control_performance_scorer(
        clm, disc,
        gen_prompts(cfg.corpus_spec(0), 32, cfg.prompt_ctx_len, -1,
                    mix_seed(cfg.seed, 7)),
        cfg.gen_config(mix_seed(cfg.seed, 8)), cfg.target());
    auto tuned = discup_train(clm, disc, corpus, dc, scorer);
    save_checkpoint(materialize(tuned.prompt), tdc_opts->out);
    std::ostringstream hdr;
    hdr << "# tune-discup alpha=" << dc.alpha << " top_k=" << dc.top_k
        << " prompt_len=" << dc.prompt_len << " epochs=" << dc.epochs
        << " lr=" << dc.lr << " unlikelihood=" << (dc.unlikelihood ? 1 : 0)
        << " seed=" << cfg.seed << " selected_epoch=" << tuned.selected_epoch;
    pipe_detail::write_train_log(tdc_opts->out + ".log", hdr.str(), tuned.log);
    std::cout << hdr.str() << "\n";
    if (!tuned.log.empty())
      std::cout << "final like/unlike loss " << tuned.log.back().like << " / "
                << tuned.log.back().unlike << "\n";
  });

  // generate
  auto* generate = app.add_subcommand(
      "generate", "sample continuations for a prompt-context file");
  auto g_opts = std::make_shared<CommonOpts>();
  auto g_clm = std::make_shared<std::string>();
  auto g_prompt = std::make_shared<std::string>();
  auto g_prompts = std::make_shared<std::string>();
  g_opts->attach(generate, true);
  generate->add_option("--clm", *g_clm, "CLM checkpoint")->required();
  generate->add_option("--prompt", *g_prompt, "control-prompt checkpoint");
  generate->add_option("--prompts", *g_prompts, "prompt contexts TSV")
      ->required();
  generate->callback([g_opts, g_clm, g_prompt, g_prompts]() {
    RunConfig cfg = g_opts->make_config(ET::none);
    const Vocab vocab = cfg.corpus_spec(0).vocab();
    auto clm = load_causal_lm(*g_clm);
    TensorF prefix;
    if (!g_prompt->empty()) prefix = load_prompt(*g_prompt).matrix;
    auto prompts = texts_of(load_corpus(*g_prompts, vocab));
    auto conts = generate_continuations(clm, prefix, prompts,
                                        cfg.gen_config(cfg.seed));
    atomic_write_file(g_opts->out,
                      pipe_detail::gens_to_tsv(prompts, conts, vocab));
    std::cout << "wrote " << conts.size() << " continuations to "
              << g_opts->out << "\n";
  });

  // eval
  auto* eval_cmd =
      app.add_subcommand("eval", "score a generations file with the judges");
  auto e_opts = std::make_shared<CommonOpts>();
  auto e_gens = std::make_shared<std::string>();
  auto e_judge_disc = std::make_shared<std::string>();
  auto e_judge_lm = std::make_shared<std::string>();
  e_opts->attach(eval_cmd, true);
  eval_cmd->add_option("--gens", *e_gens, "generations TSV")->required();
  eval_cmd->add_option("--judge-disc", *e_judge_disc,
                       "judge discriminator checkpoint")
      ->required();
  eval_cmd->add_option("--judge-lm", *e_judge_lm, "judge LM checkpoint")
      ->required();
  eval_cmd->callback([e_opts, e_gens, e_judge_disc, e_judge_lm]() {
    RunConfig cfg = e_opts->make_config(ET::none);
    const Vocab vocab = cfg.corpus_spec(0).vocab();
    auto judge_disc = load_discriminator(*e_judge_disc);
    auto judge_lm = load_causal_lm(*e_judge_lm);
    auto gens = pipe_detail::gens_from_tsv(read_file(*e_gens), vocab);
    auto report = eval_generations(
        gens.prompts, gens.conts, judge_disc, judge_lm,
        KeywordList::domain_markers(vocab), cfg.target(),
        "gens=" + *e_gens + " seed=" + std::to_string(cfg.seed));
    atomic_write_file(e_opts->out, report.to_kv());
    atomic_write_file(e_opts->out + ".csv",
                      std::string(EvalReport::kCsvHeader) + "\n" +
                          report.to_csv_row() + "\n");
    std::cout << report.to_kv();
  });

  // sweep
  auto* sweep_cmd = app.add_subcommand(
      "sweep", "retune and evaluate across one hyperparameter axis");
  auto s_opts = std::make_shared<CommonOpts>();
  auto s_axis = std::make_shared<std::string>();
  auto s_values = std::make_shared<std::string>();
  auto s_clm = std::make_shared<std::string>();
  auto s_disc = std::make_shared<std::string>();
  auto s_judge_disc = std::make_shared<std::string>();
  auto s_judge_lm = std::make_shared<std::string>();
  auto s_corpus = std::make_shared<std::string>();
  auto s_prompts = std::make_shared<std::string>();
  s_opts->attach(sweep_cmd, true);
  sweep_cmd->add_option("--axis", *s_axis,
                        "prompt_length | candidate_k | train_size")
      ->required();
  sweep_cmd->add_option("--values", *s_values, "comma-separated axis values")
      ->required();
  sweep_cmd->add_option("--clm", *s_clm, "CLM checkpoint")->required();
  sweep_cmd->add_option("--disc", *s_disc, "discriminator checkpoint")
      ->required();
  sweep_cmd->add_option("--judge-disc", *s_judge_disc, "judge discriminator")
      ->required();
  sweep_cmd->add_option("--judge-lm", *s_judge_lm, "judge LM")->required();
  sweep_cmd->add_option("--corpus", *s_corpus, "tuning corpus TSV")
      ->required();
  sweep_cmd->add_option("--prompts", *s_prompts, "evaluation prompts TSV")
      ->required();
  sweep_cmd->callback([s_opts, s_axis, s_values, s_clm, s_disc, s_judge_disc,
                       s_judge_lm, s_corpus, s_prompts]() {
    RunConfig cfg = s_opts->make_config(ET::tune);
    const Vocab vocab = cfg.corpus_spec(0).vocab();
    auto clm = load_causal_lm(*s_clm);
    auto disc = load_discriminator(*s_disc);
    auto judge_disc = load_discriminator(*s_judge_disc);
    auto judge_lm = load_causal_lm(*s_judge_lm);
    SweepContext<float> ctx;
    ctx.clm = &clm;
    ctx.disc = &disc;
    ctx.judge_disc = &judge_disc;
    ctx.judge_lm = &judge_lm;
    ctx.tune_corpus = load_corpus(*s_corpus, vocab).unlabeled();
    ctx.eval_prompts = texts_of(load_corpus(*s_prompts, vocab));
    ctx.gen = cfg.gen_config(mix_seed(cfg.seed, 6));
    ctx.keywords = KeywordList::domain_markers(vocab);
    ctx.base = cfg.discup_config(cfg.target().cls == 0, mix_seed(cfg.seed, 5));
    auto rows = sweep(parse_sweep_axis(*s_axis),
                      cli_detail::parse_values(*s_values), ctx);
    atomic_write_file(s_opts->out, sweep_to_csv(rows));
    std::cout << sweep_to_csv(rows);
  });

  // probe-gradients
  auto* probe = app.add_subcommand(
      "probe-gradients", "verify gradient signs and finite differences");
  auto p_opts = std::make_shared<CommonOpts>();
  p_opts->attach(probe, false);
  probe->callback([p_opts, &exit_code]() {
    RunConfig cfg = p_opts->make_config(ET::none);
    std::ostringstream report;
    const bool ok = cli_detail::probe_gradients_run(cfg.seed, report);
    std::cout << report.str();
    if (!p_opts->out.empty()) atomic_write_file(p_opts->out, report.str());
    if (!ok) exit_code = 2;
  });

  // pipeline
  auto* pipeline = app.add_subcommand(
      "pipeline", "run the full data/train/tune/eval pipeline");
  auto pl_opts = std::make_shared<CommonOpts>();
  auto pl_resume = std::make_shared<bool>(false);
  pl_opts->attach(pipeline, true);
  pipeline->add_flag("--resume", *pl_resume,
                     "skip stages whose outputs already exist");
  pipeline->callback([pl_opts, pl_resume]() {
    RunConfig cfg = pl_opts->make_config(ET::tune);
    auto result = pipeline_run(cfg, pl_opts->out, *pl_resume);
    for (const auto& s : result.stages)
      std::cout << (s.skipped ? "skipped " : "ran     ") << s.name << "\n";
    std::cout << "manifest hash " << std::hex << result.manifest_hash
              << std::dec << "\n";
    std::cout << read_file(
        (std::filesystem::path(pl_opts->out) / "summary.txt").string());
  });

  try {
    app.parse(argc, const_cast<char**>(argv));
  } catch (const CLI::CallForHelp& e) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    std::cout << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  } catch (const InvalidInputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const StageFailure& f) {
    std::cerr << "pipeline stage '" << f.stage << "' failed: " << f.message
              << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return exit_code;
}

}  // namespace discup
