// tinyalign: offline alignment pipeline for a byte-level toy transformer.
//
// Subcommands cover the full workflow: synth -> train-sft -> train-rm ->
// label -> align -> generate/evaluate, plus judge-prompt rendering.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tinyalign/eval.hpp"
#include "tinyalign/pipeline.hpp"

namespace ta = tinyalign;

namespace {

// Flat key-value config file (JSON object). Flags override file values,
// which override defaults.
struct FileConfig {
  ta::Json j = ta::Json::object();

  static FileConfig load(const std::string& path) {
    FileConfig fc;
    if (path.empty()) return fc;
    std::ifstream in(path);
    if (!in) throw ta::IoError("cannot open config " + path);
    fc.j = ta::Json::parse(in, nullptr, false);
    if (fc.j.is_discarded() || !fc.j.is_object())
      throw ta::ConfigError(path + ": config must be a JSON object");
    return fc;
  }

  void check_known(std::initializer_list<const char*> keys, const std::string& path) const {
    for (const auto& [key, value] : j.items()) {
      bool known = false;
      for (const char* k : keys) known = known || key == k;
      if (!known) throw ta::ConfigError(path + ": unknown config key \"" + key + "\"");
    }
  }

  template <typename T>
  void get(const char* key, T& into) const {
    if (j.contains(key)) into = j.at(key).get<T>();
  }
};

constexpr std::initializer_list<const char*> kTrainKeys = {
    "learning_rate", "batch_size", "epochs",      "seed",     "grad_clip_norm",
    "holdout",       "vocab_size", "d_model",     "n_heads",  "n_layers",
    "d_ff",          "max_seq_len", "rope_base",  "data",     "out",
    "t",             "beta_rwr",   "condition_score"};

void apply_file(const FileConfig& fc, ta::TrainConfig& cfg, ta::AlignConfig& acfg,
                std::string& data_path, std::string& out_path) {
  fc.get("learning_rate", cfg.learning_rate);
  fc.get("batch_size", cfg.batch_size);
  fc.get("epochs", cfg.epochs);
  fc.get("seed", cfg.seed);
  fc.get("grad_clip_norm", cfg.grad_clip_norm);
  fc.get("holdout", cfg.holdout);
  fc.get("vocab_size", cfg.model.vocab_size);
  fc.get("d_model", cfg.model.d_model);
  fc.get("n_heads", cfg.model.n_heads);
  fc.get("n_layers", cfg.model.n_layers);
  fc.get("d_ff", cfg.model.d_ff);
  fc.get("max_seq_len", cfg.model.max_seq_len);
  fc.get("rope_base", cfg.model.rope_base);
  fc.get("t", acfg.t);
  fc.get("beta_rwr", acfg.beta_rwr);
  fc.get("condition_score", acfg.condition_score);
  fc.get("data", data_path);
  fc.get("out", out_path);
}

// Shared train-stage flag set. Flag presence is checked after parsing so the
// file value survives unless the flag was actually given.
struct TrainFlags {
  std::string config_path, data_path, out_path;
  double lr = 0, clip = 0, t = 0, beta = 0, score = 0;
  long batch = 0, epochs = 0, holdout = 0;
  std::uint64_t seed = 0;

  void add_common(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "flat JSON config file");
    cmd->add_option("--data", data_path, "input dataset (JSONL)");
    cmd->add_option("--out", out_path, "output checkpoint path");
    cmd->add_option("--lr", lr, "learning rate");
    cmd->add_option("--batch-size", batch, "minibatch size");
    cmd->add_option("--epochs", epochs, "training epochs");
    cmd->add_option("--seed", seed, "rng seed");
    cmd->add_option("--grad-clip", clip, "global gradient-norm clip");
  }

  void resolve(const CLI::App* cmd, ta::TrainConfig& cfg, ta::AlignConfig& acfg,
               std::string& data, std::string& out) const {
    const FileConfig fc = FileConfig::load(config_path);
    fc.check_known(kTrainKeys, config_path);
    apply_file(fc, cfg, acfg, data, out);
    const auto given = [&](const char* name) {
      const CLI::Option* o = cmd->get_option_no_throw(name);
      return o != nullptr && o->count() > 0;
    };
    if (given("--data")) data = data_path;
    if (given("--out")) out = out_path;
    if (given("--lr")) cfg.learning_rate = lr;
    if (given("--batch-size")) cfg.batch_size = batch;
    if (given("--epochs")) cfg.epochs = epochs;
    if (given("--seed")) cfg.seed = seed;
    if (given("--grad-clip")) cfg.grad_clip_norm = clip;
    if (given("--holdout")) cfg.holdout = holdout;
    if (given("--t")) acfg.t = t;
    if (given("--beta")) acfg.beta_rwr = beta;
    if (given("--score")) acfg.condition_score = score;
    if (data.empty()) throw ta::ConfigError("no input dataset: set --data or \"data\" in config");
    if (out.empty()) throw ta::ConfigError("no output path: set --out or \"out\" in config");
  }
};

int cmd_synth(const std::string& out_dir, const ta::SynthConfig& sc) {
  std::filesystem::create_directories(out_dir);
  const auto data = ta::synth_generate(sc);
  ta::save_sft_jsonl(data.sft, out_dir + "/sft.jsonl");
  ta::save_pref_jsonl(data.pairs, out_dir + "/pref.jsonl");
  ta::save_prompts_jsonl(data.eval_prompts, out_dir + "/eval_prompts.jsonl");
  std::cout << "wrote " << data.sft.size() << " sft samples, " << data.pairs.size()
            << " preference pairs, " << data.eval_prompts.size() << " eval prompts to "
            << out_dir << "\n";
  return 0;
}

int cmd_train_sft(ta::TrainConfig cfg, const std::string& data_path) {
  const auto samples = ta::load_sft_jsonl(data_path);
  ta::train_sft(cfg, samples, ta::file_fingerprint(data_path));
  std::cout << "sft checkpoint written to " << cfg.checkpoint_path << "\n";
  return 0;
}

int cmd_train_rm(ta::TrainConfig cfg, const std::string& data_path,
                 const std::string& init_path) {
  const auto pairs = ta::load_pref_jsonl(data_path);
  auto [init, extra] = ta::load_lm_checkpoint(init_path);
  const auto result = ta::train_rm(cfg, pairs, init, ta::file_fingerprint(data_path));
  std::cout << "rm checkpoint written to " << cfg.checkpoint_path
            << " (held-out accuracy " << result.heldout_accuracy << " on "
            << result.heldout_count << " pairs)\n";
  return 0;
}

int cmd_label(const std::string& rm_path, const std::string& in_path,
              const std::string& out_path) {
  auto [rm, extra] = ta::load_rm_checkpoint(rm_path);
  const auto samples = ta::load_sft_jsonl(in_path);
  const auto result = ta::label_dataset(rm, samples);
  ta::save_labeled_jsonl(result.labeled, out_path);
  ta::save_reward_stats(result.stats, ta::stats_path_for(out_path));
  if (result.stats.degenerate)
    std::cerr << "warning: degenerate reward distribution (std < 1e-12); "
                 "all normalized rewards set to 0\n";
  std::cout << "labeled " << result.labeled.size() << " samples (reward mean "
            << result.stats.mean << ", std " << result.stats.std << ") -> " << out_path << "\n";
  return 0;
}

int cmd_align(ta::TrainConfig cfg, ta::AlignConfig acfg, const std::string& data_path,
              const std::string& init_path) {
  auto [labeled, stats] = ta::load_labeled_with_stats(data_path);
  auto [init, extra] = ta::load_lm_checkpoint(init_path);
  ta::align_finetune(cfg, acfg, labeled, init, ta::file_fingerprint(data_path));
  std::cout << ta::align_method_name(acfg.method) << " checkpoint written to "
            << cfg.checkpoint_path << "\n";
  return 0;
}

int cmd_generate(const std::string& ckpt_path, const std::string& prompt, bool has_score,
                 double score, long max_new) {
  auto [params, extra] = ta::load_lm_checkpoint(ckpt_path);
  std::string response;
  if (has_score) {
    if (!extra.value("score_conditioned", false))
      std::cerr << "warning: checkpoint was never trained with <rm_score>; the model will "
                   "ignore the conditioning score\n";
    response = ta::ca_generate(params, prompt, score, max_new);
  } else {
    response = ta::chat_generate(params, prompt, max_new);
  }
  std::cout << response << "\n";
  return 0;
}

int cmd_evaluate(const std::vector<std::string>& ckpt_specs, const std::string& prompts_path,
                 const std::string& out_path, long max_new, long limit, bool has_score,
                 double score_override) {
  std::vector<ta::EvalModel> models;
  for (const auto& spec : ckpt_specs) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == spec.size())
      throw ta::ConfigError("--ckpts entries must be NAME=PATH, got \"" + spec + "\"");
    ta::EvalModel m;
    m.name = spec.substr(0, eq);
    auto [params, extra] = ta::load_lm_checkpoint(spec.substr(eq + 1));
    m.params = std::move(params);
    m.score_conditioned = extra.value("score_conditioned", false);
    m.condition_score = extra.value("condition_score", 5.0);
    if (has_score && m.score_conditioned) m.condition_score = score_override;
    models.push_back(std::move(m));
  }
  auto prompts = ta::load_prompts_jsonl(prompts_path);
  if (limit > 0 && limit < static_cast<long>(prompts.size()))
    prompts.resize(static_cast<std::size_t>(limit));

  const auto report = ta::oracle_eval(models, prompts, max_new);
  {
    std::ofstream out(out_path, std::ios::trunc);
    if (!out) throw ta::IoError("cannot write " + out_path);
    // responses are raw model bytes, not necessarily UTF-8
    out << ta::eval_report_json(report).dump(2, ' ', false, ta::Json::error_handler_t::replace)
        << "\n";
  }
  std::cout << "model            mean_oracle  mean_rank_score\n";
  for (std::size_t m = 0; m < report.model_names.size(); ++m) {
    std::printf("%-16s %11.4f %16.4f\n", report.model_names[m].c_str(),
                report.mean_oracle[m], report.mean_rank_score[m]);
  }
  std::cout << "report written to " << out_path << "\n";
  return 0;
}

int cmd_judge_prompt(const std::string& question, const std::string& responses_path) {
  std::vector<ta::JudgeEntry> entries;
  ta::detail::for_each_jsonl_line(responses_path, [&](const ta::Json& j, long lineno) {
    entries.push_back(ta::JudgeEntry{
        ta::detail::need_string(j, "name", responses_path, lineno),
        ta::detail::need_string(j, "response", responses_path, lineno)});
  });
  std::cout << ta::render_judge_prompt(question, entries);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"offline alignment pipeline for a toy byte-level transformer"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "generate the synthetic sorting corpus");
  std::string synth_out;
  ta::SynthConfig sc;
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--n", sc.n_sft, "sft sample count");
  synth->add_option("--pairs", sc.n_pairs, "preference pair count");
  synth->add_option("--eval", sc.n_eval, "eval prompt count");
  synth->add_option("--seed", sc.seed, "rng seed");
  synth->add_option("--k-min", sc.k_min, "min digits per instruction");
  synth->add_option("--k-max", sc.k_max, "max digits per instruction");
  synth->add_option("--min-gap", sc.min_pair_gap, "min oracle gap within a pair");

  // train-sft
  auto* tsft = app.add_subcommand("train-sft", "train the SFT model");
  TrainFlags sft_flags;
  sft_flags.add_common(tsft);

  // train-rm
  auto* trm = app.add_subcommand("train-rm", "train the reward model from an SFT checkpoint");
  TrainFlags rm_flags;
  std::string rm_init;
  rm_flags.add_common(trm);
  trm->add_option("--init", rm_init, "SFT checkpoint to start from")->required();
  trm->add_option("--holdout", rm_flags.holdout, "pairs reserved for the accuracy report");

  // label
  auto* label = app.add_subcommand("label", "score a dataset with a reward model");
  std::string label_rm, label_in, label_out;
  label->add_option("--rm", label_rm, "reward-model checkpoint")->required();
  label->add_option("--in", label_in, "sft-format JSONL to label")->required();
  label->add_option("--out", label_out, "labeled JSONL output")->required();

  // align
  auto* align = app.add_subcommand("align", "fine-tune an SFT checkpoint with fa/rwr/ca");
  TrainFlags align_flags;
  std::string align_method, align_init;
  align->add_option("--method", align_method, "fa, rwr, or ca")->required();
  align->add_option("--init", align_init, "SFT checkpoint to start from")->required();
  align_flags.add_common(align);
  align->add_option("--t", align_flags.t, "FA reward threshold");
  align->add_option("--beta", align_flags.beta, "RWR temperature");
  align->add_option("--score", align_flags.score, "CA inference conditioning score");

  // generate
  auto* gen = app.add_subcommand("generate", "greedy-generate a response");
  std::string gen_ckpt, gen_prompt;
  double gen_score = 5.0;
  long gen_max_new = 32;
  gen->add_option("--ckpt", gen_ckpt, "lm checkpoint")->required();
  gen->add_option("--prompt", gen_prompt, "instruction text")->required();
  auto* gen_score_opt = gen->add_option("--score", gen_score, "condition on this reward score");
  gen->add_option("--max-new", gen_max_new, "token budget");

  // evaluate
  auto* eval = app.add_subcommand("evaluate", "compare checkpoints on eval prompts");
  std::vector<std::string> eval_ckpts;
  std::string eval_prompts, eval_out;
  long eval_max_new = 32, eval_limit = 0;
  double eval_score = 5.0;
  eval->add_option("--ckpts", eval_ckpts, "NAME=PATH entries")->required()->expected(-2);
  eval->add_option("--prompts", eval_prompts, "eval prompts JSONL")->required();
  eval->add_option("--out", eval_out, "report JSON path")->required();
  eval->add_option("--max-new", eval_max_new, "token budget per response");
  eval->add_option("--limit", eval_limit, "use only the first N prompts (0 = all)");
  auto* eval_score_opt =
      eval->add_option("--score", eval_score, "override conditioning score for CA models");

  // judge-prompt
  auto* judge = app.add_subcommand("judge-prompt", "render the multi-assistant judging prompt");
  std::string judge_question, judge_responses;
  judge->add_option("--question", judge_question, "user question")->required();
  judge->add_option("--responses", judge_responses, "JSONL with name/response lines")
      ->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) return cmd_synth(synth_out, sc);

    if (tsft->parsed()) {
      ta::TrainConfig cfg;
      ta::AlignConfig unused;
      std::string data, out;
      sft_flags.resolve(tsft, cfg, unused, data, out);
      cfg.checkpoint_path = out;
      return cmd_train_sft(cfg, data);
    }

    if (trm->parsed()) {
      ta::TrainConfig cfg;
      cfg.learning_rate = 1.8e-3;  // keeps the RM/align learning-rate ratio
      cfg.epochs = 1;
      ta::AlignConfig unused;
      std::string data, out;
      rm_flags.resolve(trm, cfg, unused, data, out);
      cfg.checkpoint_path = out;
      return cmd_train_rm(cfg, data, rm_init);
    }

    if (label->parsed()) return cmd_label(label_rm, label_in, label_out);

    if (align->parsed()) {
      ta::TrainConfig cfg;
      ta::AlignConfig acfg;
      acfg.method = ta::parse_align_method(align_method);
      std::string data, out;
      align_flags.resolve(align, cfg, acfg, data, out);
      cfg.checkpoint_path = out;
      return cmd_align(cfg, acfg, data, align_init);
    }

    if (gen->parsed())
      return cmd_generate(gen_ckpt, gen_prompt, gen_score_opt->count() > 0, gen_score,
                          gen_max_new);

    if (eval->parsed())
      return cmd_evaluate(eval_ckpts, eval_prompts, eval_out, eval_max_new, eval_limit,
                          eval_score_opt->count() > 0, eval_score);

    if (judge->parsed()) return cmd_judge_prompt(judge_question, judge_responses);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
