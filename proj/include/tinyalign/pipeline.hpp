#pragma once

#include <cmath>
#include <functional>
#include <iostream>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "tinyalign/adam.hpp"
#include "tinyalign/align.hpp"
#include "tinyalign/checkpoint.hpp"
#include "tinyalign/hash.hpp"

namespace tinyalign {

struct TrainConfig {
  double learning_rate = 1e-3;
  long batch_size = 16;
  long epochs = 2;
  std::uint64_t seed = 0;
  double grad_clip_norm = 1.0;
  std::string checkpoint_path;  // empty: keep the result in memory only
  ModelConfig model;            // architecture for stages that start fresh
  long holdout = 300;           // preference pairs reserved for RM accuracy
  bool verbose = true;

  void validate() const {
    if (learning_rate <= 0.0) throw ConfigError("train config: learning_rate must be positive");
    if (batch_size < 1) throw ConfigError("train config: batch_size must be at least 1");
    if (epochs < 1) throw ConfigError("train config: epochs must be at least 1");
    if (grad_clip_norm <= 0.0)
      throw ConfigError("train config: grad_clip_norm must be positive");
    if (holdout < 0) throw ConfigError("train config: holdout must be non-negative");
    model.validate();
  }

  Json snapshot() const {
    return Json{{"learning_rate", learning_rate}, {"batch_size", batch_size},
                {"epochs", epochs},               {"seed", seed},
                {"grad_clip_norm", grad_clip_norm}, {"model", model}};
  }
};

struct RunManifest {
  std::string stage;
  Json config;
  std::string dataset_fingerprint;
  Json metrics;
  std::string checkpoint;
};

inline std::string manifest_path_for(const std::string& checkpoint_path) {
  return checkpoint_path + ".manifest.json";
}

inline void write_manifest(const RunManifest& m, const std::string& path) {
  const Json j{{"stage", m.stage},
               {"config", m.config},
               {"dataset_fingerprint", m.dataset_fingerprint},
               {"metrics", m.metrics},
               {"checkpoint", m.checkpoint}};
  auto out = detail::open_out(path);
  out << j.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// training loop
// ---------------------------------------------------------------------------

struct TrainLog {
  std::vector<double> epoch_loss;  // mean loss of completed steps per epoch
  long steps = 0;
  long skipped = 0;  // batches dropped by the FA filter
  double final_loss = std::numeric_limits<double>::quiet_NaN();

  Json metrics() const {
    return Json{{"epoch_loss", epoch_loss},
                {"final_loss", final_loss},
                {"steps", steps},
                {"skipped_batches", skipped}};
  }
};

// Shuffled minibatch Adam over item indices. The loss callback may throw
// EmptyFilteredBatch to skip a step; a non-finite loss aborts the run.
inline TrainLog run_training(const TrainConfig& cfg, long n_items,
                             const std::vector<Tensor>& params,
                             const std::function<Tensor(std::span<const long>)>& batch_loss,
                             const std::string& tag) {
  if (n_items < 1) throw ValueError(tag + ": empty dataset");
  Adam opt(params, AdamConfig{.lr = cfg.learning_rate});
  Rng shuffle_rng(cfg.seed ^ 0x5bd1e995u);  // decoupled from the init stream
  std::vector<long> order(static_cast<std::size_t>(n_items));
  std::iota(order.begin(), order.end(), 0);

  TrainLog log;
  for (long epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    long loss_count = 0;
    for (long b0 = 0; b0 < n_items; b0 += cfg.batch_size) {
      const auto take = static_cast<std::size_t>(std::min(cfg.batch_size, n_items - b0));
      const std::span<const long> idx(order.data() + b0, take);
      opt.zero_grad();
      Tensor loss;
      try {
        loss = batch_loss(idx);
      } catch (const EmptyFilteredBatch&) {
        ++log.skipped;
        continue;
      }
      const double lv = loss.item();
      if (!std::isfinite(lv))
        throw Error(tag + ": training diverged, non-finite loss at step " +
                    std::to_string(log.steps + 1));
      backward(loss);
      clip_grad_norm(params, cfg.grad_clip_norm);
      opt.step();
      ++log.steps;
      loss_sum += lv;
      ++loss_count;
      log.final_loss = lv;
    }
    const double epoch_mean =
        loss_count > 0 ? loss_sum / static_cast<double>(loss_count)
                       : std::numeric_limits<double>::quiet_NaN();
    log.epoch_loss.push_back(epoch_mean);
    if (cfg.verbose) {
      if (loss_count > 0)
        std::cout << "[" << tag << "] epoch " << epoch << ": mean loss " << epoch_mean << " ("
                  << loss_count << " steps)\n";
      else
        std::cout << "[" << tag << "] epoch " << epoch << ": all batches skipped\n";
    }
  }
  return log;
}

// ---------------------------------------------------------------------------
// stages
// ---------------------------------------------------------------------------

inline ModelParams train_sft(const TrainConfig& cfg, std::span<const Sample> data,
                             const std::string& dataset_fingerprint = "") {
  cfg.validate();
  if (data.empty()) throw ValueError("train_sft: empty dataset");
  std::vector<TokenSeq> seqs;
  seqs.reserve(data.size());
  for (const auto& s : data) seqs.push_back(format_chat(s));

  ModelParams params = init_lm(cfg.model, cfg.seed);
  const auto all = parameters(params);
  const TrainLog log = run_training(
      cfg, static_cast<long>(seqs.size()), all,
      [&](std::span<const long> idx) {
        std::vector<TokenSeq> batch;
        batch.reserve(idx.size());
        for (const long i : idx) batch.push_back(seqs[static_cast<std::size_t>(i)]);
        return sft_loss(params, batch);
      },
      "sft");

  if (!cfg.checkpoint_path.empty()) {
    save_lm_checkpoint(cfg.checkpoint_path, params,
                       Json{{"stage", "sft"}, {"seed", cfg.seed}});
    write_manifest(RunManifest{"sft", cfg.snapshot(), dataset_fingerprint, log.metrics(),
                               cfg.checkpoint_path},
                   manifest_path_for(cfg.checkpoint_path));
  }
  return params;
}

struct RmResult {
  RewardModelParams params;
  double heldout_accuracy = std::numeric_limits<double>::quiet_NaN();
  long heldout_count = 0;
  TrainLog log;
};

// Pairwise-ranking training; trunk starts from the SFT model, the last
// `holdout` input pairs are reserved for the accuracy report.
inline RmResult train_rm(const TrainConfig& cfg, std::span<const PreferencePair> pairs,
                         const ModelParams& init, const std::string& dataset_fingerprint = "") {
  cfg.validate();
  if (pairs.empty()) throw ValueError("train_rm: empty preference dataset");
  if (cfg.holdout >= static_cast<long>(pairs.size()))
    throw ConfigError("train_rm: holdout leaves no training pairs");
  const auto token_pairs = to_token_pairs(pairs);
  const long n_train = static_cast<long>(pairs.size()) - cfg.holdout;

  RmResult result;
  result.params = init_rm_from_lm(init);
  const auto all = parameters(result.params);
  result.log = run_training(
      cfg, n_train, all,
      [&](std::span<const long> idx) {
        std::vector<TokenPair> batch;
        batch.reserve(idx.size());
        for (const long i : idx) batch.push_back(token_pairs[static_cast<std::size_t>(i)]);
        return rm_ranking_loss(result.params, batch);
      },
      "rm");

  result.heldout_count = cfg.holdout;
  if (cfg.holdout > 0) {
    NoGradGuard ng;
    long wins = 0;
    for (long i = n_train; i < static_cast<long>(pairs.size()); ++i) {
      const auto& tp = token_pairs[static_cast<std::size_t>(i)];
      if (rm_forward(result.params, tp.chosen.ids).item() >
          rm_forward(result.params, tp.rejected.ids).item())
        ++wins;
    }
    result.heldout_accuracy = static_cast<double>(wins) / static_cast<double>(cfg.holdout);
    if (cfg.verbose)
      std::cout << "[rm] held-out pairwise accuracy " << result.heldout_accuracy << " on "
                << cfg.holdout << " pairs\n";
  }

  if (!cfg.checkpoint_path.empty()) {
    save_rm_checkpoint(cfg.checkpoint_path, result.params,
                       Json{{"stage", "rm"}, {"seed", cfg.seed}});
    Json metrics = result.log.metrics();
    metrics["heldout_accuracy"] = result.heldout_accuracy;
    metrics["heldout_pairs"] = result.heldout_count;
    write_manifest(RunManifest{"rm", cfg.snapshot(), dataset_fingerprint, metrics,
                               cfg.checkpoint_path},
                   manifest_path_for(cfg.checkpoint_path));
  }
  return result;
}

struct LabelResult {
  std::vector<LabeledSample> labeled;
  RewardStats stats;
};

// Scores every sample with the reward model, then normalizes with
// dataset-level statistics (frozen here, not per batch).
inline LabelResult label_dataset(const RewardModelParams& rm, std::span<const Sample> samples) {
  if (samples.empty()) throw ValueError("label_dataset: empty input");
  NoGradGuard ng;
  std::vector<double> raw;
  raw.reserve(samples.size());
  for (const auto& s : samples) raw.push_back(rm_forward(rm, format_chat(s).ids).item());
  auto [norm, stats] = normalize_rewards(raw);
  LabelResult out;
  out.stats = stats;
  out.labeled.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i)
    out.labeled.push_back(
        LabeledSample{samples[i].instruction, samples[i].response, raw[i], norm[i]});
  return out;
}

inline Json reward_stats_json(const RewardStats& s) {
  return Json{{"mean", s.mean}, {"std", s.std}, {"count", s.count}, {"degenerate", s.degenerate}};
}

inline RewardStats reward_stats_from_json(const Json& j) {
  RewardStats s;
  s.mean = j.at("mean").get<double>();
  s.std = j.at("std").get<double>();
  s.count = j.at("count").get<long>();
  s.degenerate = j.at("degenerate").get<bool>();
  return s;
}

inline std::string stats_path_for(const std::string& labeled_path) {
  return labeled_path + ".stats.json";
}

inline void save_reward_stats(const RewardStats& stats, const std::string& path) {
  auto out = detail::open_out(path);
  out << reward_stats_json(stats).dump(2) << '\n';
}

inline RewardStats load_reward_stats(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open reward stats " + path);
  Json j = Json::parse(in, nullptr, false);
  if (j.is_discarded()) throw IoError(path + ": malformed reward stats");
  return reward_stats_from_json(j);
}

// Stage-order guard: a labeled dataset is only usable for alignment when the
// stats file written at labeling time sits next to it.
inline std::pair<std::vector<LabeledSample>, RewardStats> load_labeled_with_stats(
    const std::string& labeled_path) {
  const std::string stats_path = stats_path_for(labeled_path);
  std::ifstream probe(stats_path);
  if (!probe)
    throw IoError("missing reward-stats file " + stats_path +
                  "; run the label stage before aligning");
  return {load_labeled_jsonl(labeled_path), load_reward_stats(stats_path)};
}

// Fine-tunes a copy of the SFT model with the chosen offline method.
inline ModelParams align_finetune(const TrainConfig& cfg, const AlignConfig& acfg,
                                  std::span<const LabeledSample> data, const ModelParams& init,
                                  const std::string& dataset_fingerprint = "") {
  cfg.validate();
  acfg.validate();
  if (data.empty()) throw ValueError("align_finetune: empty dataset");
  ModelParams params = clone_lm(init);
  const auto all = parameters(params);
  const std::string tag = align_method_name(acfg.method);

  TrainLog log;
  if (acfg.method == AlignMethod::CA) {
    std::vector<TokenSeq> seqs = to_ca_seqs(data);
    log = run_training(
        cfg, static_cast<long>(seqs.size()), all,
        [&](std::span<const long> idx) {
          std::vector<TokenSeq> batch;
          batch.reserve(idx.size());
          for (const long i : idx) batch.push_back(seqs[static_cast<std::size_t>(i)]);
          return ca_loss(params, batch);
        },
        tag);
  } else {
    std::vector<LabeledSeq> seqs = to_chat_seqs(data);
    log = run_training(
        cfg, static_cast<long>(seqs.size()), all,
        [&](std::span<const long> idx) {
          std::vector<LabeledSeq> batch;
          batch.reserve(idx.size());
          for (const long i : idx) batch.push_back(seqs[static_cast<std::size_t>(i)]);
          return acfg.method == AlignMethod::FA ? fa_loss(params, batch, acfg.t)
                                                : rwr_loss(params, batch, acfg.beta_rwr);
        },
        tag);
  }

  if (!cfg.checkpoint_path.empty()) {
    const bool conditioned = acfg.method == AlignMethod::CA;
    Json extra{{"stage", "align-" + tag},
               {"seed", cfg.seed},
               {"score_conditioned", conditioned}};
    if (conditioned) extra["condition_score"] = acfg.condition_score;
    save_lm_checkpoint(cfg.checkpoint_path, params, extra);
    Json config = cfg.snapshot();
    config["align"] = Json{{"method", tag},
                           {"t", acfg.t},
                           {"beta_rwr", acfg.beta_rwr},
                           {"condition_score", acfg.condition_score}};
    write_manifest(RunManifest{"align-" + tag, config, dataset_fingerprint, log.metrics(),
                               cfg.checkpoint_path},
                   manifest_path_for(cfg.checkpoint_path));
  }
  return params;
}

}  // namespace tinyalign
