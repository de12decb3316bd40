#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "tinyalign/align.hpp"
#include "tinyalign/infer.hpp"
#include "tinyalign/synth.hpp"

namespace tinyalign {

// Rank 1 = best; returned score is (n + 1) - rank, so with five models the
// best receives 5. Ties take the average rank of their span, which keeps the
// per-prompt score sum at n(n+1)/2.
inline std::vector<double> rank_scores(std::span<const double> values, bool higher_better) {
  const std::size_t n = values.size();
  if (n < 2) throw ValueError("rank_scores: need at least 2 models");
  for (const double v : values)
    if (!std::isfinite(v)) throw ValueError("rank_scores: non-finite value");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return higher_better ? values[a] > values[b] : values[a] < values[b];
  });
  std::vector<double> scores(n, 0.0);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double avg_rank = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k)
      scores[order[k]] = static_cast<double>(n + 1) - avg_rank;
    i = j + 1;
  }
  return scores;
}

struct EvalModel {
  std::string name;
  ModelParams params;
  bool score_conditioned = false;
  double condition_score = 5.0;
};

struct ModelEvalEntry {
  std::string response;
  double oracle = 0.0;
  double rank = 0.0;
  double rank_score = 0.0;
};

struct PromptEval {
  std::string instruction;
  std::vector<ModelEvalEntry> per_model;  // aligned with EvalReport::model_names
};

struct EvalReport {
  std::vector<std::string> model_names;
  std::vector<PromptEval> prompts;
  std::vector<double> mean_oracle;
  std::vector<double> mean_rank_score;
};

// Generates with each model (score-conditioned for CA checkpoints), scores
// against the synthetic oracle, and ranks models per prompt.
inline EvalReport oracle_eval(std::span<const EvalModel> models,
                              std::span<const std::string> prompts, long max_new_tokens = 32) {
  if (models.size() < 2) throw ValueError("oracle_eval: need at least 2 models");
  if (prompts.empty()) throw ValueError("oracle_eval: no prompts");
  EvalReport report;
  for (const auto& m : models) report.model_names.push_back(m.name);
  const std::size_t n = models.size();
  report.mean_oracle.assign(n, 0.0);
  report.mean_rank_score.assign(n, 0.0);

  for (const auto& instruction : prompts) {
    PromptEval pe;
    pe.instruction = instruction;
    std::vector<double> oracles(n);
    for (std::size_t m = 0; m < n; ++m) {
      ModelEvalEntry entry;
      entry.response = models[m].score_conditioned
                           ? ca_generate(models[m].params, instruction,
                                         models[m].condition_score, max_new_tokens)
                           : chat_generate(models[m].params, instruction, max_new_tokens);
      entry.oracle = oracle_reward(instruction, entry.response);
      oracles[m] = entry.oracle;
      pe.per_model.push_back(std::move(entry));
    }
    const auto scores = rank_scores(oracles, /*higher_better=*/true);
    for (std::size_t m = 0; m < n; ++m) {
      pe.per_model[m].rank_score = scores[m];
      pe.per_model[m].rank = static_cast<double>(n + 1) - scores[m];
      report.mean_oracle[m] += oracles[m];
      report.mean_rank_score[m] += scores[m];
    }
    report.prompts.push_back(std::move(pe));
  }
  const auto count = static_cast<double>(prompts.size());
  for (std::size_t m = 0; m < n; ++m) {
    report.mean_oracle[m] /= count;
    report.mean_rank_score[m] /= count;
  }
  return report;
}

inline Json eval_report_json(const EvalReport& r) {
  Json prompts = Json::array();
  for (const auto& pe : r.prompts) {
    Json results = Json::array();
    for (std::size_t m = 0; m < pe.per_model.size(); ++m) {
      const auto& e = pe.per_model[m];
      results.push_back(Json{{"model", r.model_names[m]},
                             {"response", e.response},
                             {"oracle_reward", e.oracle},
                             {"rank", e.rank},
                             {"rank_score", e.rank_score}});
    }
    prompts.push_back(Json{{"instruction", pe.instruction}, {"results", std::move(results)}});
  }
  Json aggregates = Json::array();
  for (std::size_t m = 0; m < r.model_names.size(); ++m)
    aggregates.push_back(Json{{"model", r.model_names[m]},
                              {"mean_oracle_reward", r.mean_oracle[m]},
                              {"mean_rank_score", r.mean_rank_score[m]}});
  return Json{{"models", r.model_names},
              {"aggregates", std::move(aggregates)},
              {"prompts", std::move(prompts)}};
}

namespace detail {

inline std::string count_word(std::size_t n) {
  static const char* words[] = {"zero", "one", "two",   "three", "four", "five",
                                "six",  "seven", "eight", "nine",  "ten"};
  return n <= 10 ? words[n] : std::to_string(n);
}

}  // namespace detail

struct JudgeEntry {
  std::string name;
  std::string response;
};

// Renders the multi-assistant judging prompt for manual external use; no
// network calls are made anywhere in this project.
inline std::string render_judge_prompt(const std::string& question,
                                       std::span<const JudgeEntry> entries) {
  if (entries.size() < 2) throw ValueError("render_judge_prompt: need at least 2 responses");
  const std::string n_word = detail::count_word(entries.size());
  std::string names;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (i > 0) names += (i + 1 == entries.size()) ? " and " : ", ";
    names += entries[i].name;
  }
  std::string out;
  out += "Please act as an impartial judge and evaluate the quality of the responses provided "
         "by " + n_word + " AI assistants to the user question. You should choose the "
         "assistant that follows the user's instructions and answers the user's questions "
         "better. Your evaluation should consider factors such as the helpfulness, relevance, "
         "and level of detail of their responses.\n\n";
  out += "Begin your evaluation by comparing the " + n_word + " responses and provide a short "
         "explanation. Avoid any position biases and ensure that the order in which the "
         "responses were presented does not influence your decision. Do not allow the length "
         "of the responses to influence your evaluation. Do not favor certain names of the "
         "assistants. Be as objective as possible. After providing your explanation, output "
         "your final verdict by strictly following this format:\n\n";
  out += "{Assistant name}: {score}, where the range of {score} is 1 to 10.\n\n";
  out += "The answers can have the same score, but you should distinguish them as much as "
         "possible. You should give the assistant's scores one by one after all the "
         "explanations. The followings are the question and answers of Assistant " + names +
         ",\n\n";
  out += "User Question:\n" + question + "\n";
  for (const auto& e : entries)
    out += "\nThe answer of Assistant " + e.name + ":\n" + e.response + "\n";
  return out;
}

}  // namespace tinyalign
