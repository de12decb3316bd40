#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "tinyalign/eval.hpp"

#include "support/checkers.hpp"

using namespace tinyalign;
namespace tt = tinyalign::testing;

namespace {

ModelConfig eval_config() {
  ModelConfig cfg;
  cfg.vocab_size = kVocabSize;
  cfg.d_model = 16;
  cfg.n_heads = 2;
  cfg.n_layers = 1;
  cfg.d_ff = 24;
  cfg.max_seq_len = 96;
  return cfg;
}

}  // namespace

TEST_CASE("rank_scores: score is (n + 1) - rank, best first") {
  const auto s = rank_scores(std::vector<double>{10.0, -1.0, 4.0}, true);
  CHECK(s == std::vector<double>{3, 1, 2});

  const auto asc = rank_scores(std::vector<double>{10.0, -1.0, 4.0}, false);
  CHECK(asc == std::vector<double>{1, 3, 2});

  const auto five = rank_scores(std::vector<double>{0.1, 0.9, 0.5, 0.3, 0.7}, true);
  CHECK(five == std::vector<double>{1, 5, 3, 2, 4});
  double total = 0.0;
  for (const double v : five) total += v;
  CHECK(total == 15.0);
}

TEST_CASE("rank_scores: ties take the average rank of their span") {
  const auto s = rank_scores(std::vector<double>{1.0, 1.0, 0.0}, true);
  CHECK(s == std::vector<double>{2.5, 2.5, 1.0});

  const auto all_equal = rank_scores(std::vector<double>{3.0, 3.0, 3.0, 3.0}, true);
  for (const double v : all_equal) CHECK(v == 2.5);

  // Tie handling keeps the per-prompt sum at n(n+1)/2.
  Rng rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<double> vals(6);
    for (auto& v : vals) v = static_cast<double>(rng.below(3));  // many ties
    const auto scores = rank_scores(vals, true);
    double sum = 0.0;
    for (const double v : scores) sum += v;
    CHECK(std::abs(sum - 21.0) < 1e-12);
  }
}

TEST_CASE("rank_scores: invariant under strictly monotone transforms") {
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> vals(5);
    for (auto& v : vals) v = static_cast<double>(rng.below(4)) - 1.5;  // includes ties
    std::vector<double> mapped(vals);
    for (auto& v : mapped) v = std::atan(v) * 3.0 + 1.0;  // strictly increasing
    CHECK(rank_scores(vals, true) == rank_scores(mapped, true));
    CHECK(rank_scores(vals, false) == rank_scores(mapped, false));
  }
}

TEST_CASE("rank_scores: input validation") {
  CHECK_THROWS_AS(rank_scores(std::vector<double>{1.0}, true), ValueError);
  CHECK_THROWS_AS(rank_scores(std::vector<double>{}, true), ValueError);
  CHECK_THROWS_AS(rank_scores(std::vector<double>{1.0, std::nan("")}, true), ValueError);
  CHECK_THROWS_AS(
      rank_scores(std::vector<double>{1.0, std::numeric_limits<double>::infinity()}, true),
      ValueError);
}

TEST_CASE("oracle_eval: identical models tie everywhere; aggregates recompute") {
  const ModelParams p = init_lm(eval_config(), 7);
  std::vector<EvalModel> models;
  models.push_back({"a", p, false, 5.0});
  models.push_back({"b", p, false, 5.0});
  const std::vector<std::string> prompts{"sort: 3 1", "sort: 2 9 4"};

  const EvalReport r = oracle_eval(models, prompts, 8);
  REQUIRE(r.model_names == std::vector<std::string>{"a", "b"});
  REQUIRE(r.prompts.size() == 2);
  for (const auto& pe : r.prompts) {
    REQUIRE(pe.per_model.size() == 2);
    CHECK(pe.per_model[0].response == pe.per_model[1].response);
    CHECK(pe.per_model[0].rank_score == 1.5);
    CHECK(pe.per_model[1].rank_score == 1.5);
    CHECK(pe.per_model[0].rank == 1.5);
  }
  CHECK(r.mean_rank_score == std::vector<double>{1.5, 1.5});

  // Aggregates equal the column means of the per-prompt table.
  for (std::size_t m = 0; m < 2; ++m) {
    double acc = 0.0;
    for (const auto& pe : r.prompts) acc += pe.per_model[m].oracle;
    CHECK(std::abs(r.mean_oracle[m] - acc / 2.0) < 1e-15);
  }

  CHECK_THROWS_AS(oracle_eval(std::span<const EvalModel>(models.data(), 1), prompts, 8),
                  ValueError);
  CHECK_THROWS_AS(oracle_eval(models, std::vector<std::string>{}, 8), ValueError);
}

TEST_CASE("oracle_eval: conditioned models decode from the CA template") {
  // A zero unembedding makes generation deterministic junk; the point is that
  // score_conditioned routes through ca_generate without throwing and the
  // report stays structurally sound.
  ModelParams p = init_lm(eval_config(), 8);
  for (auto& v : p.unembedding.raw_data()) v = 0.0;
  std::vector<EvalModel> models;
  models.push_back({"ca", p, true, 5.0});
  models.push_back({"sft", p, false, 5.0});
  const std::vector<std::string> prompts{"sort: 5 1"};
  const EvalReport r = oracle_eval(models, prompts, 4);
  REQUIRE(r.prompts.size() == 1);
  CHECK(r.prompts[0].per_model[0].response == r.prompts[0].per_model[1].response);
  const Json j = eval_report_json(r);
  CHECK(j.at("models").size() == 2);
  CHECK(j.at("aggregates").size() == 2);
  CHECK(j.at("prompts").size() == 1);
  CHECK(j.at("prompts")[0].at("results")[0].at("model") == "ca");
}

TEST_CASE("render_judge_prompt: template fields and ordering") {
  const std::vector<JudgeEntry> entries{{"CA", "1 2 3"},
                                        {"PPO", "1 2 3"},
                                        {"FA", "3 2 1"},
                                        {"RWR", "2 2 2"},
                                        {"SFT", "1 3 2"}};
  const std::string prompt = render_judge_prompt("sort: 3 1 2", entries);

  CHECK(prompt.find("Please act as an impartial judge") != std::string::npos);
  CHECK(prompt.find("five AI assistants") != std::string::npos);
  CHECK(prompt.find("{Assistant name}: {score}, where the range of {score} is 1 to 10.") !=
        std::string::npos);
  CHECK(prompt.find("the question and answers of Assistant CA, PPO, FA, RWR and SFT,") !=
        std::string::npos);
  CHECK(prompt.find("User Question:\nsort: 3 1 2\n") != std::string::npos);
  for (const auto& e : entries)
    CHECK(prompt.find("\nThe answer of Assistant " + e.name + ":\n" + e.response + "\n") !=
          std::string::npos);

  // Responses appear in input order.
  CHECK(prompt.find("The answer of Assistant CA:") <
        prompt.find("The answer of Assistant PPO:"));
  CHECK(prompt.find("The answer of Assistant RWR:") <
        prompt.find("The answer of Assistant SFT:"));

  const std::vector<JudgeEntry> two{{"A", "x"}, {"B", "y"}};
  const std::string small = render_judge_prompt("q", two);
  CHECK(small.find("two AI assistants") != std::string::npos);
  CHECK(small.find("Assistant A and B,") != std::string::npos);

  CHECK_THROWS_AS(render_judge_prompt("q", std::vector<JudgeEntry>{{"A", "x"}}), ValueError);
}
