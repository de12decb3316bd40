#pragma once

#include <algorithm>
#include <cctype>
#include <string>
#include <vector>

#include "tinyalign/data.hpp"
#include "tinyalign/rng.hpp"

namespace tinyalign {

// Digit-sorting task: instruction "sort: d1 d2 ... dk", ideal response is the
// sorted digits. Responses are drawn from a fixed mixture of the echoed
// input, the ideal answer, and partial bubble-sort progress, so the corpus
// spans the full reward range.
struct SynthConfig {
  long n_sft = 1500;
  long n_pairs = 2500;
  long n_eval = 200;
  int k_min = 3;
  int k_max = 8;
  double min_pair_gap = 0.2;  // reject pairs whose oracle scores are closer
  std::uint64_t seed = 0;
};

struct SynthData {
  std::vector<Sample> sft;
  std::vector<PreferencePair> pairs;
  std::vector<std::string> eval_prompts;
};

namespace detail {

inline std::string join_digits(const std::vector<int>& digits) {
  std::string out;
  for (std::size_t i = 0; i < digits.size(); ++i) {
    if (i) out += ' ';
    out += std::to_string(digits[i]);
  }
  return out;
}

inline std::vector<int> gen_digits(Rng& rng, const SynthConfig& cfg) {
  const int k = rng.uniform_int(cfg.k_min, cfg.k_max);
  std::vector<int> digits(static_cast<std::size_t>(k));
  for (auto& d : digits) d = rng.uniform_int(0, 9);
  return digits;
}

inline std::vector<int> bubble_passes(std::vector<int> a, int passes) {
  const int n = static_cast<int>(a.size());
  for (int p = 0; p < passes; ++p)
    for (int i = 0; i + 1 < n - p; ++i)
      if (a[static_cast<std::size_t>(i)] > a[static_cast<std::size_t>(i + 1)])
        std::swap(a[static_cast<std::size_t>(i)], a[static_cast<std::size_t>(i + 1)]);
  return a;
}

// echo 0.5 / ideal 0.3 / partial progress 0.2
inline std::string gen_response(Rng& rng, const std::vector<int>& digits) {
  const double u = rng.uniform();
  if (u < 0.5) return join_digits(digits);
  if (u < 0.8) {
    std::vector<int> s = digits;
    std::sort(s.begin(), s.end());
    return join_digits(s);
  }
  const int passes = rng.uniform_int(1, std::max(1, static_cast<int>(digits.size()) - 1));
  return join_digits(bubble_passes(digits, passes));
}

}  // namespace detail

// Fraction of ideal-answer positions matched by the response (whitespace
// tokens compared as strings).
inline double oracle_reward(const std::string& instruction, const std::string& response) {
  constexpr const char* kPrefix = "sort: ";
  if (instruction.rfind(kPrefix, 0) != 0)
    throw ValueError("oracle_reward: instruction is not a sort task: " + instruction);
  std::vector<int> digits;
  {
    std::string tok;
    for (std::size_t i = 6; i <= instruction.size(); ++i) {
      if (i == instruction.size() || instruction[i] == ' ') {
        if (!tok.empty()) {
          for (const char c : tok)
            if (c < '0' || c > '9')
              throw ValueError("oracle_reward: non-digit token in instruction: " + instruction);
          digits.push_back(std::stoi(tok));
          tok.clear();
        }
      } else {
        tok += instruction[i];
      }
    }
  }
  if (digits.empty())
    throw ValueError("oracle_reward: no digits in instruction: " + instruction);
  std::sort(digits.begin(), digits.end());

  std::vector<std::string> got;
  {
    std::string tok;
    for (std::size_t i = 0; i <= response.size(); ++i) {
      if (i == response.size() || std::isspace(static_cast<unsigned char>(response[i]))) {
        if (!tok.empty()) {
          got.push_back(tok);
          tok.clear();
        }
      } else {
        tok += response[i];
      }
    }
  }
  long match = 0;
  for (std::size_t i = 0; i < digits.size(); ++i)
    if (i < got.size() && got[i] == std::to_string(digits[i])) ++match;
  return static_cast<double>(match) / static_cast<double>(digits.size());
}

inline std::string ideal_response_for(const std::string& instruction) {
  std::vector<int> digits;
  std::string tok;
  for (std::size_t i = 6; i <= instruction.size(); ++i) {
    if (i == instruction.size() || instruction[i] == ' ') {
      if (!tok.empty()) {
        digits.push_back(std::stoi(tok));
        tok.clear();
      }
    } else {
      tok += instruction[i];
    }
  }
  std::sort(digits.begin(), digits.end());
  return detail::join_digits(digits);
}

inline SynthData synth_generate(const SynthConfig& cfg) {
  if (cfg.n_sft < 1 || cfg.n_pairs < 0 || cfg.n_eval < 0)
    throw ConfigError("synth_generate: counts must be positive");
  if (cfg.k_min < 1 || cfg.k_max < cfg.k_min)
    throw ConfigError("synth_generate: need 1 <= k_min <= k_max");
  Rng rng(cfg.seed);
  SynthData out;

  out.sft.reserve(static_cast<std::size_t>(cfg.n_sft));
  for (long i = 0; i < cfg.n_sft; ++i) {
    const auto digits = detail::gen_digits(rng, cfg);
    out.sft.push_back(Sample{"sort: " + detail::join_digits(digits),
                             detail::gen_response(rng, digits)});
  }

  out.pairs.reserve(static_cast<std::size_t>(cfg.n_pairs));
  while (static_cast<long>(out.pairs.size()) < cfg.n_pairs) {
    const auto digits = detail::gen_digits(rng, cfg);
    const std::string ins = "sort: " + detail::join_digits(digits);
    const std::string r1 = detail::gen_response(rng, digits);
    const std::string r2 = detail::gen_response(rng, digits);
    const double o1 = oracle_reward(ins, r1);
    const double o2 = oracle_reward(ins, r2);
    if (std::abs(o1 - o2) < cfg.min_pair_gap) continue;
    if (o1 > o2)
      out.pairs.push_back(PreferencePair{ins, r1, r2});
    else
      out.pairs.push_back(PreferencePair{ins, r2, r1});
  }

  out.eval_prompts.reserve(static_cast<std::size_t>(cfg.n_eval));
  for (long i = 0; i < cfg.n_eval; ++i)
    out.eval_prompts.push_back("sort: " + detail::join_digits(detail::gen_digits(rng, cfg)));

  return out;
}

}  // namespace tinyalign
