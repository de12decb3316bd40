#pragma once

#include <string>
#include <vector>

#include "tinyalign/data.hpp"
#include "tinyalign/model.hpp"

namespace tinyalign {

// Deterministic greedy decoding: argmax each step, ties broken by lowest
// token id, stop at EOS or the token budget. Returns the decoded response
// (EOS excluded).
inline std::string greedy_generate(const ModelParams& p, const TokenSeq& prompt,
                                   long max_new_tokens) {
  if (max_new_tokens < 0) throw ConfigError("greedy_generate: negative token budget");
  if (prompt.ids.empty()) throw ValueError("greedy_generate: empty prompt");
  const long budget_end = static_cast<long>(prompt.ids.size()) + max_new_tokens;
  if (budget_end > p.trunk.config.max_seq_len)
    throw ValueError("greedy_generate: prompt plus budget exceeds max_seq_len " +
                     std::to_string(p.trunk.config.max_seq_len));
  NoGradGuard ng;
  std::vector<int> ids = prompt.ids;
  std::vector<int> out;
  for (long step = 0; step < max_new_tokens; ++step) {
    Tensor logits = lm_forward(p, ids);
    const long vocab = logits.dim(1);
    const auto& v = logits.data();
    const std::size_t base = static_cast<std::size_t>((logits.dim(0) - 1) * vocab);
    int best = 0;
    for (long c = 1; c < vocab; ++c)
      if (v[base + static_cast<std::size_t>(c)] > v[base + static_cast<std::size_t>(best)])
        best = static_cast<int>(c);
    if (best == kEosId) break;
    out.push_back(best);
    ids.push_back(best);
  }
  return detokenize(out);
}

inline std::string chat_generate(const ModelParams& p, const std::string& instruction,
                                 long max_new_tokens) {
  return greedy_generate(p, chat_prompt(instruction), max_new_tokens);
}

// Conditions the prompt on a target reward via the CA template, then decodes
// greedily.
inline std::string ca_generate(const ModelParams& p, const std::string& instruction,
                               double condition_score, long max_new_tokens) {
  return greedy_generate(p, ca_prompt(instruction, condition_score), max_new_tokens);
}

}  // namespace tinyalign
