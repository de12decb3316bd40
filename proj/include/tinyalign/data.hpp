#pragma once

#include <cctype>
#include <cmath>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tinyalign/error.hpp"
#include "tinyalign/tokenizer.hpp"

namespace tinyalign {

using Json = nlohmann::json;

struct Sample {
  std::string instruction;
  std::string response;
};

struct PreferencePair {
  std::string instruction;
  std::string chosen;
  std::string rejected;
};

struct LabeledSample {
  std::string instruction;
  std::string response;
  double raw_reward = 0.0;
  double norm_reward = 0.0;
};

// ---------------------------------------------------------------------------
// prompt templates
// ---------------------------------------------------------------------------

// One decimal digit, round half away from zero: 1.26 -> "1.3", -5 -> "-5.0".
inline std::string format_score(double score) {
  if (!std::isfinite(score)) throw ValueError("format_score: score must be finite");
  const long long tenths = std::llround(score * 10.0);
  const long long mag = tenths < 0 ? -tenths : tenths;
  std::string out = tenths < 0 ? "-" : "";
  out += std::to_string(mag / 10);
  out += '.';
  out += std::to_string(mag % 10);
  return out;
}

// `User: {instruction} Assistant: ` — the shared conditioning prefix, never
// supervised.
inline TokenSeq chat_prompt(const std::string& instruction) {
  TokenSeq seq;
  seq.append_text("User: ", 0.0);
  seq.append_text(instruction, 0.0);
  seq.append_text(" Assistant: ", 0.0);
  return seq;
}

// `User: {instruction} Assistant: <rm_score> {a.b} ` with the score span on
// the conditioning side (mask 0).
inline TokenSeq ca_prompt(const std::string& instruction, double score) {
  TokenSeq seq = chat_prompt(instruction);
  seq.push(kRmScoreId, 0.0);
  seq.append_text(" " + format_score(score) + " ", 0.0);
  return seq;
}

// Full training sequence: prompt + response + EOS, loss on response and EOS.
inline TokenSeq format_chat(const Sample& s) {
  TokenSeq seq = chat_prompt(s.instruction);
  seq.append_text(s.response, 1.0);
  seq.push(kEosId, 1.0);
  return seq;
}

inline TokenSeq format_ca(const Sample& s, double score) {
  TokenSeq seq = ca_prompt(s.instruction, score);
  seq.append_text(s.response, 1.0);
  seq.push(kEosId, 1.0);
  return seq;
}

// ---------------------------------------------------------------------------
// JSONL I/O
// ---------------------------------------------------------------------------

namespace detail {

inline void for_each_jsonl_line(const std::string& path,
                                const std::function<void(const Json&, long)>& fn) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    Json j = Json::parse(line, nullptr, false);
    if (j.is_discarded())
      throw SchemaError(path + " line " + std::to_string(lineno) + ": malformed JSON");
    fn(j, lineno);
  }
}

inline std::string need_string(const Json& j, const char* field, const std::string& path,
                               long lineno) {
  if (!j.contains(field) || !j.at(field).is_string())
    throw SchemaError(path + " line " + std::to_string(lineno) + ": missing string field \"" +
                      field + "\"");
  return j.at(field).get<std::string>();
}

inline double need_number(const Json& j, const char* field, const std::string& path,
                          long lineno) {
  if (!j.contains(field) || !j.at(field).is_number())
    throw SchemaError(path + " line " + std::to_string(lineno) + ": missing number field \"" +
                      field + "\"");
  return j.at(field).get<double>();
}

inline bool is_blank(const std::string& s) {
  for (const char c : s)
    if (!std::isspace(static_cast<unsigned char>(c))) return false;
  return true;
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  return out;
}

}  // namespace detail

inline std::vector<Sample> load_sft_jsonl(const std::string& path) {
  std::vector<Sample> out;
  detail::for_each_jsonl_line(path, [&](const Json& j, long lineno) {
    Sample s{detail::need_string(j, "instruction", path, lineno),
             detail::need_string(j, "response", path, lineno)};
    if (detail::is_blank(s.instruction) || detail::is_blank(s.response))
      throw SchemaError(path + " line " + std::to_string(lineno) +
                        ": instruction/response must be non-empty");
    out.push_back(std::move(s));
  });
  return out;
}

inline std::vector<PreferencePair> load_pref_jsonl(const std::string& path) {
  std::vector<PreferencePair> out;
  detail::for_each_jsonl_line(path, [&](const Json& j, long lineno) {
    PreferencePair p{detail::need_string(j, "instruction", path, lineno),
                     detail::need_string(j, "chosen", path, lineno),
                     detail::need_string(j, "rejected", path, lineno)};
    if (p.chosen == p.rejected)
      throw SchemaError(path + " line " + std::to_string(lineno) +
                        ": chosen and rejected must differ");
    out.push_back(std::move(p));
  });
  return out;
}

inline std::vector<LabeledSample> load_labeled_jsonl(const std::string& path) {
  std::vector<LabeledSample> out;
  detail::for_each_jsonl_line(path, [&](const Json& j, long lineno) {
    out.push_back(LabeledSample{detail::need_string(j, "instruction", path, lineno),
                                detail::need_string(j, "response", path, lineno),
                                detail::need_number(j, "raw_reward", path, lineno),
                                detail::need_number(j, "norm_reward", path, lineno)});
  });
  return out;
}

inline std::vector<std::string> load_prompts_jsonl(const std::string& path) {
  std::vector<std::string> out;
  detail::for_each_jsonl_line(path, [&](const Json& j, long lineno) {
    out.push_back(detail::need_string(j, "instruction", path, lineno));
  });
  return out;
}

inline void save_sft_jsonl(const std::vector<Sample>& data, const std::string& path) {
  auto out = detail::open_out(path);
  for (const auto& s : data)
    out << Json{{"instruction", s.instruction}, {"response", s.response}}.dump() << '\n';
}

inline void save_pref_jsonl(const std::vector<PreferencePair>& data, const std::string& path) {
  auto out = detail::open_out(path);
  for (const auto& p : data)
    out << Json{{"instruction", p.instruction}, {"chosen", p.chosen}, {"rejected", p.rejected}}
               .dump()
        << '\n';
}

inline void save_labeled_jsonl(const std::vector<LabeledSample>& data, const std::string& path) {
  auto out = detail::open_out(path);
  for (const auto& s : data)
    out << Json{{"instruction", s.instruction},
                {"response", s.response},
                {"raw_reward", s.raw_reward},
                {"norm_reward", s.norm_reward}}
               .dump()
        << '\n';
}

inline void save_prompts_jsonl(const std::vector<std::string>& prompts, const std::string& path) {
  auto out = detail::open_out(path);
  for (const auto& p : prompts) out << Json{{"instruction", p}}.dump() << '\n';
}

}  // namespace tinyalign
