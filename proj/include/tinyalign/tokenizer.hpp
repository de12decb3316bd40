#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "tinyalign/error.hpp"

namespace tinyalign {

// Byte-level vocabulary: ids 0..255 are raw bytes, followed by reserved
// special tokens. Every byte string tokenizes losslessly.
inline constexpr int kEosId = 256;
inline constexpr int kRmScoreId = 257;
inline constexpr int kVocabSize = 258;

// Token ids with an aligned per-token loss mask (1 = supervised).
struct TokenSeq {
  std::vector<int> ids;
  std::vector<double> loss_mask;

  std::size_t size() const { return ids.size(); }

  void push(int id, double mask) {
    ids.push_back(id);
    loss_mask.push_back(mask);
  }

  void append_text(std::string_view text, double mask) {
    for (const char c : text) push(static_cast<unsigned char>(c), mask);
  }

  double mask_sum() const {
    double s = 0.0;
    for (const double m : loss_mask) s += m;
    return s;
  }
};

inline std::vector<int> tokenize(std::string_view text) {
  std::vector<int> ids;
  ids.reserve(text.size());
  for (const char c : text) ids.push_back(static_cast<unsigned char>(c));
  return ids;
}

inline std::string detokenize(const std::vector<int>& ids) {
  std::string out;
  out.reserve(ids.size());
  for (const int id : ids) {
    if (id >= 0 && id < 256) {
      out.push_back(static_cast<char>(id));
    } else if (id == kEosId) {
      out += "<eos>";
    } else if (id == kRmScoreId) {
      out += "<rm_score>";
    } else {
      throw ValueError("detokenize: unknown token id " + std::to_string(id));
    }
  }
  return out;
}

}  // namespace tinyalign
