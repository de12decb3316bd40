#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tinyalign/data.hpp"
#include "tinyalign/model.hpp"

namespace tinyalign {

// Checkpoint container: magic "TALN", u32 format version, u64 header length,
// JSON header (kind, model config, tensor index, free-form extra), then the
// tensor payload as raw little-endian f64 in index order.
inline constexpr char kCheckpointMagic[4] = {'T', 'A', 'L', 'N'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void to_json(Json& j, const ModelConfig& c) {
  j = Json{{"vocab_size", c.vocab_size},   {"d_model", c.d_model},
           {"n_heads", c.n_heads},         {"n_layers", c.n_layers},
           {"d_ff", c.d_ff},               {"max_seq_len", c.max_seq_len},
           {"rope_base", c.rope_base}};
}

inline void from_json(const Json& j, ModelConfig& c) {
  c.vocab_size = j.at("vocab_size").get<long>();
  c.d_model = j.at("d_model").get<long>();
  c.n_heads = j.at("n_heads").get<long>();
  c.n_layers = j.at("n_layers").get<long>();
  c.d_ff = j.at("d_ff").get<long>();
  c.max_seq_len = j.at("max_seq_len").get<long>();
  c.rope_base = j.at("rope_base").get<double>();
}

namespace detail {

inline void write_checkpoint(const std::string& path, const std::string& kind,
                             const ModelConfig& cfg, const std::vector<NamedParam>& named,
                             const Json& extra) {
  Json index = Json::array();
  for (const auto& np : named)
    index.push_back(Json{{"name", np.name}, {"shape", np.tensor.shape()}});
  const Json header{{"kind", kind},
                    {"config", cfg},
                    {"tensors", std::move(index)},
                    {"extra", extra.is_null() ? Json::object() : extra}};
  const std::string head = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path);
  out.write(kCheckpointMagic, 4);
  const std::uint32_t ver = kCheckpointVersion;
  out.write(reinterpret_cast<const char*>(&ver), sizeof ver);
  const std::uint64_t head_len = head.size();
  out.write(reinterpret_cast<const char*>(&head_len), sizeof head_len);
  out.write(head.data(), static_cast<std::streamsize>(head.size()));
  for (const auto& np : named) {
    const auto& v = np.tensor.data();
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(double)));
  }
  if (!out) throw IoError("short write on checkpoint " + path);
}

struct RawCheckpoint {
  std::string kind;
  ModelConfig config;
  Json extra;
  std::vector<std::pair<std::string, Shape>> index;
  std::ifstream payload;  // positioned at the first tensor
};

inline RawCheckpoint open_checkpoint(const std::string& path) {
  RawCheckpoint raw;
  raw.payload.open(path, std::ios::binary);
  if (!raw.payload) throw IoError("cannot open checkpoint " + path);
  char magic[4];
  raw.payload.read(magic, 4);
  if (!raw.payload || std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw IoError(path + ": not a checkpoint file (bad magic)");
  std::uint32_t ver = 0;
  raw.payload.read(reinterpret_cast<char*>(&ver), sizeof ver);
  if (!raw.payload || ver != kCheckpointVersion)
    throw IoError(path + ": unsupported checkpoint version " + std::to_string(ver));
  std::uint64_t head_len = 0;
  raw.payload.read(reinterpret_cast<char*>(&head_len), sizeof head_len);
  std::string head(head_len, '\0');
  raw.payload.read(head.data(), static_cast<std::streamsize>(head_len));
  if (!raw.payload) throw IoError(path + ": truncated checkpoint header");
  Json header = Json::parse(head, nullptr, false);
  if (header.is_discarded()) throw IoError(path + ": corrupt checkpoint header");
  raw.kind = header.at("kind").get<std::string>();
  raw.config = header.at("config").get<ModelConfig>();
  raw.extra = header.value("extra", Json::object());
  for (const auto& e : header.at("tensors"))
    raw.index.emplace_back(e.at("name").get<std::string>(), e.at("shape").get<Shape>());
  return raw;
}

// Fills the skeleton's parameters from the payload, insisting the on-disk
// index matches the expected names and shapes exactly.
inline void read_into(RawCheckpoint& raw, const std::string& path,
                      std::vector<NamedParam> expected) {
  if (raw.index.size() != expected.size())
    throw IoError(path + ": checkpoint holds " + std::to_string(raw.index.size()) +
                  " tensors, expected " + std::to_string(expected.size()));
  for (std::size_t i = 0; i < expected.size(); ++i) {
    if (raw.index[i].first != expected[i].name)
      throw IoError(path + ": tensor " + std::to_string(i) + " is \"" + raw.index[i].first +
                    "\", expected \"" + expected[i].name + "\"");
    if (raw.index[i].second != expected[i].tensor.shape())
      throw IoError(path + ": tensor \"" + expected[i].name + "\" has shape " +
                    shape_str(raw.index[i].second) + ", expected " +
                    shape_str(expected[i].tensor.shape()));
    auto& v = expected[i].tensor.raw_data();
    raw.payload.read(reinterpret_cast<char*>(v.data()),
                     static_cast<std::streamsize>(v.size() * sizeof(double)));
    if (!raw.payload) throw IoError(path + ": truncated checkpoint payload");
  }
}

inline Tensor zeros_param(Shape shape) { return Tensor::zeros(std::move(shape), true); }

inline TrunkParams trunk_skeleton(const ModelConfig& cfg) {
  TrunkParams t;
  t.config = cfg;
  t.embedding = zeros_param({cfg.vocab_size, cfg.d_model});
  for (long l = 0; l < cfg.n_layers; ++l) {
    LayerParams lp;
    lp.attn_norm = zeros_param({cfg.d_model});
    lp.wq = zeros_param({cfg.d_model, cfg.d_model});
    lp.wk = zeros_param({cfg.d_model, cfg.d_model});
    lp.wv = zeros_param({cfg.d_model, cfg.d_model});
    lp.wo = zeros_param({cfg.d_model, cfg.d_model});
    lp.ffn_norm = zeros_param({cfg.d_model});
    lp.w_gate = zeros_param({cfg.d_model, cfg.d_ff});
    lp.w_up = zeros_param({cfg.d_model, cfg.d_ff});
    lp.w_down = zeros_param({cfg.d_ff, cfg.d_model});
    t.layers.push_back(std::move(lp));
  }
  t.final_norm = zeros_param({cfg.d_model});
  return t;
}

}  // namespace detail

inline void save_lm_checkpoint(const std::string& path, const ModelParams& p,
                               const Json& extra = Json::object()) {
  detail::write_checkpoint(path, "lm", p.trunk.config, named_parameters(p), extra);
}

inline void save_rm_checkpoint(const std::string& path, const RewardModelParams& p,
                               const Json& extra = Json::object()) {
  detail::write_checkpoint(path, "rm", p.trunk.config, named_parameters(p), extra);
}

inline std::string checkpoint_kind(const std::string& path) {
  return detail::open_checkpoint(path).kind;
}

inline std::pair<ModelParams, Json> load_lm_checkpoint(const std::string& path) {
  auto raw = detail::open_checkpoint(path);
  if (raw.kind != "lm")
    throw IoError(path + ": expected an lm checkpoint, found kind \"" + raw.kind + "\"");
  raw.config.validate();
  ModelParams p;
  p.trunk = detail::trunk_skeleton(raw.config);
  p.unembedding = detail::zeros_param({raw.config.d_model, raw.config.vocab_size});
  detail::read_into(raw, path, named_parameters(p));
  return {std::move(p), std::move(raw.extra)};
}

inline std::pair<RewardModelParams, Json> load_rm_checkpoint(const std::string& path) {
  auto raw = detail::open_checkpoint(path);
  if (raw.kind != "rm")
    throw IoError(path + ": expected an rm checkpoint, found kind \"" + raw.kind + "\"");
  raw.config.validate();
  RewardModelParams p;
  p.trunk = detail::trunk_skeleton(raw.config);
  p.head = detail::zeros_param({raw.config.d_model, 1});
  detail::read_into(raw, path, named_parameters(p));
  return {std::move(p), std::move(raw.extra)};
}

}  // namespace tinyalign
