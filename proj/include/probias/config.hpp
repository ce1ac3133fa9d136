#pragma once

// Run configuration file (JSON). Every section and key is optional; missing
// keys keep their defaults.
//
//   {
//     "model": {"dim": 64, "heads": 4, "attn_dim": 0, "ffn_hidden": 0, "bins": 10,
//               "graph_layers": 1, "encoder_blocks": 1, "dropout": 0.1,
//               "chunk_len": 64, "overlap": 31, "max_tokens": 512,
//               "position_signal": true, "mode": "CE", "embed_seed": 24301},
//     "train": {"epochs": 15, "batch_size": 1, "accumulation": 16, "lr": 0.001,
//               "weight_decay": 0.01, "rare_threshold": 10, "patience": 3,
//               "threshold": 0.5, "seed": 0},
//     "llm":   {"endpoint": "...", "model": "...", "temperature": 0.2},
//     "synthetic": { ...synthetic spec keys... }
//   }

#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "probias/code_embedder.hpp"
#include "probias/io.hpp"
#include "probias/synthetic.hpp"
#include "probias/train.hpp"

namespace probias {

struct RunConfig {
  TrainConfig train;
  LlmClientConfig llm;
  std::optional<SyntheticSpec> synthetic;
};

namespace detail {

template <class T>
void read_key(const nlohmann::json& obj, const char* key, T& out) {
  if (obj.contains(key)) out = obj.at(key).get<T>();
}

inline void check_keys(const nlohmann::json& obj, std::initializer_list<const char*> allowed, const std::string& section) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || it.key() == a;
    if (!ok) throw DataError("config: unknown key '" + section + "." + it.key() + "'");
  }
}

}  // namespace detail

inline nlohmann::json to_json(const RunConfig& rc) {
  const ModelConfig& m = rc.train.model;
  const TrainConfig& t = rc.train;
  nlohmann::json j = {
      {"model",
       {{"dim", m.dim}, {"heads", m.heads}, {"attn_dim", m.attn_dim}, {"ffn_hidden", m.ffn_hidden}, {"bins", m.bins},
        {"graph_layers", m.graph_layers}, {"encoder_blocks", m.encoder_blocks}, {"dropout", m.dropout},
        {"chunk_len", m.chunk_len}, {"overlap", m.overlap}, {"max_tokens", m.max_tokens},
        {"position_signal", m.position_signal}, {"mode", mode_name(m.mode)}, {"embed_seed", m.embed_seed}}},
      {"train",
       {{"epochs", t.epochs}, {"batch_size", t.batch_size}, {"accumulation", t.accumulation}, {"lr", t.lr},
        {"weight_decay", t.weight_decay}, {"rare_threshold", t.rare_threshold}, {"patience", t.patience},
        {"threshold", t.threshold}, {"seed", t.seed}}},
      {"llm", {{"endpoint", rc.llm.endpoint}, {"model", rc.llm.model}, {"temperature", rc.llm.temperature}}}};
  if (rc.synthetic) j["synthetic"] = to_json(*rc.synthetic);
  return j;
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig rc;
  try {
    detail::check_keys(j, {"model", "train", "llm", "synthetic"}, "");
    if (j.contains("model")) {
      const auto& o = j["model"];
      detail::check_keys(o, {"dim", "heads", "attn_dim", "ffn_hidden", "bins", "graph_layers", "encoder_blocks", "dropout",
                             "chunk_len", "overlap", "max_tokens", "position_signal", "mode", "embed_seed"},
                         "model");
      ModelConfig& m = rc.train.model;
      detail::read_key(o, "dim", m.dim);
      detail::read_key(o, "heads", m.heads);
      detail::read_key(o, "attn_dim", m.attn_dim);
      detail::read_key(o, "ffn_hidden", m.ffn_hidden);
      detail::read_key(o, "bins", m.bins);
      detail::read_key(o, "graph_layers", m.graph_layers);
      detail::read_key(o, "encoder_blocks", m.encoder_blocks);
      detail::read_key(o, "dropout", m.dropout);
      detail::read_key(o, "chunk_len", m.chunk_len);
      detail::read_key(o, "overlap", m.overlap);
      detail::read_key(o, "max_tokens", m.max_tokens);
      detail::read_key(o, "position_signal", m.position_signal);
      detail::read_key(o, "embed_seed", m.embed_seed);
      if (o.contains("mode")) m.mode = parse_mode(o["mode"].get<std::string>());
    }
    if (j.contains("train")) {
      const auto& o = j["train"];
      detail::check_keys(o, {"epochs", "batch_size", "accumulation", "lr", "weight_decay", "rare_threshold", "patience",
                             "threshold", "seed"},
                         "train");
      TrainConfig& t = rc.train;
      detail::read_key(o, "epochs", t.epochs);
      detail::read_key(o, "batch_size", t.batch_size);
      detail::read_key(o, "accumulation", t.accumulation);
      detail::read_key(o, "lr", t.lr);
      detail::read_key(o, "weight_decay", t.weight_decay);
      detail::read_key(o, "rare_threshold", t.rare_threshold);
      detail::read_key(o, "patience", t.patience);
      detail::read_key(o, "threshold", t.threshold);
      detail::read_key(o, "seed", t.seed);
    }
    if (j.contains("llm")) {
      const auto& o = j["llm"];
      detail::check_keys(o, {"endpoint", "model", "temperature"}, "llm");
      detail::read_key(o, "endpoint", rc.llm.endpoint);
      detail::read_key(o, "model", rc.llm.model);
      detail::read_key(o, "temperature", rc.llm.temperature);
    }
    if (j.contains("synthetic")) rc.synthetic = synthetic_spec_from_json(j["synthetic"]);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("config: ") + e.what());
  }
  return rc;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  try {
    return run_config_from_json(nlohmann::json::parse(io::read_file(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

inline void validate_train_config(const TrainConfig& t) {
  const ModelConfig& m = t.model;
  auto fail = [](const std::string& s) { throw UsageError("config: " + s); };
  if (m.dim == 0 || m.heads == 0 || m.dim % m.heads != 0) fail("model.dim must be a positive multiple of model.heads");
  if (m.resolved_attn_dim() % m.heads != 0) fail("model.attn_dim must be a multiple of model.heads");
  if (m.bins == 0) fail("model.bins must be >= 1");
  if (m.graph_layers == 0) fail("model.graph_layers must be >= 1");
  if (m.chunk_len == 0 || m.overlap >= m.chunk_len) fail("model.overlap must be smaller than model.chunk_len");
  if (!(m.dropout >= 0.0 && m.dropout < 1.0)) fail("model.dropout must lie in [0, 1)");
  if (t.batch_size == 0 || t.accumulation == 0) fail("train.batch_size and train.accumulation must be positive");
  if (!(t.lr > 0.0)) fail("train.lr must be positive");
  if (t.rare_threshold == 0) fail("train.rare_threshold must be >= 1");
  if (t.patience == 0) fail("train.patience must be >= 1");
  if (!(t.threshold > 0.0 && t.threshold < 1.0)) fail("train.threshold must lie in (0, 1)");
}

}  // namespace probias
