#pragma once

// Finite-difference check of one graph-encoder layer plus the label-attention
// head on a small random instance: 3 rare and 4 common labels, 2 chunks.

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "probias/gradcheck.hpp"
#include "probias/graph_encoder.hpp"
#include "probias/label_attention.hpp"

namespace probias {

struct SelfCheckConfig {
  std::size_t dim = 8;
  std::size_t heads = 2;
  std::size_t bins = 3;
  std::size_t n_rare = 3;
  std::size_t n_common = 4;
  std::size_t chunks = 2;
  std::size_t chunk_len = 5;
  std::uint64_t seed = 0;
};

inline nn::GradCheckReport model_gradient_check(const SelfCheckConfig& cfg) {
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  auto random = [&](std::size_t r, std::size_t c) {
    nn::Tensor t(r, c);
    for (auto& v : t.storage()) v = u(rng);
    return t;
  };

  nn::ParameterStore store;
  const GraphEncoder graph(store, GraphEncoderConfig{cfg.dim, cfg.dim, cfg.heads, cfg.bins, 1, cfg.dim, 0.0}, rng);
  const LabelAttention head(store, LabelAttentionConfig{cfg.dim, cfg.heads}, rng);
  // Nonzero bias table and layer-norm affine terms so their gradients are exercised.
  for (auto& p : store)
    for (auto& v : p.value.storage()) v += u(rng);

  const std::size_t n = cfg.n_common + cfg.n_rare;
  const nn::Tensor features = random(n, cfg.dim);
  AttentionPlan plan;
  plan.use_bias = true;
  for (std::size_t j = 0; j < cfg.n_common; ++j) plan.key_rows.push_back(j);
  std::uniform_int_distribution<std::uint32_t> bin(0, static_cast<std::uint32_t>(cfg.bins));
  for (std::size_t i = 0; i < cfg.n_rare; ++i) {
    plan.query_rows.push_back(cfg.n_common + i);
    for (std::size_t j = 0; j < cfg.n_common; ++j) {
      plan.mask.push_back((i + j) % 3 != 0 ? 1 : 0);
      plan.phi.push_back(bin(rng));
    }
  }

  std::vector<nn::Tensor> chunk_tokens;
  std::vector<std::vector<std::uint8_t>> pads;
  for (std::size_t c = 0; c < cfg.chunks; ++c) {
    chunk_tokens.push_back(random(cfg.chunk_len, cfg.dim));
    // The last chunk ends in one pad position.
    std::vector<std::uint8_t> pad;
    for (std::size_t t = 0; t < cfg.chunk_len; ++t) pad.push_back(c + 1 == cfg.chunks && t > 0 && t + 1 == cfg.chunk_len ? 0 : 1);
    pads.push_back(std::move(pad));
  }
  std::vector<double> gold(n);
  for (std::size_t l = 0; l < n; ++l) gold[l] = l % 2 == 0 ? 1.0 : 0.0;

  return nn::finite_diff_check(store, [&](nn::Tape& tape) {
    nn::Var vg = graph.forward(tape, tape.constant(features), plan);
    std::vector<nn::Var> toks;
    std::vector<std::span<const std::uint8_t>> masks;
    for (std::size_t c = 0; c < chunk_tokens.size(); ++c) {
      toks.push_back(tape.constant(chunk_tokens[c]));
      masks.emplace_back(pads[c]);
    }
    return nn::bce_loss(head.predict(tape, vg, toks, masks), gold);
  });
}

}  // namespace probias
