#pragma once

// Per-label attention over chunk tokens and biaffine max-pooled prediction.
//
//   alpha^h = softmax_t over real tokens of (V_G W_Q)^h . tanh(H W_K)^h
//   R       = concat_h alpha^h H^h           (head h reads its slice of H)
//   s_u     = R W V_G                        (one score per label and chunk)
//   yhat    = sigmoid(max_u s_u)

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "probias/autodiff.hpp"
#include "probias/corpus.hpp"

namespace probias {

struct LabelAttentionConfig {
  std::size_t dim = 64;
  std::size_t heads = 4;
};

class LabelAttention {
 public:
  LabelAttention(nn::ParameterStore& store, const LabelAttentionConfig& cfg, std::mt19937_64& rng) : cfg_(cfg) {
    if (cfg_.heads == 0 || cfg_.dim % cfg_.heads != 0) throw UsageError("dim must be divisible by heads");
    w_q_ = &store.add("label.w_q", nn::glorot_uniform(cfg_.dim, cfg_.dim, rng));
    w_k_ = &store.add("label.w_k", nn::glorot_uniform(cfg_.dim, cfg_.dim, rng));
    w_ = &store.add("label.biaffine", nn::glorot_uniform(cfg_.dim, cfg_.dim, rng));
  }

  const LabelAttentionConfig& config() const noexcept { return cfg_; }

  // Per-head (labels x tokens) attention weights; pad positions get exactly 0.
  std::vector<nn::Var> attention(nn::Tape& tape, nn::Var code_features, nn::Var tokens,
                                 std::span<const std::uint8_t> pad_mask) const {
    const std::size_t n = code_features.rows(), t = tokens.rows();
    if (pad_mask.size() != t) throw DataError("pad mask length does not match token count");
    std::vector<std::uint8_t> mask(n * t);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < t; ++j) mask[i * t + j] = pad_mask[j];
    const std::size_t dh = cfg_.dim / cfg_.heads;
    nn::Var q = nn::matmul(code_features, tape.param(*w_q_));
    nn::Var k = nn::tanh(nn::matmul(tokens, tape.param(*w_k_)));
    std::vector<nn::Var> alphas;
    for (std::size_t h = 0; h < cfg_.heads; ++h)
      alphas.push_back(nn::masked_softmax_rows(nn::matmul_nt(nn::slice_cols(q, h * dh, dh), nn::slice_cols(k, h * dh, dh)), mask));
    return alphas;
  }

  // (labels x dim) code-specific chunk representations.
  nn::Var chunk_representation(const std::vector<nn::Var>& alphas, nn::Var tokens) const {
    const std::size_t dh = cfg_.dim / cfg_.heads;
    std::vector<nn::Var> ctx;
    for (std::size_t h = 0; h < alphas.size(); ++h) ctx.push_back(nn::matmul(alphas[h], nn::slice_cols(tokens, h * dh, dh)));
    return nn::concat_cols(ctx);
  }

  // (1 x labels) biaffine score per label for one chunk.
  nn::Var chunk_scores(nn::Tape& tape, nn::Var code_features, nn::Var tokens, std::span<const std::uint8_t> pad_mask) const {
    nn::Var r = chunk_representation(attention(tape, code_features, tokens, pad_mask), tokens);
    return nn::transpose(nn::rowwise_dot(nn::matmul(r, tape.param(*w_)), code_features));
  }

  // (1 x labels) probabilities from the max over chunk scores.
  nn::Var predict(nn::Tape& tape, nn::Var code_features, const std::vector<nn::Var>& chunk_tokens,
                  const std::vector<std::span<const std::uint8_t>>& pad_masks) const {
    if (chunk_tokens.empty()) throw DataError("prediction needs at least one chunk");
    std::vector<nn::Var> scores;
    for (std::size_t u = 0; u < chunk_tokens.size(); ++u)
      scores.push_back(chunk_scores(tape, code_features, chunk_tokens[u], pad_masks[u]));
    return nn::sigmoid(nn::max_over_rows(nn::concat_rows(scores)));
  }

  nn::Parameter& w_q() const { return *w_q_; }
  nn::Parameter& w_k() const { return *w_k_; }
  nn::Parameter& biaffine() const { return *w_; }

 private:
  LabelAttentionConfig cfg_;
  nn::Parameter* w_q_ = nullptr;
  nn::Parameter* w_k_ = nullptr;
  nn::Parameter* w_ = nullptr;
};

}  // namespace probias
