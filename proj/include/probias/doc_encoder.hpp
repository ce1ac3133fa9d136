#pragma once

// Chunk encoder: trainable token embeddings plus a sinusoidal position signal,
// followed by `blocks` transformer encoder blocks whose attention ignores pad
// positions.

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "probias/autodiff.hpp"
#include "probias/corpus.hpp"

namespace probias {

struct DocEncoderConfig {
  std::size_t vocab_size = 0;
  std::size_t dim = 64;
  std::size_t heads = 4;
  std::size_t blocks = 1;
  std::size_t ffn_hidden = 64;
  std::size_t chunk_len = 64;
  bool position_signal = true;
  double dropout = 0.1;
};

inline nn::Tensor sinusoidal_positions(std::size_t length, std::size_t dim) {
  nn::Tensor pe(length, dim);
  for (std::size_t t = 0; t < length; ++t)
    for (std::size_t i = 0; i < dim; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(i - i % 2) / static_cast<double>(dim));
      pe(t, i) = (i % 2 == 0) ? std::sin(static_cast<double>(t) * freq) : std::cos(static_cast<double>(t) * freq);
    }
  return pe;
}

class DocEncoder {
 public:
  DocEncoder(nn::ParameterStore& store, const DocEncoderConfig& cfg, std::mt19937_64& rng) : cfg_(cfg) {
    if (cfg_.vocab_size < 2) throw UsageError("document encoder needs a vocabulary");
    if (cfg_.heads == 0 || cfg_.dim % cfg_.heads != 0) throw UsageError("dim must be divisible by heads");
    // Unit-scale token vectors keep token identity visible next to the position signal.
    nn::Tensor table(cfg_.vocab_size, cfg_.dim);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (auto& v : table.storage()) v = u(rng);
    for (std::size_t j = 0; j < cfg_.dim; ++j) table(kPadId, j) = 0.0;
    embed_ = &store.add("doc.embed", std::move(table));
    pe_ = sinusoidal_positions(cfg_.chunk_len, cfg_.dim);
    for (std::size_t b = 0; b < cfg_.blocks; ++b) {
      const std::string p = "doc.block" + std::to_string(b) + ".";
      Block blk;
      blk.wq = &store.add(p + "wq", nn::glorot_uniform(cfg_.dim, cfg_.dim, rng));
      blk.wk = &store.add(p + "wk", nn::glorot_uniform(cfg_.dim, cfg_.dim, rng));
      blk.wv = &store.add(p + "wv", nn::glorot_uniform(cfg_.dim, cfg_.dim, rng));
      blk.wo = &store.add(p + "wo", nn::glorot_uniform(cfg_.dim, cfg_.dim, rng));
      blk.ln1_g = &store.add(p + "ln1.gain", nn::Tensor(1, cfg_.dim, 1.0));
      blk.ln1_b = &store.add(p + "ln1.shift", nn::Tensor(1, cfg_.dim, 0.0));
      blk.w1 = &store.add(p + "ffn.w1", nn::glorot_uniform(cfg_.dim, cfg_.ffn_hidden, rng));
      blk.b1 = &store.add(p + "ffn.b1", nn::Tensor(1, cfg_.ffn_hidden, 0.0));
      blk.w2 = &store.add(p + "ffn.w2", nn::glorot_uniform(cfg_.ffn_hidden, cfg_.dim, rng));
      blk.b2 = &store.add(p + "ffn.b2", nn::Tensor(1, cfg_.dim, 0.0));
      blk.ln2_g = &store.add(p + "ln2.gain", nn::Tensor(1, cfg_.dim, 1.0));
      blk.ln2_b = &store.add(p + "ln2.shift", nn::Tensor(1, cfg_.dim, 0.0));
      blocks_.push_back(blk);
    }
  }

  const DocEncoderConfig& config() const noexcept { return cfg_; }

  // (chunk_len x dim) token representations.
  nn::Var encode(nn::Tape& tape, const Chunk& chunk) const {
    std::vector<std::size_t> ids(chunk.token_ids.begin(), chunk.token_ids.end());
    for (std::size_t id : ids)
      if (id >= cfg_.vocab_size) throw DataError("token id " + std::to_string(id) + " out of range in chunk of " + chunk.doc_id);
    nn::Var x = nn::gather_rows(tape.param(*embed_), std::move(ids));
    if (cfg_.position_signal)
      x = nn::add(x, tape.constant(chunk.token_ids.size() == pe_.rows() ? pe_ : sinusoidal_positions(chunk.token_ids.size(), cfg_.dim)));
    if (blocks_.empty()) return x;

    const std::size_t t = chunk.token_ids.size();
    std::vector<std::uint8_t> key_mask(t * t);
    for (std::size_t i = 0; i < t; ++i)
      for (std::size_t j = 0; j < t; ++j) key_mask[i * t + j] = chunk.pad_mask[j];
    for (const Block& blk : blocks_) x = block_forward(tape, blk, x, key_mask);
    return x;
  }

 private:
  struct Block {
    nn::Parameter *wq, *wk, *wv, *wo, *ln1_g, *ln1_b, *w1, *b1, *w2, *b2, *ln2_g, *ln2_b;
  };

  nn::Var block_forward(nn::Tape& tape, const Block& blk, nn::Var x, const std::vector<std::uint8_t>& key_mask) const {
    const std::size_t dh = cfg_.dim / cfg_.heads;
    const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
    nn::Var q = nn::matmul(x, tape.param(*blk.wq));
    nn::Var k = nn::matmul(x, tape.param(*blk.wk));
    nn::Var v = nn::matmul(x, tape.param(*blk.wv));
    std::vector<nn::Var> heads;
    for (std::size_t h = 0; h < cfg_.heads; ++h) {
      nn::Var qh = nn::slice_cols(q, h * dh, dh);
      nn::Var kh = nn::slice_cols(k, h * dh, dh);
      nn::Var vh = nn::slice_cols(v, h * dh, dh);
      nn::Var a = nn::masked_softmax_rows(nn::scale(nn::matmul_nt(qh, kh), inv), key_mask);
      heads.push_back(nn::matmul(a, vh));
    }
    nn::Var attn = nn::matmul(nn::concat_cols(heads), tape.param(*blk.wo));
    nn::Var h1 = nn::layer_norm_rows(nn::add(x, nn::dropout(attn, cfg_.dropout)), tape.param(*blk.ln1_g),
                                     tape.param(*blk.ln1_b));
    nn::Var f = nn::gelu(nn::add_row(nn::matmul(h1, tape.param(*blk.w1)), tape.param(*blk.b1)));
    f = nn::add_row(nn::matmul(f, tape.param(*blk.w2)), tape.param(*blk.b2));
    return nn::layer_norm_rows(nn::add(h1, nn::dropout(f, cfg_.dropout)), tape.param(*blk.ln2_g), tape.param(*blk.ln2_b));
  }

  DocEncoderConfig cfg_;
  nn::Parameter* embed_ = nullptr;
  std::vector<Block> blocks_;
  nn::Tensor pe_;
};

}  // namespace probias
