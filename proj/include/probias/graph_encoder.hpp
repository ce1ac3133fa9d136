#pragma once

// Graph encoder over label features.
//
// For each query label i and key label j on an edge, head k scores
//   (V_i W_R^k) . (V_j W_C^k) / sqrt(d_k) + c^k[phi(i, j)]
// and normalizes over the edge set of i only. Heads are concatenated and mixed
// by W_att. Query rows without edges skip attention; every row then goes
// through the same dropout / residual / layer norm / feed-forward refinement.
//
// Which labels query which keys depends on the ablation mode:
//   MI      every label attends to every label it co-occurs with; no bias
//   DI      rare labels attend to co-occurring common labels; no bias
//   CE      DI plus the learnable bias indexed by phi
//   CE_des  CE over description embeddings instead of name embeddings

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "probias/autodiff.hpp"
#include "probias/bipartite_graph.hpp"

namespace probias {

enum class ModelMode { kMI, kDI, kCE, kCEDes };

inline const char* mode_name(ModelMode m) {
  switch (m) {
    case ModelMode::kMI: return "MI";
    case ModelMode::kDI: return "DI";
    case ModelMode::kCE: return "CE";
    case ModelMode::kCEDes: return "CE_des";
  }
  return "?";
}

inline ModelMode parse_mode(std::string_view s) {
  if (s == "MI") return ModelMode::kMI;
  if (s == "DI") return ModelMode::kDI;
  if (s == "CE") return ModelMode::kCE;
  if (s == "CE_des" || s == "CE+des") return ModelMode::kCEDes;
  throw UsageError("unknown mode '" + std::string(s) + "' (expected MI, DI, CE or CE_des)");
}

inline bool mode_uses_bias(ModelMode m) { return m == ModelMode::kCE || m == ModelMode::kCEDes; }

// Query/key label rows of the N x d feature matrix plus the (queries x keys)
// edge mask and bin indices. Queries never have an empty mask row.
struct AttentionPlan {
  std::vector<std::size_t> query_rows;
  std::vector<std::size_t> key_rows;
  std::vector<std::uint8_t> mask;
  std::vector<std::uint32_t> phi;
  bool use_bias = false;
};

// Directed plan: non-isolated rare labels query common labels.
inline AttentionPlan directed_plan(const BipartiteGraph& g, bool use_bias) {
  AttentionPlan plan;
  plan.use_bias = use_bias;
  const auto& part = g.partition();
  for (LabelId c : part.common_ids) plan.key_rows.push_back(c);
  for (std::size_t i = 0; i < g.n_rare(); ++i) {
    if (g.isolated(i)) continue;
    plan.query_rows.push_back(part.rare_ids[i]);
    for (std::size_t j = 0; j < g.n_common(); ++j) {
      plan.mask.push_back(g.edge(i, j) ? 1 : 0);
      plan.phi.push_back(g.phi()(i, j));
    }
  }
  return plan;
}

// Undirected plan over a symmetric N x N mask.
inline AttentionPlan mutual_plan(const std::vector<std::uint8_t>& mutual_mask, std::size_t n_labels) {
  if (mutual_mask.size() != n_labels * n_labels) throw DataError("mutual mask shape mismatch");
  AttentionPlan plan;
  for (std::size_t j = 0; j < n_labels; ++j) plan.key_rows.push_back(j);
  for (std::size_t i = 0; i < n_labels; ++i) {
    bool any = false;
    for (std::size_t j = 0; j < n_labels; ++j) any = any || mutual_mask[i * n_labels + j];
    if (!any) continue;
    plan.query_rows.push_back(i);
    plan.mask.insert(plan.mask.end(), mutual_mask.begin() + static_cast<std::ptrdiff_t>(i * n_labels),
                     mutual_mask.begin() + static_cast<std::ptrdiff_t>((i + 1) * n_labels));
  }
  plan.phi.assign(plan.mask.size(), 0);
  return plan;
}

struct GraphEncoderConfig {
  std::size_t dim = 64;
  std::size_t attn_dim = 64;
  std::size_t heads = 4;
  std::size_t bins = 10;
  std::size_t layers = 1;
  std::size_t ffn_hidden = 64;
  double dropout = 0.1;
};

class GraphEncoder {
 public:
  struct Layer {
    nn::Parameter *w_r, *w_c, *w_v, *w_att, *bias;
    nn::Parameter *ln1_g, *ln1_b, *w1, *b1, *w2, *b2, *ln2_g, *ln2_b;
  };

  GraphEncoder(nn::ParameterStore& store, const GraphEncoderConfig& cfg, std::mt19937_64& rng) : cfg_(cfg) {
    if (cfg_.heads == 0 || cfg_.attn_dim % cfg_.heads != 0) throw UsageError("attn_dim must be divisible by heads");
    if (cfg_.bins == 0) throw UsageError("bin count must be >= 1");
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
      const std::string p = "graph.layer" + std::to_string(l) + ".";
      Layer ly;
      ly.w_r = &store.add(p + "w_r", nn::glorot_uniform(cfg_.dim, cfg_.attn_dim, rng));
      ly.w_c = &store.add(p + "w_c", nn::glorot_uniform(cfg_.dim, cfg_.attn_dim, rng));
      ly.w_v = &store.add(p + "w_v", nn::glorot_uniform(cfg_.dim, cfg_.attn_dim, rng));
      ly.w_att = &store.add(p + "w_att", nn::glorot_uniform(cfg_.attn_dim, cfg_.dim, rng));
      ly.bias = &store.add(p + "cooc_bias", nn::Tensor(cfg_.heads, cfg_.bins + 1, 0.0));
      ly.ln1_g = &store.add(p + "ln1.gain", nn::Tensor(1, cfg_.dim, 1.0));
      ly.ln1_b = &store.add(p + "ln1.shift", nn::Tensor(1, cfg_.dim, 0.0));
      ly.w1 = &store.add(p + "ffn.w1", nn::glorot_uniform(cfg_.dim, cfg_.ffn_hidden, rng));
      ly.b1 = &store.add(p + "ffn.b1", nn::Tensor(1, cfg_.ffn_hidden, 0.0));
      ly.w2 = &store.add(p + "ffn.w2", nn::glorot_uniform(cfg_.ffn_hidden, cfg_.dim, rng));
      ly.b2 = &store.add(p + "ffn.b2", nn::Tensor(1, cfg_.dim, 0.0));
      ly.ln2_g = &store.add(p + "ln2.gain", nn::Tensor(1, cfg_.dim, 1.0));
      ly.ln2_b = &store.add(p + "ln2.shift", nn::Tensor(1, cfg_.dim, 0.0));
      layers_.push_back(ly);
    }
  }

  const GraphEncoderConfig& config() const noexcept { return cfg_; }
  const Layer& layer(std::size_t l) const { return layers_.at(l); }

  // Attention weights of head `head` (queries x keys).
  nn::Var attention_weights(nn::Tape& tape, nn::Var queries, nn::Var keys, const AttentionPlan& plan, std::size_t layer,
                            std::size_t head) const {
    const Layer& ly = layers_.at(layer);
    const std::size_t dk = cfg_.attn_dim / cfg_.heads;
    nn::Var q = nn::slice_cols(nn::matmul(queries, tape.param(*ly.w_r)), head * dk, dk);
    nn::Var k = nn::slice_cols(nn::matmul(keys, tape.param(*ly.w_c)), head * dk, dk);
    return head_weights(tape, ly, q, k, plan, head);
  }

  // (queries x dim) attention output for the plan's query rows.
  nn::Var cooc_attention(nn::Tape& tape, nn::Var queries, nn::Var keys, const AttentionPlan& plan,
                         std::size_t layer) const {
    const Layer& ly = layers_.at(layer);
    const std::size_t dk = cfg_.attn_dim / cfg_.heads;
    nn::Var q = nn::matmul(queries, tape.param(*ly.w_r));
    nn::Var k = nn::matmul(keys, tape.param(*ly.w_c));
    nn::Var v = nn::matmul(keys, tape.param(*ly.w_v));
    std::vector<nn::Var> heads;
    for (std::size_t h = 0; h < cfg_.heads; ++h) {
      nn::Var a = head_weights(tape, ly, nn::slice_cols(q, h * dk, dk), nn::slice_cols(k, h * dk, dk), plan, h);
      heads.push_back(nn::matmul(a, nn::slice_cols(v, h * dk, dk)));
    }
    return nn::matmul(nn::concat_cols(heads), tape.param(*ly.w_att));
  }

  // N x dim refined label features.
  nn::Var forward(nn::Tape& tape, nn::Var features, const AttentionPlan& plan) const {
    nn::Var x = features;
    const std::size_t n = features.rows();
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const Layer& ly = layers_[l];
      nn::Var residual = x;
      if (!plan.query_rows.empty()) {
        nn::Var att = cooc_attention(tape, nn::gather_rows(x, plan.query_rows), nn::gather_rows(x, plan.key_rows), plan, l);
        residual = nn::add(x, nn::dropout(nn::scatter_rows(att, plan.query_rows, n), cfg_.dropout));
      }
      nn::Var h = nn::layer_norm_rows(residual, tape.param(*ly.ln1_g), tape.param(*ly.ln1_b));
      nn::Var f = nn::gelu(nn::add_row(nn::matmul(h, tape.param(*ly.w1)), tape.param(*ly.b1)));
      f = nn::add_row(nn::matmul(f, tape.param(*ly.w2)), tape.param(*ly.b2));
      x = nn::layer_norm_rows(nn::add(h, nn::dropout(f, cfg_.dropout)), tape.param(*ly.ln2_g), tape.param(*ly.ln2_b));
    }
    return x;
  }

 private:
  nn::Var head_weights(nn::Tape& tape, const Layer& ly, nn::Var q, nn::Var k, const AttentionPlan& plan,
                       std::size_t head) const {
    const std::size_t dk = cfg_.attn_dim / cfg_.heads;
    nn::Var logits = nn::scale(nn::matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(dk)));
    if (plan.use_bias) {
      nn::Var table = nn::gather_rows(tape.param(*ly.bias), {head});
      logits = nn::add(logits, nn::gather_table(table, plan.phi, q.rows(), k.rows()));
    }
    return nn::masked_softmax_rows(logits, plan.mask);
  }

  GraphEncoderConfig cfg_;
  std::vector<Layer> layers_;
};

}  // namespace probias
