#pragma once

// The full classifier: graph encoder over frozen label features, chunk
// encoder, and per-label attention head.

#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <vector>

#include "probias/autodiff.hpp"
#include "probias/bipartite_graph.hpp"
#include "probias/code_embedder.hpp"
#include "probias/cooc_stats.hpp"
#include "probias/corpus.hpp"
#include "probias/doc_encoder.hpp"
#include "probias/graph_encoder.hpp"
#include "probias/label_attention.hpp"
#include "probias/metrics.hpp"

namespace probias {

struct ModelConfig {
  std::size_t dim = 64;
  std::size_t heads = 4;
  std::size_t attn_dim = 0;    // 0: same as dim
  std::size_t ffn_hidden = 0;  // 0: same as dim
  std::size_t bins = 10;
  std::size_t graph_layers = 1;
  std::size_t encoder_blocks = 1;
  double dropout = 0.1;
  std::size_t chunk_len = 64;
  std::size_t overlap = 31;
  std::size_t max_tokens = 512;
  bool position_signal = true;
  ModelMode mode = ModelMode::kCE;
  std::uint64_t embed_seed = 0x5eed;  // frozen description-embedding table

  std::size_t resolved_attn_dim() const { return attn_dim == 0 ? dim : attn_dim; }
  std::size_t resolved_ffn_hidden() const { return ffn_hidden == 0 ? dim : ffn_hidden; }
};

// Everything derived from the training split that the model is built over.
struct GraphInputs {
  LabelStats stats;
  BipartiteGraph graph;
  std::vector<std::uint8_t> mutual_mask;
  nn::Tensor label_features;  // N x dim, frozen
};

inline std::vector<CodeDescription> stub_descriptions(const std::vector<LabelInfo>& labels) {
  std::vector<CodeDescription> out;
  for (const auto& l : labels) out.push_back({l.code, stub_description(l.code, l.name.empty() ? l.code : l.name), DescriptionSource::kStub});
  return out;
}

// Training statistics, graph, and initial label features. Description-based
// features are used in CE_des mode only; other modes embed the bare names.
inline GraphInputs prepare_graph_inputs(const Corpus& corpus, const ModelConfig& cfg, std::size_t rare_threshold,
                                        const std::vector<CodeDescription>& descriptions = {}) {
  LabelStats stats = count_label_stats(corpus.train, corpus.label_count());
  BipartiteGraph graph = build_graph_from_stats(stats, rare_threshold, cfg.bins);
  auto mutual = mutual_cooccurrence_mask(stats);
  HashEmbedder embedder(cfg.dim, cfg.embed_seed);
  nn::Tensor features;
  if (cfg.mode == ModelMode::kCEDes) {
    features = embed_labels(corpus.labels, descriptions.empty() ? stub_descriptions(corpus.labels) : descriptions, embedder);
  } else {
    features = embed_labels(corpus.labels, {}, embedder);
  }
  return GraphInputs{std::move(stats), std::move(graph), std::move(mutual), std::move(features)};
}

class Model {
 public:
  Model(const ModelConfig& cfg, std::size_t vocab_size, GraphInputs inputs, std::uint64_t seed)
      : cfg_(cfg), inputs_(std::move(inputs)) {
    const std::size_t n = inputs_.label_features.rows();
    if (inputs_.label_features.cols() != cfg_.dim) throw DataError("label feature width does not match model dim");
    if (inputs_.graph.partition().label_count() != n) throw DataError("graph and label features disagree on label count");
    plan_ = cfg_.mode == ModelMode::kMI ? mutual_plan(inputs_.mutual_mask, n)
                                        : directed_plan(inputs_.graph, mode_uses_bias(cfg_.mode));
    std::mt19937_64 rng(seed);
    graph_ = std::make_unique<GraphEncoder>(
        params_, GraphEncoderConfig{cfg_.dim, cfg_.resolved_attn_dim(), cfg_.heads, cfg_.bins, cfg_.graph_layers,
                                    cfg_.resolved_ffn_hidden(), cfg_.dropout},
        rng);
    doc_ = std::make_unique<DocEncoder>(
        params_, DocEncoderConfig{vocab_size, cfg_.dim, cfg_.heads, cfg_.encoder_blocks, cfg_.resolved_ffn_hidden(),
                                  cfg_.chunk_len, cfg_.position_signal, cfg_.dropout},
        rng);
    head_ = std::make_unique<LabelAttention>(params_, LabelAttentionConfig{cfg_.dim, cfg_.heads}, rng);
  }
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const noexcept { return cfg_; }
  nn::ParameterStore& params() noexcept { return params_; }
  const nn::ParameterStore& params() const noexcept { return params_; }
  const GraphInputs& inputs() const noexcept { return inputs_; }
  const AttentionPlan& plan() const noexcept { return plan_; }
  const GraphEncoder& graph_encoder() const noexcept { return *graph_; }
  const DocEncoder& doc_encoder() const noexcept { return *doc_; }
  const LabelAttention& label_attention() const noexcept { return *head_; }
  std::size_t label_count() const noexcept { return inputs_.label_features.rows(); }

  // N x dim refined label features.
  nn::Var code_features(nn::Tape& tape) const {
    return graph_->forward(tape, tape.constant(inputs_.label_features), plan_);
  }

  std::vector<Chunk> chunks(const Document& doc) const {
    return chunk_document(doc, cfg_.chunk_len, cfg_.overlap, cfg_.max_tokens);
  }

  // 1 x N probabilities for one document given refined label features.
  nn::Var predict(nn::Tape& tape, nn::Var code_features, const Document& doc) const {
    const auto cs = chunks(doc);
    std::vector<nn::Var> tokens;
    std::vector<std::span<const std::uint8_t>> masks;
    for (const Chunk& c : cs) {
      tokens.push_back(doc_->encode(tape, c));
      masks.emplace_back(c.pad_mask);
    }
    return head_->predict(tape, code_features, tokens, masks);
  }

  // Evaluation-mode probabilities for a list of documents.
  ScoreMatrix predict_all(std::span<const Document> docs) const {
    nn::Tape graph_tape(false);
    const nn::Tensor vg = code_features(graph_tape).value();
    ScoreMatrix out(docs.size(), label_count());
    for (std::size_t d = 0; d < docs.size(); ++d) {
      nn::Tape tape(false);
      const nn::Tensor& p = predict(tape, tape.constant(vg), docs[d]).value();
      std::copy(p.data().begin(), p.data().end(), out.values.begin() + static_cast<std::ptrdiff_t>(d * label_count()));
    }
    return out;
  }

 private:
  ModelConfig cfg_;
  GraphInputs inputs_;
  AttentionPlan plan_;
  nn::ParameterStore params_;
  std::unique_ptr<GraphEncoder> graph_;
  std::unique_ptr<DocEncoder> doc_;
  std::unique_ptr<LabelAttention> head_;
};

inline std::vector<double> label_targets(const Document& doc, std::size_t n_labels) {
  std::vector<double> y(n_labels, 0.0);
  for (LabelId l : doc.label_ids) y.at(l) = 1.0;
  return y;
}

}  // namespace probias
