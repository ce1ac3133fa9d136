#pragma once

// Training with BCE + AdamW (linear decay), effective batches of
// batch_size * accumulation documents, and early stopping on dev macro F1.
//
// All documents of one optimizer step share a single graph-encoder forward: the
// parameters cannot change inside the step, so the summed gradient equals the
// per-document accumulation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "probias/checkpoint.hpp"
#include "probias/error.hpp"
#include "probias/metrics.hpp"
#include "probias/model.hpp"
#include "probias/optim.hpp"

namespace probias {

struct TrainConfig {
  ModelConfig model;
  std::size_t epochs = 15;
  std::size_t batch_size = 1;
  std::size_t accumulation = 16;
  double lr = 1e-3;
  double weight_decay = 0.01;
  std::size_t rare_threshold = 10;
  std::size_t patience = 3;
  double threshold = 0.5;
  std::uint64_t seed = 0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double lr = 0.0;  // learning rate of the last step in the epoch
  Metrics dev;
};

struct TrainResult {
  nn::ParameterStore best_params;
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;  // 0: no epoch ran, initial parameters
};

inline nlohmann::json to_json(const Metrics& m) {
  return {{"macro_auc", m.macro_auc}, {"micro_auc", m.micro_auc}, {"macro_f1", m.macro_f1},
          {"micro_f1", m.micro_f1},   {"rare_macro_f1", m.rare_macro_f1}, {"p@5", m.p_at_5},
          {"p@8", m.p_at_8},          {"p@15", m.p_at_15}};
}

// One JSON object per epoch.
inline std::string format_history(const std::vector<EpochRecord>& history) {
  std::string out;
  for (const auto& e : history)
    out += nlohmann::json{{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"lr", e.lr}, {"dev", to_json(e.dev)}}.dump() + "\n";
  return out;
}

inline Metrics evaluate(const Model& model, std::span<const Document> docs, double threshold) {
  const ScoreMatrix yhat = model.predict_all(docs);
  return compute_metrics(yhat, gold_matrix(docs, model.label_count()), threshold,
                         model.inputs().graph.partition().rare_ids);
}

using EpochCallback = std::function<void(const EpochRecord&)>;

inline TrainResult train(const TrainConfig& cfg, const Corpus& corpus, Model& model, const EpochCallback& on_epoch = {}) {
  if (cfg.batch_size == 0 || cfg.accumulation == 0) throw UsageError("batch size and accumulation must be positive");
  TrainResult result;
  result.best_params = model.params();
  if (cfg.epochs == 0) return result;
  if (corpus.train.empty()) throw DataError("training split is empty");

  const std::size_t n = corpus.train.size();
  const std::size_t group = cfg.batch_size * cfg.accumulation;
  const std::size_t steps_per_epoch = (n + group - 1) / group;
  const nn::LinearDecay schedule(cfg.lr, cfg.epochs * steps_per_epoch);
  nn::AdamW opt({cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay});
  std::mt19937_64 rng(cfg.seed ^ 0xA5A5A5A5ULL);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  double best_f1 = -1.0;
  std::size_t since_best = 0;
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    double lr = 0.0;
    for (std::size_t start = 0; start < n; start += group) {
      const std::size_t end = std::min(n, start + group);
      model.params().zero_grad();
      nn::Tape tape(true, rng());
      double step_loss = 0.0;
      try {
        nn::Var vg = model.code_features(tape);
        std::vector<nn::Var> losses;
        for (std::size_t k = start; k < end; ++k) {
          const Document& doc = corpus.train[order[k]];
          nn::Var yhat = model.predict(tape, vg, doc);
          losses.push_back(nn::bce_loss(yhat, label_targets(doc, model.label_count())));
        }
        nn::Var total = nn::scale(nn::sum(nn::concat_rows(losses)), 1.0 / static_cast<double>(end - start));
        step_loss = total.value()[0];
        if (!std::isfinite(step_loss)) throw NumericError("non-finite loss");
        tape.backward(total);
      } catch (const NumericError& e) {
        throw NumericError("training diverged at epoch " + std::to_string(epoch) + ", step " + std::to_string(step + 1) +
                           ": " + e.what());
      }
      for (const auto& p : model.params())
        if (!p.grad.all_finite())
          throw NumericError("training diverged at step " + std::to_string(step + 1) + ": non-finite gradient in " + p.name);
      lr = schedule.at(step);
      opt.step(model.params(), lr);
      ++step;
      loss_sum += step_loss * static_cast<double>(end - start);
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(n);
    rec.lr = lr;
    rec.dev = corpus.dev.empty() ? Metrics{} : evaluate(model, corpus.dev, cfg.threshold);
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (rec.dev.macro_f1 > best_f1) {
      best_f1 = rec.dev.macro_f1;
      result.best_params = model.params();
      result.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  model.params().assign_values(result.best_params);
  return result;
}

struct AblationRow {
  ModelMode mode = ModelMode::kCE;
  std::uint64_t seed = 0;
  std::string split = "test";
  Metrics metrics;
  std::vector<EpochRecord> history;
};

inline constexpr const char* kMetricsCsvHeader =
    "mode,seed,split,macro_auc,micro_auc,macro_f1,micro_f1,rare_macro_f1,p@5,p@8,p@15";

inline std::string metrics_csv_row(const std::string& mode, std::uint64_t seed, const std::string& split, const Metrics& m) {
  std::ostringstream ss;
  ss.precision(6);
  ss << std::fixed << mode << ',' << seed << ',' << split << ',' << m.macro_auc << ',' << m.micro_auc << ',' << m.macro_f1
     << ',' << m.micro_f1 << ',' << m.rare_macro_f1 << ',' << m.p_at_5 << ',' << m.p_at_8 << ',' << m.p_at_15;
  return ss.str();
}

inline std::string metrics_csv(const std::vector<AblationRow>& rows) {
  std::string out = std::string(kMetricsCsvHeader) + "\n";
  for (const auto& r : rows) out += metrics_csv_row(mode_name(r.mode), r.seed, r.split, r.metrics) + "\n";
  return out;
}

// Trains every mode with every seed on the same corpus and evaluates the best
// checkpoint on the test split.
inline std::vector<AblationRow> run_ablation(const TrainConfig& base, const Corpus& corpus,
                                             const std::vector<std::uint64_t>& seeds,
                                             const std::vector<ModelMode>& modes = {ModelMode::kMI, ModelMode::kDI,
                                                                                    ModelMode::kCE, ModelMode::kCEDes},
                                             const std::vector<CodeDescription>& descriptions = {},
                                             const std::function<void(const AblationRow&)>& on_row = {}) {
  std::vector<AblationRow> rows;
  for (ModelMode mode : modes) {
    TrainConfig cfg = base;
    cfg.model.mode = mode;
    GraphInputs inputs = prepare_graph_inputs(corpus, cfg.model, cfg.rare_threshold, descriptions);
    for (std::uint64_t seed : seeds) {
      cfg.seed = seed;
      Model model(cfg.model, corpus.vocab_size(), inputs, seed);
      TrainResult tr = train(cfg, corpus, model);
      AblationRow row{mode, seed, "test", evaluate(model, corpus.test, cfg.threshold), std::move(tr.history)};
      if (on_row) on_row(row);
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

}  // namespace probias
