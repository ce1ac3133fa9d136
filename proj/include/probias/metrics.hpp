#pragma once

// Multi-label evaluation: macro/micro F1 and AUC, precision@k.
//
// Conventions:
//  * A label counts toward macro F1 only if it has at least one gold positive.
//  * Macro AUC averages labels with at least one positive and one negative;
//    ties share their mean rank.
//  * Micro AUC ranks every (document, label) score together.
//  * P@k divides by k even when fewer than k labels exist; equal scores are
//    ordered by label index.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "probias/corpus.hpp"
#include "probias/error.hpp"

namespace probias {

// docs x labels, row-major.
struct ScoreMatrix {
  std::size_t docs = 0;
  std::size_t labels = 0;
  std::vector<double> values;

  ScoreMatrix() = default;
  ScoreMatrix(std::size_t d, std::size_t l, double fill = 0.0) : docs(d), labels(l), values(d * l, fill) {}
  double operator()(std::size_t d, std::size_t l) const { return values[d * labels + l]; }
  double& operator()(std::size_t d, std::size_t l) { return values[d * labels + l]; }
};

inline ScoreMatrix gold_matrix(std::span<const Document> docs, std::size_t n_labels) {
  ScoreMatrix y(docs.size(), n_labels);
  for (std::size_t d = 0; d < docs.size(); ++d)
    for (LabelId l : docs[d].label_ids) y(d, l) = 1.0;
  return y;
}

struct Confusion {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;

  double f1() const {
    const std::size_t denom = 2 * tp + fp + fn;
    return denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
  }
};

struct Metrics {
  double macro_auc = 0.0;
  double micro_auc = 0.0;
  double macro_f1 = 0.0;
  double micro_f1 = 0.0;
  double rare_macro_f1 = 0.0;  // 0 when no rare label has a gold positive
  double p_at_5 = 0.0;
  double p_at_8 = 0.0;
  double p_at_15 = 0.0;
};

inline std::vector<Confusion> label_confusion(const ScoreMatrix& yhat, const ScoreMatrix& y, double threshold) {
  std::vector<Confusion> out(y.labels);
  for (std::size_t d = 0; d < y.docs; ++d)
    for (std::size_t l = 0; l < y.labels; ++l) {
      const bool pred = yhat(d, l) >= threshold;
      const bool gold = y(d, l) > 0.5;
      Confusion& c = out[l];
      if (pred && gold) ++c.tp;
      else if (pred) ++c.fp;
      else if (gold) ++c.fn;
      else ++c.tn;
    }
  return out;
}

// Mann-Whitney AUC with mean ranks for ties; nullopt without both classes.
inline std::optional<double> rank_auc(std::span<const double> scores, std::span<const std::uint8_t> positive) {
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double pos_rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double mean_rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k)
      if (positive[order[k]]) {
        pos_rank_sum += mean_rank;
        ++n_pos;
      }
    i = j + 1;
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) return std::nullopt;
  const double np = static_cast<double>(n_pos);
  return (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * static_cast<double>(n_neg));
}

inline double precision_at_k(const ScoreMatrix& yhat, const ScoreMatrix& y, std::size_t k) {
  if (y.docs == 0) return 0.0;
  double total = 0.0;
  std::vector<std::size_t> order(y.labels);
  for (std::size_t d = 0; d < y.docs; ++d) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return yhat(d, a) > yhat(d, b); });
    std::size_t hits = 0;
    for (std::size_t r = 0; r < std::min(k, order.size()); ++r) hits += y(d, order[r]) > 0.5 ? 1 : 0;
    total += static_cast<double>(hits) / static_cast<double>(k);
  }
  return total / static_cast<double>(y.docs);
}

inline Metrics compute_metrics(const ScoreMatrix& yhat, const ScoreMatrix& y, double threshold = 0.5,
                               std::span<const LabelId> rare_ids = {}) {
  if (yhat.docs != y.docs || yhat.labels != y.labels) throw DataError("prediction and gold matrices differ in shape");
  if (!(threshold > 0.0 && threshold < 1.0)) throw UsageError("classification threshold must lie in (0, 1)");
  const auto conf = label_confusion(yhat, y, threshold);
  std::vector<std::size_t> gold_pos(y.labels, 0);
  for (std::size_t d = 0; d < y.docs; ++d)
    for (std::size_t l = 0; l < y.labels; ++l) gold_pos[l] += y(d, l) > 0.5 ? 1 : 0;
  if (std::accumulate(gold_pos.begin(), gold_pos.end(), std::size_t{0}) == 0)
    throw DataError("evaluation set has no gold positives");

  Metrics m;
  Confusion pooled;
  double f1_sum = 0.0;
  std::size_t f1_n = 0;
  for (std::size_t l = 0; l < y.labels; ++l) {
    pooled.tp += conf[l].tp;
    pooled.fp += conf[l].fp;
    pooled.fn += conf[l].fn;
    pooled.tn += conf[l].tn;
    if (gold_pos[l] == 0) continue;
    f1_sum += conf[l].f1();
    ++f1_n;
  }
  m.macro_f1 = f1_sum / static_cast<double>(f1_n);
  m.micro_f1 = pooled.f1();

  double rare_sum = 0.0;
  std::size_t rare_n = 0;
  for (LabelId l : rare_ids) {
    if (l >= y.labels) throw DataError("rare label id out of range");
    if (gold_pos[l] == 0) continue;
    rare_sum += conf[l].f1();
    ++rare_n;
  }
  m.rare_macro_f1 = rare_n == 0 ? 0.0 : rare_sum / static_cast<double>(rare_n);

  double auc_sum = 0.0;
  std::size_t auc_n = 0;
  std::vector<double> col(y.docs);
  std::vector<std::uint8_t> pos(y.docs);
  for (std::size_t l = 0; l < y.labels; ++l) {
    for (std::size_t d = 0; d < y.docs; ++d) {
      col[d] = yhat(d, l);
      pos[d] = y(d, l) > 0.5 ? 1 : 0;
    }
    if (auto a = rank_auc(col, pos)) {
      auc_sum += *a;
      ++auc_n;
    }
  }
  m.macro_auc = auc_n == 0 ? 0.0 : auc_sum / static_cast<double>(auc_n);

  std::vector<std::uint8_t> all_pos(y.values.size());
  for (std::size_t i = 0; i < all_pos.size(); ++i) all_pos[i] = y.values[i] > 0.5 ? 1 : 0;
  m.micro_auc = rank_auc(yhat.values, all_pos).value_or(0.0);

  m.p_at_5 = precision_at_k(yhat, y, 5);
  m.p_at_8 = precision_at_k(yhat, y, 8);
  m.p_at_15 = precision_at_k(yhat, y, 15);
  return m;
}

}  // namespace probias
