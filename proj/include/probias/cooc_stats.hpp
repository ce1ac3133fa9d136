#pragma once

// Label frequencies and pairwise co-occurrence counts over the training split,
// the common/rare partition, and P(common | rare).

#include <algorithm>
#include <cstdint>
#include <map>
#include <span>
#include <utility>
#include <vector>

#include "probias/corpus.hpp"
#include "probias/error.hpp"

namespace probias {

class LabelStats {
 public:
  using Pair = std::pair<LabelId, LabelId>;  // first < second

  LabelStats() = default;
  explicit LabelStats(std::size_t n_labels) : freq_(n_labels, 0) {}

  std::size_t label_count() const noexcept { return freq_.size(); }
  std::size_t n_train_docs() const noexcept { return n_docs_; }
  std::size_t freq(LabelId a) const { return freq_.at(a); }
  const std::vector<std::size_t>& freqs() const noexcept { return freq_; }

  std::size_t cooc(LabelId a, LabelId b) const {
    if (a == b) return 0;
    auto it = cooc_.find(ordered(a, b));
    return it == cooc_.end() ? 0 : it->second;
  }
  const std::map<Pair, std::size_t>& cooc_counts() const noexcept { return cooc_; }

  void add_document(std::span<const LabelId> labels) {
    ++n_docs_;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] >= freq_.size()) throw DataError("label id out of range in statistics");
      ++freq_[labels[i]];
      for (std::size_t j = i + 1; j < labels.size(); ++j) ++cooc_[ordered(labels[i], labels[j])];
    }
  }

  // Additive merge of counts gathered over a disjoint shard of documents.
  void merge(const LabelStats& other) {
    if (other.freq_.size() != freq_.size()) throw DataError("cannot merge statistics over different label sets");
    n_docs_ += other.n_docs_;
    for (std::size_t i = 0; i < freq_.size(); ++i) freq_[i] += other.freq_[i];
    for (const auto& [k, v] : other.cooc_) cooc_[k] += v;
  }

  bool operator==(const LabelStats&) const = default;

 private:
  static Pair ordered(LabelId a, LabelId b) { return a < b ? Pair{a, b} : Pair{b, a}; }

  std::vector<std::size_t> freq_;
  std::map<Pair, std::size_t> cooc_;
  std::size_t n_docs_ = 0;
};

// Counts over documents with sorted, unique label sets (as produced by the
// corpus loader).
inline LabelStats count_label_stats(std::span<const Document> train_docs, std::size_t n_labels) {
  if (train_docs.empty()) throw DataError("cannot compute label statistics over an empty training split");
  LabelStats stats(n_labels);
  for (const Document& d : train_docs) stats.add_document(d.label_ids);
  return stats;
}

struct LabelPartition {
  std::vector<LabelId> common_ids;
  std::vector<LabelId> rare_ids;
  std::size_t threshold = 0;

  std::size_t n_common() const noexcept { return common_ids.size(); }
  std::size_t n_rare() const noexcept { return rare_ids.size(); }
  std::size_t label_count() const noexcept { return common_ids.size() + rare_ids.size(); }
  bool operator==(const LabelPartition&) const = default;
};

// A label is rare iff its training frequency is below `threshold`.
inline LabelPartition partition_labels(const LabelStats& stats, std::size_t threshold) {
  if (threshold == 0) throw UsageError("rare threshold must be >= 1");
  LabelPartition p;
  p.threshold = threshold;
  for (std::size_t l = 0; l < stats.label_count(); ++l)
    (stats.freq(static_cast<LabelId>(l)) >= threshold ? p.common_ids : p.rare_ids).push_back(static_cast<LabelId>(l));
  return p;
}

// Dense n_rare x n_common matrix; row order follows rare_ids, columns common_ids.
struct ProbMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  double operator()(std::size_t i, std::size_t j) const { return values[i * cols + j]; }
  double& operator()(std::size_t i, std::size_t j) { return values[i * cols + j]; }
  bool operator==(const ProbMatrix&) const = default;
};

// P(common_j | rare_i) = cooc(rare_i, common_j) / freq(rare_i); rows of rare
// labels never seen in training are zero.
inline ProbMatrix conditional_prob_matrix(const LabelStats& stats, const LabelPartition& part) {
  ProbMatrix p{part.n_rare(), part.n_common(), std::vector<double>(part.n_rare() * part.n_common(), 0.0)};
  for (std::size_t i = 0; i < part.n_rare(); ++i) {
    const std::size_t denom = stats.freq(part.rare_ids[i]);
    if (denom == 0) continue;
    for (std::size_t j = 0; j < part.n_common(); ++j)
      p(i, j) = static_cast<double>(stats.cooc(part.rare_ids[i], part.common_ids[j])) / static_cast<double>(denom);
  }
  return p;
}

}  // namespace probias
