#pragma once

#include <cstdint>
#include <vector>

#include "probias/binning.hpp"
#include "probias/cooc_stats.hpp"
#include "probias/error.hpp"

namespace probias {

// Directed common -> rare graph. mask(i, j) is set iff rare_ids[i] and
// common_ids[j] co-occur in training; information only flows along these edges.
class BipartiteGraph {
 public:
  BipartiteGraph(LabelPartition part, ProbMatrix prob, PhiMatrix phi, std::size_t bin_count)
      : part_(std::move(part)), prob_(std::move(prob)), phi_(std::move(phi)), bin_count_(bin_count) {
    const std::size_t nr = part_.n_rare(), nc = part_.n_common();
    if (prob_.rows != nr || prob_.cols != nc || phi_.rows != nr || phi_.cols != nc ||
        prob_.values.size() != nr * nc || phi_.indices.size() != nr * nc)
      throw DataError("graph shape mismatch: partition is " + std::to_string(nr) + "x" + std::to_string(nc) +
                      ", probabilities " + std::to_string(prob_.rows) + "x" + std::to_string(prob_.cols) + ", phi " +
                      std::to_string(phi_.rows) + "x" + std::to_string(phi_.cols));
    mask_.assign(nr * nc, 0);
    isolated_.assign(nr, true);
    for (std::size_t i = 0; i < nr; ++i)
      for (std::size_t j = 0; j < nc; ++j)
        if (prob_(i, j) > 0.0) {
          mask_[i * nc + j] = 1;
          isolated_[i] = false;
          ++edges_;
        }
  }

  const LabelPartition& partition() const noexcept { return part_; }
  const ProbMatrix& prob() const noexcept { return prob_; }
  const PhiMatrix& phi() const noexcept { return phi_; }
  std::size_t bin_count() const noexcept { return bin_count_; }
  std::size_t n_rare() const noexcept { return part_.n_rare(); }
  std::size_t n_common() const noexcept { return part_.n_common(); }
  std::size_t edge_count() const noexcept { return edges_; }

  bool edge(std::size_t rare_row, std::size_t common_col) const { return mask_[rare_row * n_common() + common_col] != 0; }
  const std::vector<std::uint8_t>& mask() const noexcept { return mask_; }
  bool isolated(std::size_t rare_row) const { return isolated_[rare_row]; }
  const std::vector<bool>& isolated_rare() const noexcept { return isolated_; }

 private:
  LabelPartition part_;
  ProbMatrix prob_;
  PhiMatrix phi_;
  std::size_t bin_count_;
  std::vector<std::uint8_t> mask_;
  std::vector<bool> isolated_;
  std::size_t edges_ = 0;
};

inline BipartiteGraph build_graph(const LabelPartition& part, const ProbMatrix& p, const PhiMatrix& phi,
                                  std::size_t bin_count) {
  return BipartiteGraph(part, p, phi, bin_count);
}

// Statistics -> partition -> probabilities -> bins -> graph. With no
// co-occurring pair at all every rare label is isolated and phi is all zeros.
inline BipartiteGraph build_graph_from_stats(const LabelStats& stats, std::size_t rare_threshold, std::size_t bins) {
  LabelPartition part = partition_labels(stats, rare_threshold);
  ProbMatrix p = conditional_prob_matrix(stats, part);
  PhiMatrix phi{p.rows, p.cols, std::vector<std::uint32_t>(p.values.size(), 0)};
  try {
    phi = assign_bin_indices(p, compute_bin_boundaries(p, bins));
  } catch (const NoCooccurrenceError&) {
  }
  return BipartiteGraph(std::move(part), std::move(p), std::move(phi), bins);
}

// Symmetric N x N mask over every co-occurring label pair (diagonal unset). Used
// by the undirected ablation mode.
inline std::vector<std::uint8_t> mutual_cooccurrence_mask(const LabelStats& stats) {
  const std::size_t n = stats.label_count();
  std::vector<std::uint8_t> mask(n * n, 0);
  for (const auto& [pair, count] : stats.cooc_counts()) {
    if (count == 0) continue;
    mask[pair.first * n + pair.second] = 1;
    mask[pair.second * n + pair.first] = 1;
  }
  return mask;
}

}  // namespace probias
