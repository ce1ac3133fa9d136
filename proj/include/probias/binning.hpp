#pragma once

// Quantile binning of conditional probabilities into bias-table indices.
//
// Boundaries are [0.0, q(0), q(1/B), ..., q(1)] where q is the linearly
// interpolated quantile of the nonzero probabilities. A probability of exactly
// 1 maps to index B. Every other value maps to (number of boundaries <= value) - 1,
// clamped into [0, B - 1]; zeros therefore land in bin 0 and the top two
// quantile intervals share bin B - 1.

#include <algorithm>
#include <cstdint>
#include <span>
#include <vector>

#include "probias/cooc_stats.hpp"
#include "probias/error.hpp"

namespace probias {

struct BinBoundaries {
  std::vector<double> boundaries;  // length bin_count + 2, non-decreasing, starts at 0.0
  std::size_t bin_count = 0;

  bool operator==(const BinBoundaries&) const = default;
};

struct PhiMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint32_t> indices;

  std::uint32_t operator()(std::size_t i, std::size_t j) const { return indices[i * cols + j]; }
  bool operator==(const PhiMatrix&) const = default;
};

// Raised when no pair co-occurs; callers fall back to mask-only attention.
class NoCooccurrenceError : public DataError {
 public:
  NoCooccurrenceError() : DataError("conditional probability matrix has no nonzero entry") {}
};

// Quantile at level q in [0, 1] of sorted values, interpolating linearly between
// the order statistics at floor/ceil of q * (n - 1).
inline double linear_quantile(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw DataError("quantile of empty sample");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(pos);
  if (lo + 1 >= sorted.size()) return sorted.back();
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

inline BinBoundaries compute_bin_boundaries(std::span<const double> values, std::size_t bins) {
  if (bins == 0) throw UsageError("bin count must be >= 1");
  std::vector<double> nonzero;
  for (double v : values)
    if (v != 0.0) nonzero.push_back(v);
  if (nonzero.empty()) throw NoCooccurrenceError();
  std::sort(nonzero.begin(), nonzero.end());
  BinBoundaries bb;
  bb.bin_count = bins;
  bb.boundaries.push_back(0.0);
  for (std::size_t k = 0; k <= bins; ++k)
    bb.boundaries.push_back(linear_quantile(nonzero, static_cast<double>(k) / static_cast<double>(bins)));
  return bb;
}

inline BinBoundaries compute_bin_boundaries(const ProbMatrix& p, std::size_t bins) {
  return compute_bin_boundaries(p.values, bins);
}

inline std::uint32_t bin_index(double value, const BinBoundaries& bb) {
  const auto b = static_cast<std::int64_t>(bb.bin_count);
  if (value == 1.0) return static_cast<std::uint32_t>(b);
  const auto count = std::upper_bound(bb.boundaries.begin(), bb.boundaries.end(), value) - bb.boundaries.begin();
  return static_cast<std::uint32_t>(std::clamp<std::int64_t>(count - 1, 0, b - 1));
}

inline PhiMatrix assign_bin_indices(const ProbMatrix& p, const BinBoundaries& bb) {
  PhiMatrix phi{p.rows, p.cols, std::vector<std::uint32_t>(p.values.size())};
  for (std::size_t i = 0; i < p.values.size(); ++i) phi.indices[i] = bin_index(p.values[i], bb);
  return phi;
}

}  // namespace probias
