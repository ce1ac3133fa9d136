#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace probias;
using probias::testing::make_doc;

namespace {

BipartiteGraph graph_of(std::size_t nr, std::size_t nc, std::vector<double> probs) {
  LabelPartition part;
  for (std::size_t j = 0; j < nc; ++j) part.common_ids.push_back(static_cast<LabelId>(j));
  for (std::size_t i = 0; i < nr; ++i) part.rare_ids.push_back(static_cast<LabelId>(nc + i));
  ProbMatrix p{nr, nc, std::move(probs)};
  PhiMatrix phi{nr, nc, std::vector<std::uint32_t>(nr * nc, 0)};
  return build_graph(part, p, phi, 3);
}

}  // namespace

TEST(BuildGraph, MaskFollowsNonzeroProbabilities) {
  const BipartiteGraph g = graph_of(1, 3, {0.0, 0.4, 0.0});
  EXPECT_FALSE(g.edge(0, 0));
  EXPECT_TRUE(g.edge(0, 1));
  EXPECT_FALSE(g.edge(0, 2));
  EXPECT_FALSE(g.isolated(0));
}

TEST(BuildGraph, AllZeroRowIsIsolated) {
  const BipartiteGraph g = graph_of(2, 2, {0.0, 0.0, 0.3, 0.0});
  EXPECT_TRUE(g.isolated(0));
  EXPECT_FALSE(g.isolated(1));
}

TEST(BuildGraph, EdgeCountEqualsNonzeros) {
  EXPECT_EQ(graph_of(2, 3, {0.1, 0.0, 0.5, 1.0, 0.2, 0.0}).edge_count(), 4u);
}

TEST(BuildGraph, ShapeMismatchRejected) {
  LabelPartition part{{0, 1}, {2}, 5};
  ProbMatrix p{1, 3, {0.1, 0.2, 0.3}};
  PhiMatrix phi{1, 3, {0, 0, 0}};
  EXPECT_THROW(build_graph(part, p, phi, 3), DataError);
}

TEST(BuildGraph, FromStatsAgreesWithProbabilities) {
  SyntheticSpec spec;
  spec.train_docs = 400;
  spec.planted_links = cyclic_links(spec.n_rare, spec.n_common, {1.0, 0.5});
  const Corpus c = generate_synthetic_corpus(spec);
  const LabelStats s = count_label_stats(c.train, c.label_count());
  const BipartiteGraph g = build_graph_from_stats(s, 15, 10);
  std::size_t nonzero = 0;
  for (std::size_t i = 0; i < g.n_rare(); ++i) {
    bool any = false;
    for (std::size_t j = 0; j < g.n_common(); ++j) {
      const double p = g.prob()(i, j);
      EXPECT_EQ(g.edge(i, j), p > 0.0);
      EXPECT_EQ(g.phi()(i, j) == 10u, p == 1.0);
      nonzero += p > 0.0;
      any = any || p > 0.0;
    }
    EXPECT_EQ(g.isolated(i), !any);
  }
  EXPECT_EQ(g.edge_count(), nonzero);
}

TEST(BuildGraph, NoCooccurrenceFallsBackToMaskOnly) {
  const std::vector<Document> docs = {make_doc("a", {2}, {0}), make_doc("b", {2}, {0}), make_doc("c", {2}, {1})};
  const BipartiteGraph g = build_graph_from_stats(count_label_stats(docs, 2), 2, 10);
  ASSERT_EQ(g.n_rare(), 1u);
  EXPECT_TRUE(g.isolated(0));
  EXPECT_EQ(g.edge_count(), 0u);
}

TEST(MutualMask, SymmetricOverCooccurringPairs) {
  const std::vector<Document> docs = {make_doc("a", {2}, {0, 2}), make_doc("b", {2}, {1}), make_doc("c", {2}, {1, 2})};
  const auto m = mutual_cooccurrence_mask(count_label_stats(docs, 3));
  const std::vector<std::uint8_t> want = {0, 0, 1, 0, 0, 1, 1, 1, 0};
  EXPECT_EQ(m, want);
}

TEST(DirectedPlan, QueriesAreNonIsolatedRareKeysAreCommon) {
  const BipartiteGraph g = graph_of(3, 2, {0.0, 0.0, 0.5, 0.0, 0.2, 1.0});
  const AttentionPlan plan = directed_plan(g, true);
  EXPECT_EQ(plan.query_rows, (std::vector<std::size_t>{3, 4}));
  EXPECT_EQ(plan.key_rows, (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(plan.mask, (std::vector<std::uint8_t>{1, 0, 1, 1}));
  EXPECT_TRUE(plan.use_bias);
  // No common label is ever a query, no rare label ever a key.
  for (auto q : plan.query_rows) EXPECT_GE(q, 2u);
  for (auto k : plan.key_rows) EXPECT_LT(k, 2u);
}
