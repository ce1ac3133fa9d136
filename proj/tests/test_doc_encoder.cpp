#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace probias;
using probias::testing::max_abs_diff;

namespace {

Chunk chunk_of(std::vector<TokenId> ids, std::size_t real) {
  Chunk c;
  c.doc_id = "d";
  c.token_ids = std::move(ids);
  c.pad_mask.assign(c.token_ids.size(), 0);
  for (std::size_t i = 0; i < real; ++i) c.pad_mask[i] = 1;
  return c;
}

DocEncoderConfig small_config(std::size_t blocks, bool positions) {
  DocEncoderConfig cfg;
  cfg.vocab_size = 12;
  cfg.dim = 8;
  cfg.heads = 2;
  cfg.blocks = blocks;
  cfg.ffn_hidden = 8;
  cfg.chunk_len = 5;
  cfg.position_signal = positions;
  cfg.dropout = 0.0;
  return cfg;
}

}  // namespace

TEST(DocEncoder, NoBlocksIsEmbeddingPlusPosition) {
  nn::ParameterStore store;
  std::mt19937_64 rng(1);
  const DocEncoder enc(store, small_config(0, true), rng);
  nn::Tape tape;
  const Chunk c = chunk_of({3, 7, 7, 0, 0}, 3);
  const nn::Tensor out = enc.encode(tape, c).value();
  const nn::Tensor pe = sinusoidal_positions(5, 8);
  const nn::Tensor& table = store.get("doc.embed").value;
  for (std::size_t t = 0; t < 5; ++t)
    for (std::size_t j = 0; j < 8; ++j) EXPECT_DOUBLE_EQ(out(t, j), table(c.token_ids[t], j) + pe(t, j));
  for (std::size_t j = 0; j < 8; ++j) EXPECT_EQ(table(kPadId, j), 0.0);
}

TEST(DocEncoder, OutputShape) {
  nn::ParameterStore store;
  std::mt19937_64 rng(1);
  const DocEncoder enc(store, small_config(2, true), rng);
  nn::Tape tape;
  const nn::Var out = enc.encode(tape, chunk_of({2, 3, 4, 5, 6}, 5));
  EXPECT_EQ(out.rows(), 5u);
  EXPECT_EQ(out.cols(), 8u);
}

TEST(DocEncoder, PermutationEquivariantWithoutPositions) {
  nn::ParameterStore store;
  std::mt19937_64 rng(2);
  const DocEncoder enc(store, small_config(1, false), rng);
  nn::Tape tape;
  const nn::Tensor a = enc.encode(tape, chunk_of({2, 5, 9, 4, 11}, 5)).value();
  const nn::Tensor b = enc.encode(tape, chunk_of({9, 2, 11, 5, 4}, 5)).value();
  const std::vector<std::size_t> perm = {2, 0, 4, 1, 3};  // b row t is a row perm[t]
  for (std::size_t t = 0; t < 5; ++t)
    for (std::size_t j = 0; j < 8; ++j) EXPECT_NEAR(b(t, j), a(perm[t], j), 1e-12);
}

TEST(DocEncoder, PadTokensDoNotInfluenceRealPositions) {
  nn::ParameterStore store;
  std::mt19937_64 rng(3);
  const DocEncoder enc(store, small_config(1, true), rng);
  nn::Tape tape;
  const nn::Tensor a = enc.encode(tape, chunk_of({2, 5, 0, 0, 0}, 2)).value();
  // Same real prefix; the padded suffix carries different ids but stays masked.
  const nn::Tensor b = enc.encode(tape, chunk_of({2, 5, 7, 8, 9}, 2)).value();
  for (std::size_t t = 0; t < 2; ++t)
    for (std::size_t j = 0; j < 8; ++j) EXPECT_NEAR(a(t, j), b(t, j), 1e-12);
}

TEST(DocEncoder, GradientCheck) {
  nn::ParameterStore store;
  std::mt19937_64 rng(4);
  const DocEncoder enc(store, small_config(1, true), rng);
  probias::testing::randomize(store, rng);
  const Chunk c = chunk_of({2, 5, 9, 0, 0}, 3);
  const nn::Tensor r = probias::testing::random_tensor(5, 8, rng);
  const auto report = nn::finite_diff_check(store, [&](nn::Tape& tape) {
    return nn::sum(nn::hadamard(enc.encode(tape, c), tape.constant(r)));
  });
  EXPECT_LT(report.max_rel_error, 1e-4) << report.worst_parameter;
}

TEST(DocEncoder, TokenIdOutOfRangeRejected) {
  nn::ParameterStore store;
  std::mt19937_64 rng(1);
  const DocEncoder enc(store, small_config(0, true), rng);
  nn::Tape tape;
  EXPECT_THROW(enc.encode(tape, chunk_of({2, 99, 0, 0, 0}, 2)), DataError);
}

TEST(DocEncoder, DropoutOnlyWhenTraining) {
  nn::ParameterStore store;
  std::mt19937_64 rng(5);
  DocEncoderConfig cfg = small_config(1, true);
  cfg.dropout = 0.5;
  const DocEncoder enc(store, cfg, rng);
  const Chunk c = chunk_of({2, 3, 4, 5, 6}, 5);
  nn::Tape eval1, eval2, train(true, 9);
  const nn::Tensor a = enc.encode(eval1, c).value();
  EXPECT_EQ(max_abs_diff(a, enc.encode(eval2, c).value()), 0.0);
  EXPECT_GT(max_abs_diff(a, enc.encode(train, c).value()), 0.0);
}
