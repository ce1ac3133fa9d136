#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace probias;
using probias::testing::random_tensor;

namespace {

struct Harness {
  nn::ParameterStore store;
  std::unique_ptr<LabelAttention> la;
  Harness(std::size_t dim, std::size_t heads, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    la = std::make_unique<LabelAttention>(store, LabelAttentionConfig{dim, heads}, rng);
  }
};

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Dense single-head reference for one chunk.
nn::Tensor dense_scores(const nn::Tensor& v, const nn::Tensor& h, const std::vector<std::uint8_t>& pad, const nn::Tensor& wq,
                        const nn::Tensor& wk, const nn::Tensor& w) {
  const std::size_t n = v.rows(), t = h.rows(), d = v.cols();
  auto mm = [](const nn::Tensor& a, const nn::Tensor& b) {
    nn::Tensor o(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
      for (std::size_t j = 0; j < b.cols(); ++j)
        for (std::size_t k = 0; k < a.cols(); ++k) o(i, j) += a(i, k) * b(k, j);
    return o;
  };
  const nn::Tensor q = mm(v, wq);
  nn::Tensor k = mm(h, wk);
  for (auto& x : k.storage()) x = std::tanh(x);
  nn::Tensor out(1, n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> logit(t, -std::numeric_limits<double>::infinity());
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < t; ++j) {
      if (!pad[j]) continue;
      double s = 0;
      for (std::size_t c = 0; c < d; ++c) s += q(i, c) * k(j, c);
      logit[j] = s;
      mx = std::max(mx, s);
    }
    double z = 0;
    for (double l : logit) z += std::exp(l - mx);
    std::vector<double> r(d, 0.0);
    for (std::size_t j = 0; j < t; ++j)
      for (std::size_t c = 0; c < d; ++c) r[c] += std::exp(logit[j] - mx) / z * h(j, c);
    double s = 0;
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = 0; b < d; ++b) s += r[a] * w(a, b) * v(i, b);
    out(0, i) = s;
  }
  return out;
}

}  // namespace

TEST(LabelAttention, SingleRealTokenGetsFullWeight) {
  Harness h(4, 2, 1);
  std::mt19937_64 rng(2);
  nn::Tape tape;
  const std::vector<std::uint8_t> pad = {1, 0, 0};
  const auto alphas = h.la->attention(tape, tape.constant(random_tensor(3, 4, rng)), tape.constant(random_tensor(3, 4, rng)), pad);
  for (const auto& a : alphas)
    for (std::size_t i = 0; i < 3; ++i) {
      EXPECT_EQ(a.value()(i, 0), 1.0);
      EXPECT_EQ(a.value()(i, 1), 0.0);
    }
}

TEST(LabelAttention, ZeroQueryGivesUniformOverRealTokens) {
  Harness h(4, 1, 3);
  std::mt19937_64 rng(4);
  nn::Tape tape;
  const std::vector<std::uint8_t> pad = {1, 1, 1, 1, 0};
  const auto alphas = h.la->attention(tape, tape.constant(nn::Tensor(2, 4, 0.0)), tape.constant(random_tensor(5, 4, rng)), pad);
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(alphas[0].value()(i, j), 0.25, 1e-15);
    EXPECT_EQ(alphas[0].value()(i, 4), 0.0);
  }
}

TEST(LabelAttention, MatchesDenseReference) {
  Harness h(4, 1, 5);
  std::mt19937_64 rng(6);
  const nn::Tensor v = random_tensor(3, 4, rng), tok = random_tensor(6, 4, rng);
  const std::vector<std::uint8_t> pad = {1, 1, 1, 1, 0, 0};
  nn::Tape tape;
  const nn::Tensor got = h.la->chunk_scores(tape, tape.constant(v), tape.constant(tok), pad).value();
  const nn::Tensor want = dense_scores(v, tok, pad, h.la->w_q().value, h.la->w_k().value, h.la->biaffine().value);
  EXPECT_LT(probias::testing::max_abs_diff(got, want), 1e-12);
}

TEST(LabelAttention, OneHotWeightsSelectTokenRow) {
  Harness h(4, 2, 7);
  std::mt19937_64 rng(8);
  const nn::Tensor tok = random_tensor(3, 4, rng);
  nn::Tape tape;
  const std::vector<nn::Var> alphas = {tape.constant(nn::Tensor(1, 3, {0, 1, 0})), tape.constant(nn::Tensor(1, 3, {0, 0, 1}))};
  const nn::Tensor r = h.la->chunk_representation(alphas, tape.constant(tok)).value();
  EXPECT_EQ(r(0, 0), tok(1, 0));
  EXPECT_EQ(r(0, 1), tok(1, 1));
  EXPECT_EQ(r(0, 2), tok(2, 2));
  EXPECT_EQ(r(0, 3), tok(2, 3));
}

TEST(LabelAttention, MaxPoolingOverChunkScores) {
  nn::Tape tape;
  const nn::Tensor y = nn::sigmoid(nn::max_over_rows(tape.constant(nn::Tensor(2, 1, {-1.0, 3.0})))).value();
  EXPECT_NEAR(y[0], 0.952574, 1e-6);
}

TEST(LabelAttention, PredictMatchesTwoChunkReference) {
  Harness h(4, 1, 9);
  std::mt19937_64 rng(10);
  const nn::Tensor v = random_tensor(3, 4, rng), c1 = random_tensor(4, 4, rng), c2 = random_tensor(4, 4, rng);
  const std::vector<std::uint8_t> p1 = {1, 1, 1, 1}, p2 = {1, 1, 0, 0};
  nn::Tape tape;
  const nn::Tensor y = h.la->predict(tape, tape.constant(v), {tape.constant(c1), tape.constant(c2)}, {p1, p2}).value();
  const auto& wq = h.la->w_q().value;
  const auto& wk = h.la->w_k().value;
  const auto& w = h.la->biaffine().value;
  const nn::Tensor s1 = dense_scores(v, c1, p1, wq, wk, w), s2 = dense_scores(v, c2, p2, wq, wk, w);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(y(0, i), sigmoid(std::max(s1(0, i), s2(0, i))), 1e-12);
}

TEST(LabelAttention, ChunkOrderAndDuplicatesDoNotMatter) {
  Harness h(4, 2, 11);
  std::mt19937_64 rng(12);
  const nn::Tensor v = random_tensor(3, 4, rng), c1 = random_tensor(4, 4, rng), c2 = random_tensor(4, 4, rng);
  const std::vector<std::uint8_t> p1 = {1, 1, 1, 0}, p2 = {1, 1, 1, 1};
  nn::Tape tape;
  nn::Var fv = tape.constant(v), a = tape.constant(c1), b = tape.constant(c2);
  const nn::Tensor y = h.la->predict(tape, fv, {a, b}, {p1, p2}).value();
  EXPECT_EQ(y, h.la->predict(tape, fv, {b, a}, {p2, p1}).value());
  EXPECT_EQ(y, h.la->predict(tape, fv, {a, b, b}, {p1, p2, p2}).value());
}

TEST(LabelAttention, GradientCheck) {
  Harness h(8, 2, 13);
  std::mt19937_64 rng(14);
  h.store.add("features", random_tensor(3, 8, rng));
  h.store.add("chunk0", random_tensor(5, 8, rng));
  h.store.add("chunk1", random_tensor(5, 8, rng));
  const std::vector<std::uint8_t> p0 = {1, 1, 1, 1, 1}, p1 = {1, 1, 0, 0, 0};
  const std::vector<double> gold = {1, 0, 1};
  const auto report = nn::finite_diff_check(h.store, [&](nn::Tape& tape) {
    nn::Var y = h.la->predict(tape, tape.param(h.store.get("features")),
                              {tape.param(h.store.get("chunk0")), tape.param(h.store.get("chunk1"))}, {p0, p1});
    return nn::bce_loss(y, gold);
  });
  EXPECT_LT(report.max_rel_error, 1e-4) << report.worst_parameter;
}

TEST(LabelAttention, EmptyChunkListRejected) {
  Harness h(4, 1, 1);
  nn::Tape tape;
  EXPECT_THROW(h.la->predict(tape, tape.constant(nn::Tensor(2, 4)), {}, {}), DataError);
}
