#include <gtest/gtest.h>

#include <fstream>

#include "test_util.hpp"

using namespace probias;

namespace {

struct Fixture {
  ScoreMatrix gold, scores;
  std::vector<LabelId> rare_ids;
  double threshold = 0.5;
  nlohmann::json expected;
};

Fixture load_fixture() {
  std::ifstream in(std::string(PROBIAS_FIXTURE_DIR) + "/metrics_10x6.json");
  const auto j = nlohmann::json::parse(in);
  Fixture f;
  const auto& g = j.at("gold");
  const auto& s = j.at("scores");
  f.gold = ScoreMatrix(g.size(), g.at(0).size());
  f.scores = ScoreMatrix(g.size(), g.at(0).size());
  for (std::size_t d = 0; d < g.size(); ++d)
    for (std::size_t l = 0; l < g[d].size(); ++l) {
      f.gold(d, l) = g[d][l].get<double>();
      f.scores(d, l) = s[d][l].get<double>();
    }
  f.rare_ids = j.at("rare_ids").get<std::vector<LabelId>>();
  f.threshold = j.at("threshold").get<double>();
  f.expected = j.at("expected");
  return f;
}

Corpus tiny_corpus(std::uint64_t seed = 3) {
  SyntheticSpec spec;
  spec.n_common = 3;
  spec.n_rare = 4;
  spec.vocab_size = 60;
  spec.train_docs = 40;
  spec.dev_docs = 20;
  spec.test_docs = 20;
  spec.power_law_exponent = 0.8;
  spec.planted_links = cyclic_links(spec.n_rare, spec.n_common, {1.0});
  spec.signal_tokens_per_label = 3;
  spec.rng_seed = seed;
  return generate_synthetic_corpus(spec);
}

TrainConfig tiny_config() {
  TrainConfig cfg;
  cfg.model.dim = 8;
  cfg.model.heads = 2;
  cfg.model.bins = 3;
  cfg.model.encoder_blocks = 0;
  cfg.model.chunk_len = 8;
  cfg.model.overlap = 2;
  cfg.model.dropout = 0.1;
  cfg.epochs = 5;
  cfg.accumulation = 4;
  cfg.lr = 1e-2;
  cfg.rare_threshold = 8;
  cfg.patience = 100;
  cfg.seed = 7;
  return cfg;
}

}  // namespace

TEST(Metrics, MatchesFrozenReference) {
  const Fixture f = load_fixture();
  const Metrics m = compute_metrics(f.scores, f.gold, f.threshold, f.rare_ids);
  const auto& e = f.expected;
  EXPECT_NEAR(m.macro_auc, e.at("macro_auc").get<double>(), 1e-9);
  EXPECT_NEAR(m.micro_auc, e.at("micro_auc").get<double>(), 1e-9);
  EXPECT_NEAR(m.macro_f1, e.at("macro_f1").get<double>(), 1e-9);
  EXPECT_NEAR(m.micro_f1, e.at("micro_f1").get<double>(), 1e-9);
  EXPECT_NEAR(m.rare_macro_f1, e.at("rare_macro_f1").get<double>(), 1e-9);
  EXPECT_NEAR(m.p_at_5, e.at("p@5").get<double>(), 1e-9);
  EXPECT_NEAR(m.p_at_8, e.at("p@8").get<double>(), 1e-9);
  EXPECT_NEAR(m.p_at_15, e.at("p@15").get<double>(), 1e-9);
}

TEST(Metrics, PerfectPredictions) {
  const Fixture f = load_fixture();
  const Metrics m = compute_metrics(f.gold, f.gold, 0.5, f.rare_ids);
  EXPECT_EQ(m.macro_f1, 1.0);
  EXPECT_EQ(m.micro_f1, 1.0);
  EXPECT_EQ(m.macro_auc, 1.0);
  EXPECT_EQ(m.micro_auc, 1.0);
  EXPECT_EQ(m.rare_macro_f1, 1.0);
}

TEST(Metrics, ConstantScoresGiveHalfAuc) {
  const Fixture f = load_fixture();
  const Metrics m = compute_metrics(ScoreMatrix(f.gold.docs, f.gold.labels, 0.5), f.gold);
  EXPECT_DOUBLE_EQ(m.macro_auc, 0.5);
  EXPECT_DOUBLE_EQ(m.micro_auc, 0.5);
}

TEST(Metrics, ThresholdIsInclusive) {
  ScoreMatrix y(1, 2), yhat(1, 2);
  y(0, 0) = 1;
  yhat(0, 0) = 0.5;
  EXPECT_EQ(compute_metrics(yhat, y, 0.5).micro_f1, 1.0);
}

TEST(Metrics, MicroCountsAreSumOfLabelCounts) {
  const Fixture f = load_fixture();
  const auto conf = label_confusion(f.scores, f.gold, 0.5);
  std::size_t tp = 0, fp = 0, fn = 0;
  for (const auto& c : conf) {
    tp += c.tp;
    fp += c.fp;
    fn += c.fn;
    EXPECT_EQ(c.tp + c.fp + c.fn + c.tn, f.gold.docs);
  }
  EXPECT_DOUBLE_EQ(compute_metrics(f.scores, f.gold).micro_f1, 2.0 * tp / (2.0 * tp + fp + fn));
}

TEST(Metrics, AllNegativePredictionsGiveZeroF1) {
  const Fixture f = load_fixture();
  const Metrics m = compute_metrics(ScoreMatrix(f.gold.docs, f.gold.labels, 0.0), f.gold, 0.5, f.rare_ids);
  EXPECT_EQ(m.macro_f1, 0.0);
  EXPECT_EQ(m.micro_f1, 0.0);
}

TEST(Metrics, PrecisionAtKInvariantUnderMonotoneTransform) {
  const Fixture f = load_fixture();
  ScoreMatrix t = f.scores;
  for (auto& v : t.values) v = std::exp(3.0 * v) - 7.0;
  for (std::size_t k : {1, 2, 3, 5, 8}) EXPECT_DOUBLE_EQ(precision_at_k(t, f.gold, k), precision_at_k(f.scores, f.gold, k));
}

TEST(Metrics, PrecisionAtKBreaksTiesByLabelIndex) {
  ScoreMatrix y(1, 3), yhat(1, 3, 0.5);
  y(0, 0) = 1;
  EXPECT_DOUBLE_EQ(precision_at_k(yhat, y, 1), 1.0);
  y(0, 0) = 0;
  y(0, 2) = 1;
  EXPECT_DOUBLE_EQ(precision_at_k(yhat, y, 1), 0.0);
}

TEST(Metrics, NoPositivesRejected) {
  EXPECT_THROW(compute_metrics(ScoreMatrix(2, 2), ScoreMatrix(2, 2)), DataError);
}

TEST(Metrics, ShapeMismatchAndBadThresholdRejected) {
  ScoreMatrix y(2, 2);
  y(0, 0) = 1;
  EXPECT_THROW(compute_metrics(ScoreMatrix(2, 3), y), DataError);
  EXPECT_THROW(compute_metrics(ScoreMatrix(2, 2), y, 1.0), UsageError);
}

TEST(Train, ZeroEpochsReturnsInitialParameters) {
  const Corpus c = tiny_corpus();
  TrainConfig cfg = tiny_config();
  cfg.epochs = 0;
  Model model(cfg.model, c.vocab_size(), prepare_graph_inputs(c, cfg.model, cfg.rare_threshold), 1);
  const nn::ParameterStore before = model.params();
  const TrainResult r = train(cfg, c, model);
  EXPECT_TRUE(r.history.empty());
  EXPECT_EQ(r.best_epoch, 0u);
  for (const auto& p : model.params()) EXPECT_TRUE(p.value == before.get(p.name).value) << p.name;
}

TEST(Train, DeterministicForFixedSeed) {
  const Corpus c = tiny_corpus();
  const TrainConfig cfg = tiny_config();
  auto run = [&] {
    Model model(cfg.model, c.vocab_size(), prepare_graph_inputs(c, cfg.model, cfg.rare_threshold), cfg.seed);
    const TrainResult r = train(cfg, c, model);
    return std::make_pair(format_history(r.history), model.predict_all(c.test).values);
  };
  EXPECT_EQ(run(), run());
}

TEST(Train, LossDecreasesAndBestEpochIsRestored) {
  const Corpus c = tiny_corpus();
  TrainConfig cfg = tiny_config();
  cfg.epochs = 6;
  Model model(cfg.model, c.vocab_size(), prepare_graph_inputs(c, cfg.model, cfg.rare_threshold), cfg.seed);
  const TrainResult r = train(cfg, c, model);
  ASSERT_EQ(r.history.size(), 6u);
  EXPECT_LT(r.history.back().train_loss, r.history.front().train_loss);
  std::size_t best = 0;
  double best_f1 = -1;
  for (const auto& e : r.history)
    if (e.dev.macro_f1 > best_f1) {
      best_f1 = e.dev.macro_f1;
      best = e.epoch;
    }
  EXPECT_EQ(r.best_epoch, best);
  EXPECT_DOUBLE_EQ(evaluate(model, c.dev, cfg.threshold).macro_f1, best_f1);
}

TEST(Train, EarlyStoppingHonoursPatience) {
  const Corpus c = tiny_corpus();
  TrainConfig cfg = tiny_config();
  cfg.epochs = 30;
  cfg.patience = 1;
  Model model(cfg.model, c.vocab_size(), prepare_graph_inputs(c, cfg.model, cfg.rare_threshold), cfg.seed);
  const TrainResult r = train(cfg, c, model);
  ASSERT_FALSE(r.history.empty());
  if (r.history.size() < 30) {
    EXPECT_EQ(r.history.size(), r.best_epoch + 1);
    EXPECT_LE(r.history.back().dev.macro_f1, r.history[r.best_epoch - 1].dev.macro_f1);
  }
}

TEST(Ablation, RowsAndCsv) {
  const Corpus c = tiny_corpus();
  TrainConfig cfg = tiny_config();
  cfg.epochs = 1;
  const auto rows = run_ablation(cfg, c, {1, 2});
  ASSERT_EQ(rows.size(), 8u);
  const std::string csv = metrics_csv(rows);
  const auto lines = io::split_lines(csv);
  ASSERT_EQ(lines.size(), 9u);
  EXPECT_EQ(lines[0], kMetricsCsvHeader);
  EXPECT_EQ(lines[1].rfind("MI,1,test,", 0), 0u);
  EXPECT_EQ(lines[8].rfind("CE_des,2,test,", 0), 0u);
}

TEST(Ablation, CeAndDiAgreeBeforeTraining) {
  const Corpus c = tiny_corpus();
  TrainConfig cfg = tiny_config();
  cfg.model.mode = ModelMode::kDI;
  Model di(cfg.model, c.vocab_size(), prepare_graph_inputs(c, cfg.model, cfg.rare_threshold), 5);
  cfg.model.mode = ModelMode::kCE;
  Model ce(cfg.model, c.vocab_size(), prepare_graph_inputs(c, cfg.model, cfg.rare_threshold), 5);
  const auto a = di.predict_all(c.test).values, b = ce.predict_all(c.test).values;
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  EXPECT_LT(m, 1e-12);
}
