#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace probias;
using probias::testing::TempDir;
using probias::testing::write_text;

namespace {

void write_bundle(const std::filesystem::path& dir, const std::string& labels, const std::string& train,
                  const std::string& dev = "", const std::string& test = "") {
  write_text(dir / "labels.tsv", labels);
  write_text(dir / "train.jsonl", train);
  write_text(dir / "dev.jsonl", dev);
  write_text(dir / "test.jsonl", test);
}

std::string error_of(const std::filesystem::path& dir) {
  try {
    load_corpus(dir);
  } catch (const DataError& e) {
    return e.what();
  }
  return "";
}

Document doc_of_length(std::size_t n) {
  Document d{"d", {}, {0}};
  for (std::size_t i = 0; i < n; ++i) d.tokens.push_back(static_cast<TokenId>(i + 2));
  return d;
}

}  // namespace

TEST(Tokenize, SplitsOnWhitespaceAndLowercases) {
  EXPECT_EQ(tokenize("  Fever\tCOUGH\nnight  "), (std::vector<std::string>{"fever", "cough", "night"}));
  EXPECT_TRUE(tokenize(" \t ").empty());
}

TEST(LoadCorpus, MinimalBundle) {
  TempDir dir("corpus");
  write_bundle(dir.path(), "A\tanemia\n", R"({"id":"t1","text":"fever cough","labels":["A"]})" "\n");
  const Corpus c = load_corpus(dir.path());
  ASSERT_EQ(c.train.size(), 1u);
  EXPECT_EQ(c.train[0].tokens.size(), 2u);
  EXPECT_EQ(c.train[0].label_ids, std::vector<LabelId>{0});
  EXPECT_TRUE(c.dev.empty());
  EXPECT_EQ(c.token_vocab, (std::vector<std::string>{"<pad>", "<unk>", "fever", "cough"}));
}

TEST(LoadCorpus, UnknownLabelNamesCodeAndLine) {
  TempDir dir("corpus");
  write_bundle(dir.path(), "A\tanemia\n",
               R"({"id":"t1","text":"fever","labels":["A"]})" "\n" R"({"id":"t2","text":"x","labels":["ZZZ"]})" "\n");
  const std::string err = error_of(dir.path());
  EXPECT_NE(err.find("ZZZ"), std::string::npos) << err;
  EXPECT_NE(err.find("train.jsonl:2"), std::string::npos) << err;
}

TEST(LoadCorpus, DuplicateLabelsCollapse) {
  TempDir dir("corpus");
  write_bundle(dir.path(), "A\tanemia\n", R"({"id":"t1","text":"fever","labels":["A","A"]})" "\n");
  EXPECT_EQ(load_corpus(dir.path()).train[0].label_ids.size(), 1u);
}

TEST(LoadCorpus, MalformedLineReportsLineNumber) {
  TempDir dir("corpus");
  write_bundle(dir.path(), "A\tanemia\n", R"({"id":"t1","text":"fever","labels":["A"]})" "\n{not json\n");
  EXPECT_NE(error_of(dir.path()).find("train.jsonl:2"), std::string::npos);
}

TEST(LoadCorpus, EmptyDocumentRejected) {
  TempDir dir("corpus");
  write_bundle(dir.path(), "A\tanemia\n", R"({"id":"t1","text":"   ","labels":["A"]})" "\n");
  EXPECT_NE(error_of(dir.path()).find("empty document"), std::string::npos);
}

TEST(LoadCorpus, DocumentWithoutLabelsRejected) {
  TempDir dir("corpus");
  write_bundle(dir.path(), "A\tanemia\n", R"({"id":"t1","text":"fever","labels":[]})" "\n");
  EXPECT_NE(error_of(dir.path()).find("no labels"), std::string::npos);
}

TEST(LoadCorpus, DevTokensOutsideTrainVocabMapToUnk) {
  TempDir dir("corpus");
  write_bundle(dir.path(), "A\tanemia\n", R"({"id":"t1","text":"fever","labels":["A"]})" "\n",
               R"({"id":"d1","text":"fever rash","labels":["A"]})" "\n");
  const Corpus c = load_corpus(dir.path());
  EXPECT_EQ(c.dev[0].tokens, (std::vector<TokenId>{2, kUnkId}));
  EXPECT_EQ(c.vocab_size(), 3u);
}

TEST(LoadCorpus, DuplicateDocumentIdsAcrossSplitsRejected) {
  TempDir dir("corpus");
  write_bundle(dir.path(), "A\tanemia\n", R"({"id":"x","text":"fever","labels":["A"]})" "\n",
               R"({"id":"x","text":"fever","labels":["A"]})" "\n");
  EXPECT_NE(error_of(dir.path()).find("duplicate document id"), std::string::npos);
}

TEST(LoadCorpus, MissingBundleIsDataError) { EXPECT_THROW(load_corpus("/nonexistent/bundle"), DataError); }

TEST(SaveCorpus, RoundTripIsIdentity) {
  SyntheticSpec spec;
  spec.train_docs = 60;
  spec.dev_docs = 10;
  spec.test_docs = 10;
  spec.vocab_size = 300;
  spec.planted_links = cyclic_links(spec.n_rare, spec.n_common, {1.0, 0.5});
  const Corpus c = generate_synthetic_corpus(spec);
  TempDir dir("roundtrip");
  save_corpus(c, dir.path());
  EXPECT_TRUE(load_corpus(dir.path()) == c);
}

TEST(SaveCorpus, RoundTripWithoutVocabFileKeepsTrainOrder) {
  TempDir dir("corpus");
  write_bundle(dir.path(), "A\tanemia\nB\tbronchitis\n",
               R"({"id":"t1","text":"b a","labels":["B","A"]})" "\n" R"({"id":"t2","text":"c a","labels":["A"]})" "\n");
  const Corpus c = load_corpus(dir.path());
  TempDir out("corpus_out");
  save_corpus(c, out.path());
  EXPECT_TRUE(load_corpus(out.path()) == c);
}

TEST(ChunkDocument, TenTokensLengthFourOverlapTwo) {
  const auto chunks = chunk_document(doc_of_length(10), 4, 2);
  ASSERT_EQ(chunks.size(), 4u);
  for (std::size_t u = 0; u < 4; ++u) {
    EXPECT_EQ(chunks[u].chunk_index, u);
    EXPECT_EQ(chunks[u].token_ids[0], static_cast<TokenId>(2 * u + 2));
  }
  EXPECT_EQ(chunks.back().real_count(), 4u);
}

TEST(ChunkDocument, ShortDocumentPadsSuffix) {
  const auto chunks = chunk_document(doc_of_length(3), 4, 2);
  ASSERT_EQ(chunks.size(), 1u);
  EXPECT_EQ(chunks[0].pad_mask, (std::vector<std::uint8_t>{1, 1, 1, 0}));
  EXPECT_EQ(chunks[0].token_ids[3], kPadId);
}

TEST(ChunkDocument, FullScaleGeometrySingleChunk) {
  EXPECT_EQ(chunk_document(doc_of_length(512), 512, 255).size(), 1u);
  EXPECT_EQ(chunk_document(doc_of_length(513), 512, 255).size(), 2u);
}

TEST(ChunkDocument, OverlapMustBeSmallerThanLength) {
  EXPECT_THROW(chunk_document(doc_of_length(5), 4, 4), UsageError);
}

TEST(ChunkDocument, TruncatesToTokenBudget) {
  const auto chunks = chunk_document(doc_of_length(100), 8, 0, 20);
  ASSERT_EQ(chunks.size(), 3u);
  EXPECT_EQ(chunks.back().real_count(), 4u);
}

TEST(ChunkDocument, CoverageAndOverlapProperty) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t len = std::uniform_int_distribution<std::size_t>(1, 12)(rng);
    const std::size_t overlap = std::uniform_int_distribution<std::size_t>(0, len - 1)(rng);
    const std::size_t n = std::uniform_int_distribution<std::size_t>(1, 60)(rng);
    const auto chunks = chunk_document(doc_of_length(n), len, overlap);
    std::vector<int> covered(n, 0);
    for (std::size_t u = 0; u < chunks.size(); ++u) {
      const auto& ch = chunks[u];
      ASSERT_EQ(ch.token_ids.size(), len);
      ASSERT_GE(ch.real_count(), 1u);
      // Pads form a suffix.
      ASSERT_TRUE(std::is_sorted(ch.pad_mask.rbegin(), ch.pad_mask.rend()));
      const std::size_t start = u * (len - overlap);
      for (std::size_t t = 0; t < ch.real_count(); ++t) {
        ASSERT_EQ(ch.token_ids[t], static_cast<TokenId>(start + t + 2));
        ++covered[start + t];
      }
      if (u + 1 < chunks.size()) {
        ASSERT_EQ(ch.real_count(), len);
      }
    }
    for (int c : covered) ASSERT_GE(c, 1);
  }
}

TEST(Synthetic, ProbabilityOneLinkAlwaysAttachesCommon) {
  SyntheticSpec spec;
  spec.n_common = 3;
  spec.n_rare = 5;
  spec.vocab_size = 100;
  spec.train_docs = 2000;
  spec.planted_links = {{0, 0, 1.0}};
  const Corpus c = generate_synthetic_corpus(spec);
  std::size_t with_r0 = 0;
  for (const auto& d : c.train) {
    const bool r0 = std::binary_search(d.label_ids.begin(), d.label_ids.end(), LabelId{3});
    if (!r0) continue;
    ++with_r0;
    EXPECT_TRUE(std::binary_search(d.label_ids.begin(), d.label_ids.end(), LabelId{0}));
  }
  EXPECT_GE(with_r0, 50u);
}

TEST(Synthetic, SameSeedIsByteIdentical) {
  SyntheticSpec spec;
  spec.train_docs = 100;
  spec.planted_links = cyclic_links(spec.n_rare, spec.n_common, {0.8});
  TempDir a("syn_a"), b("syn_b");
  save_corpus(generate_synthetic_corpus(spec), a.path());
  save_corpus(generate_synthetic_corpus(spec), b.path());
  for (const char* f : {"labels.tsv", "vocab.txt", "train.jsonl", "dev.jsonl", "test.jsonl"})
    EXPECT_EQ(io::read_file(a.path() / f), io::read_file(b.path() / f)) << f;
  spec.rng_seed = 1;
  TempDir c("syn_c");
  save_corpus(generate_synthetic_corpus(spec), c.path());
  EXPECT_NE(io::read_file(a.path() / "train.jsonl"), io::read_file(c.path() / "train.jsonl"));
}

TEST(Synthetic, PlantedProbabilityWithinThreeSigma) {
  SyntheticSpec spec;
  spec.n_common = 1;
  spec.n_rare = 1;
  spec.vocab_size = 50;
  spec.power_law_exponent = 1e-6;
  spec.train_docs = 4200;
  spec.planted_links = {{0, 0, 0.7}};
  const Corpus c = generate_synthetic_corpus(spec);
  std::size_t with_r = 0, with_both = 0;
  for (const auto& d : c.train) {
    const bool r = std::binary_search(d.label_ids.begin(), d.label_ids.end(), LabelId{1});
    const bool cc = std::binary_search(d.label_ids.begin(), d.label_ids.end(), LabelId{0});
    with_r += r;
    with_both += r && cc;
  }
  ASSERT_GE(with_r, 2000u);
  const double p = static_cast<double>(with_both) / static_cast<double>(with_r);
  EXPECT_GE(p, 0.66);
  EXPECT_LE(p, 0.74);
}

TEST(Synthetic, PowerLawFrequenciesDecrease) {
  SyntheticSpec spec;
  spec.train_docs = 4000;
  const Corpus c = generate_synthetic_corpus(spec);
  const LabelStats s = count_label_stats(c.train, c.label_count());
  EXPECT_GT(s.freq(0), s.freq(4));
  EXPECT_GT(s.freq(4), s.freq(30));
  EXPECT_NEAR(static_cast<double>(s.freq(1)) / 4000.0, 0.25, 0.03);
}

TEST(Synthetic, SignalTokensAreDisjointPerLabel) {
  SyntheticSpec spec;
  spec.noise_token_rate = 0.0;
  spec.train_docs = 500;
  const Corpus c = generate_synthetic_corpus(spec);
  // Without noise, every token is a signal token of one of the document's labels,
  // so a token seen with label set A and with label set B implies a shared label.
  std::map<TokenId, std::set<LabelId>> owners;
  for (const auto& d : c.train) {
    for (TokenId t : d.tokens) {
      auto& o = owners[t];
      if (o.empty()) {
        o.insert(d.label_ids.begin(), d.label_ids.end());
      } else {
        std::set<LabelId> keep;
        for (LabelId l : d.label_ids)
          if (o.count(l)) keep.insert(l);
        o = keep;
      }
      ASSERT_FALSE(o.empty());
    }
  }
}

TEST(Synthetic, InfeasibleVocabularyRejected) {
  SyntheticSpec spec;
  spec.vocab_size = 10;
  EXPECT_THROW(generate_synthetic_corpus(spec), DataError);
}

TEST(Synthetic, InvalidPlantedProbabilityRejected) {
  SyntheticSpec spec;
  spec.planted_links = {{0, 0, 0.0}};
  EXPECT_THROW(generate_synthetic_corpus(spec), DataError);
  spec.planted_links = {{0, 0, 1.5}};
  EXPECT_THROW(generate_synthetic_corpus(spec), DataError);
}

TEST(Synthetic, SpecJsonRoundTrip) {
  SyntheticSpec spec;
  spec.planted_links = cyclic_links(spec.n_rare, spec.n_common, {1.0, 0.4});
  spec.rng_seed = 99;
  EXPECT_TRUE(synthetic_spec_from_json(to_json(spec)) == spec);
  EXPECT_THROW(synthetic_spec_from_json(nlohmann::json{{"bogus", 1}}), DataError);
}
