#pragma once

// Synthetic long-tail multi-label corpora with planted rare -> common links.
//
// Labels 0 .. n_common-1 are the intended common labels, followed by the rare
// ones. Label l enters a document independently with probability
// 0.5 * (l + 1)^(-power_law_exponent). After that, for every planted link
// (r, c, p) in list order and every document carrying r, the presence of c is
// redrawn as Bernoulli(p), so P(c | r) = p up to later links that share c.
// Each label owns a disjoint block of `signal_tokens_per_label` vocabulary words;
// a document receives that many draws (with replacement) from each of its
// labels' blocks, then noise words drawn uniformly from the whole vocabulary so
// that they make up `noise_token_rate` of the document.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "probias/corpus.hpp"
#include "probias/error.hpp"
#include "probias/io.hpp"

namespace probias {

struct PlantedLink {
  std::size_t rare = 0;    // index among rare labels
  std::size_t common = 0;  // index among common labels
  double probability = 1.0;

  bool operator==(const PlantedLink&) const = default;
};

struct SyntheticSpec {
  std::size_t n_common = 10;
  std::size_t n_rare = 40;
  std::size_t vocab_size = 1000;
  std::size_t train_docs = 2000;
  std::size_t dev_docs = 400;
  std::size_t test_docs = 400;
  double power_law_exponent = 1.0;
  std::vector<PlantedLink> planted_links;
  std::size_t signal_tokens_per_label = 4;
  double noise_token_rate = 0.5;
  std::uint64_t rng_seed = 0;

  bool operator==(const SyntheticSpec&) const = default;
};

inline void validate_synthetic_spec(const SyntheticSpec& s) {
  auto fail = [](const std::string& m) { throw DataError("synthetic spec: " + m); };
  if (s.n_common == 0 || s.n_rare == 0) fail("n_common and n_rare must be positive");
  if (s.vocab_size == 0 || s.signal_tokens_per_label == 0) fail("vocab_size and signal_tokens_per_label must be positive");
  if (s.train_docs == 0 || s.dev_docs == 0 || s.test_docs == 0) fail("document counts must be positive");
  if (!(s.power_law_exponent > 0.0)) fail("power_law_exponent must be positive");
  if (!(s.noise_token_rate >= 0.0 && s.noise_token_rate < 1.0)) fail("noise_token_rate must lie in [0, 1)");
  for (const auto& l : s.planted_links) {
    if (l.rare >= s.n_rare || l.common >= s.n_common) fail("planted link index out of range");
    if (!(l.probability > 0.0 && l.probability <= 1.0)) fail("planted probability must lie in (0, 1]");
  }
  if (s.vocab_size < (s.n_common + s.n_rare) * s.signal_tokens_per_label)
    fail("infeasible: vocab_size " + std::to_string(s.vocab_size) + " is smaller than " +
         std::to_string((s.n_common + s.n_rare) * s.signal_tokens_per_label) + " disjoint signal tokens");
}

inline Corpus generate_synthetic_corpus(const SyntheticSpec& spec) {
  validate_synthetic_spec(spec);
  std::mt19937_64 rng(spec.rng_seed);
  const std::size_t n_labels = spec.n_common + spec.n_rare;
  const std::size_t s = spec.signal_tokens_per_label;

  Corpus c;
  for (std::size_t l = 0; l < n_labels; ++l) {
    const bool common = l < spec.n_common;
    const std::size_t k = common ? l : l - spec.n_common;
    char code[16];
    std::snprintf(code, sizeof code, "%c%03zu", common ? 'C' : 'R', k);
    c.labels.push_back({code, std::string(common ? "common" : "rare") + " condition " + std::to_string(k)});
  }
  c.token_vocab = {kPadToken, kUnkToken};
  for (std::size_t w = 0; w < spec.vocab_size; ++w) c.token_vocab.push_back("w" + std::to_string(w));

  // Shuffled word ids; label l owns words [l*s, (l+1)*s) of the permutation.
  std::vector<TokenId> words(spec.vocab_size);
  for (std::size_t w = 0; w < words.size(); ++w) words[w] = static_cast<TokenId>(w + 2);
  std::shuffle(words.begin(), words.end(), rng);

  std::vector<double> base(n_labels);
  for (std::size_t l = 0; l < n_labels; ++l)
    base[l] = 0.5 * std::pow(static_cast<double>(l + 1), -spec.power_law_exponent);
  std::discrete_distribution<std::size_t> fallback(base.begin(), base.end());
  std::uniform_int_distribution<std::size_t> any_word(0, spec.vocab_size - 1);
  std::uniform_int_distribution<std::size_t> signal_slot(0, s - 1);
  const double noise_ratio = spec.noise_token_rate / (1.0 - spec.noise_token_rate);

  auto make_split = [&](Split split, std::size_t count) {
    std::vector<Document> docs;
    docs.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
      std::vector<std::uint8_t> has(n_labels, 0);
      bool any = false;
      for (std::size_t l = 0; l < n_labels; ++l) {
        has[l] = std::bernoulli_distribution(base[l])(rng) ? 1 : 0;
        any = any || has[l];
      }
      if (!any) has[fallback(rng)] = 1;
      for (const auto& link : spec.planted_links) {
        if (!has[spec.n_common + link.rare]) continue;
        has[link.common] = std::bernoulli_distribution(link.probability)(rng) ? 1 : 0;
      }
      Document d;
      char id[32];
      std::snprintf(id, sizeof id, "%s-%06zu", split_name(split), i);
      d.id = id;
      for (std::size_t l = 0; l < n_labels; ++l) {
        if (!has[l]) continue;
        d.label_ids.push_back(static_cast<LabelId>(l));
        for (std::size_t k = 0; k < s; ++k) d.tokens.push_back(words[l * s + signal_slot(rng)]);
      }
      const auto n_noise = static_cast<std::size_t>(std::llround(static_cast<double>(d.tokens.size()) * noise_ratio));
      for (std::size_t k = 0; k < n_noise; ++k) d.tokens.push_back(words[any_word(rng)]);
      std::shuffle(d.tokens.begin(), d.tokens.end(), rng);
      docs.push_back(std::move(d));
    }
    return docs;
  };
  c.train = make_split(Split::kTrain, spec.train_docs);
  c.dev = make_split(Split::kDev, spec.dev_docs);
  c.test = make_split(Split::kTest, spec.test_docs);
  validate_corpus(c);
  return c;
}

inline nlohmann::json to_json(const SyntheticSpec& s) {
  nlohmann::json links = nlohmann::json::array();
  for (const auto& l : s.planted_links) links.push_back({{"rare", l.rare}, {"common", l.common}, {"probability", l.probability}});
  return {{"n_common", s.n_common},
          {"n_rare", s.n_rare},
          {"vocab_size", s.vocab_size},
          {"train_docs", s.train_docs},
          {"dev_docs", s.dev_docs},
          {"test_docs", s.test_docs},
          {"power_law_exponent", s.power_law_exponent},
          {"planted_links", links},
          {"signal_tokens_per_label", s.signal_tokens_per_label},
          {"noise_token_rate", s.noise_token_rate},
          {"rng_seed", s.rng_seed}};
}

inline SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j) {
  SyntheticSpec s;
  try {
    for (auto it = j.begin(); it != j.end(); ++it) {
      const std::string& k = it.key();
      if (k == "n_common") s.n_common = it->get<std::size_t>();
      else if (k == "n_rare") s.n_rare = it->get<std::size_t>();
      else if (k == "vocab_size") s.vocab_size = it->get<std::size_t>();
      else if (k == "train_docs") s.train_docs = it->get<std::size_t>();
      else if (k == "dev_docs") s.dev_docs = it->get<std::size_t>();
      else if (k == "test_docs") s.test_docs = it->get<std::size_t>();
      else if (k == "power_law_exponent") s.power_law_exponent = it->get<double>();
      else if (k == "signal_tokens_per_label") s.signal_tokens_per_label = it->get<std::size_t>();
      else if (k == "noise_token_rate") s.noise_token_rate = it->get<double>();
      else if (k == "rng_seed") s.rng_seed = it->get<std::uint64_t>();
      else if (k == "planted_links") {
        for (const auto& l : *it)
          s.planted_links.push_back({l.at("rare").get<std::size_t>(), l.at("common").get<std::size_t>(),
                                     l.at("probability").get<double>()});
      } else {
        throw DataError("synthetic spec: unknown key '" + k + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("synthetic spec: ") + e.what());
  }
  validate_synthetic_spec(s);
  return s;
}

inline SyntheticSpec load_synthetic_spec(const std::filesystem::path& path) {
  try {
    return synthetic_spec_from_json(nlohmann::json::parse(io::read_file(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

// Links each rare label to one common label, cycling through the commons, with
// probabilities drawn from `levels` in turn.
inline std::vector<PlantedLink> cyclic_links(std::size_t n_rare, std::size_t n_common, const std::vector<double>& levels) {
  std::vector<PlantedLink> links;
  for (std::size_t r = 0; r < n_rare; ++r) links.push_back({r, r % n_common, levels[r % levels.size()]});
  return links;
}

}  // namespace probias
