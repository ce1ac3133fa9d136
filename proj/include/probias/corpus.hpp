#pragma once

// Multi-label corpora: documents, bundle files on disk, and chunking.
//
// Bundle layout (a directory):
//   labels.tsv    one `code<TAB>name` per line; line order is the label index
//   train.jsonl   one {"id": str, "text": str, "labels": [code, ...]} per line
//   dev.jsonl
//   test.jsonl
//   vocab.txt     optional; one token per line, fixes token ids. When absent the
//                 vocabulary is built from the training split in order of first
//                 appearance. Ids 0 and 1 are always <pad> and <unk>.

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "probias/error.hpp"
#include "probias/io.hpp"

namespace probias {

using LabelId = std::uint32_t;
using TokenId = std::uint32_t;

inline constexpr TokenId kPadId = 0;
inline constexpr TokenId kUnkId = 1;
inline constexpr const char* kPadToken = "<pad>";
inline constexpr const char* kUnkToken = "<unk>";

struct Document {
  std::string id;
  std::vector<TokenId> tokens;
  std::vector<LabelId> label_ids;  // sorted, unique

  bool operator==(const Document&) const = default;
};

struct LabelInfo {
  std::string code;
  std::string name;

  bool operator==(const LabelInfo&) const = default;
};

enum class Split { kTrain, kDev, kTest };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kDev: return "dev";
    case Split::kTest: return "test";
  }
  return "?";
}

struct Corpus {
  std::vector<LabelInfo> labels;
  std::vector<std::string> token_vocab;
  std::vector<Document> train;
  std::vector<Document> dev;
  std::vector<Document> test;

  std::size_t label_count() const noexcept { return labels.size(); }
  std::size_t vocab_size() const noexcept { return token_vocab.size(); }

  const std::vector<Document>& split(Split s) const {
    switch (s) {
      case Split::kTrain: return train;
      case Split::kDev: return dev;
      case Split::kTest: return test;
    }
    return train;
  }

  bool operator==(const Corpus&) const = default;
};

// Whitespace split followed by ASCII lowercasing.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto uc = static_cast<unsigned char>(ch);
    if (std::isspace(uc)) {
      if (!cur.empty()) out.push_back(std::move(cur)), cur.clear();
    } else {
      cur.push_back(static_cast<char>(std::tolower(uc)));
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

// Throws DataError if the corpus breaks any structural invariant.
inline void validate_corpus(const Corpus& c) {
  if (c.token_vocab.size() < 2 || c.token_vocab[kPadId] != kPadToken || c.token_vocab[kUnkId] != kUnkToken)
    throw DataError("token vocabulary must start with <pad>, <unk>");
  std::unordered_set<std::string> ids;
  for (Split s : {Split::kTrain, Split::kDev, Split::kTest}) {
    for (const Document& d : c.split(s)) {
      if (!ids.insert(d.id).second) throw DataError("duplicate document id '" + d.id + "'");
      if (d.tokens.empty()) throw DataError("document '" + d.id + "' is empty");
      if (d.label_ids.empty()) throw DataError("document '" + d.id + "' has no labels");
      for (TokenId t : d.tokens)
        if (t >= c.vocab_size()) throw DataError("document '" + d.id + "' has token id out of range");
      for (std::size_t i = 0; i < d.label_ids.size(); ++i) {
        if (d.label_ids[i] >= c.label_count()) throw DataError("document '" + d.id + "' has label id out of range");
        if (i > 0 && d.label_ids[i] <= d.label_ids[i - 1])
          throw DataError("document '" + d.id + "' label ids not sorted and unique");
      }
    }
  }
}

namespace detail {

inline std::vector<LabelInfo> parse_labels_tsv(const std::filesystem::path& path) {
  std::vector<LabelInfo> labels;
  std::unordered_set<std::string> seen;
  const auto lines = io::split_lines(io::read_file(path));
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto tab = lines[i].find('\t');
    if (tab == std::string::npos || tab == 0)
      throw DataError(path.filename().string() + ":" + std::to_string(i + 1) + ": expected code<TAB>name");
    LabelInfo info{lines[i].substr(0, tab), lines[i].substr(tab + 1)};
    if (!seen.insert(info.code).second)
      throw DataError(path.filename().string() + ":" + std::to_string(i + 1) + ": duplicate label code '" + info.code + "'");
    labels.push_back(std::move(info));
  }
  if (labels.empty()) throw DataError("labels.tsv defines no labels");
  return labels;
}

class VocabIndex {
 public:
  explicit VocabIndex(std::vector<std::string>& vocab, bool grow) : vocab_(vocab), grow_(grow) {
    for (std::size_t i = 0; i < vocab_.size(); ++i) index_.emplace(vocab_[i], static_cast<TokenId>(i));
  }
  TokenId lookup(const std::string& tok) {
    auto it = index_.find(tok);
    if (it != index_.end()) return it->second;
    if (!grow_) return kUnkId;
    const auto id = static_cast<TokenId>(vocab_.size());
    vocab_.push_back(tok);
    index_.emplace(tok, id);
    return id;
  }
  void freeze() { grow_ = false; }

 private:
  std::vector<std::string>& vocab_;
  bool grow_;
  std::unordered_map<std::string, TokenId> index_;
};

inline std::vector<Document> parse_split(const std::filesystem::path& path, VocabIndex& vocab,
                                         const std::unordered_map<std::string, LabelId>& label_index) {
  std::vector<Document> docs;
  const auto lines = io::split_lines(io::read_file(path));
  const std::string fname = path.filename().string();
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::string where = fname + ":" + std::to_string(i + 1);
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(lines[i]);
    } catch (const nlohmann::json::parse_error& e) {
      throw DataError(where + ": malformed JSON (" + e.what() + ")");
    }
    if (!obj.is_object() || !obj.contains("id") || !obj["id"].is_string() || !obj.contains("text") ||
        !obj["text"].is_string() || !obj.contains("labels") || !obj["labels"].is_array())
      throw DataError(where + ": expected object with string 'id', string 'text', array 'labels'");
    Document d;
    d.id = obj["id"].get<std::string>();
    for (const auto& tok : tokenize(obj["text"].get<std::string>())) d.tokens.push_back(vocab.lookup(tok));
    if (d.tokens.empty()) throw DataError(where + ": empty document '" + d.id + "'");
    std::set<LabelId> ids;
    for (const auto& lab : obj["labels"]) {
      if (!lab.is_string()) throw DataError(where + ": label entries must be strings");
      const auto code = lab.get<std::string>();
      auto it = label_index.find(code);
      if (it == label_index.end()) throw DataError(where + ": unknown label '" + code + "'");
      ids.insert(it->second);
    }
    if (ids.empty()) throw DataError(where + ": document '" + d.id + "' has no labels");
    d.label_ids.assign(ids.begin(), ids.end());
    docs.push_back(std::move(d));
  }
  return docs;
}

}  // namespace detail

inline Corpus load_corpus(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw DataError("corpus bundle not found: " + dir.string());
  Corpus c;
  c.labels = detail::parse_labels_tsv(dir / "labels.tsv");
  std::unordered_map<std::string, LabelId> label_index;
  for (std::size_t i = 0; i < c.labels.size(); ++i) label_index.emplace(c.labels[i].code, static_cast<LabelId>(i));

  const bool fixed_vocab = std::filesystem::exists(dir / "vocab.txt");
  if (fixed_vocab) {
    c.token_vocab = io::split_lines(io::read_file(dir / "vocab.txt"));
    if (c.token_vocab.size() < 2 || c.token_vocab[0] != kPadToken || c.token_vocab[1] != kUnkToken)
      throw DataError("vocab.txt must begin with <pad> and <unk>");
  } else {
    c.token_vocab = {kPadToken, kUnkToken};
  }
  detail::VocabIndex vocab(c.token_vocab, !fixed_vocab);
  c.train = detail::parse_split(dir / "train.jsonl", vocab, label_index);
  vocab.freeze();
  c.dev = detail::parse_split(dir / "dev.jsonl", vocab, label_index);
  c.test = detail::parse_split(dir / "test.jsonl", vocab, label_index);
  validate_corpus(c);
  return c;
}

inline void save_corpus(const Corpus& c, const std::filesystem::path& dir) {
  validate_corpus(c);
  std::filesystem::create_directories(dir);
  std::string labels;
  for (const auto& l : c.labels) labels += l.code + "\t" + l.name + "\n";
  io::write_file_atomic(dir / "labels.tsv", labels);
  std::string vocab;
  for (const auto& t : c.token_vocab) vocab += t + "\n";
  io::write_file_atomic(dir / "vocab.txt", vocab);
  for (Split s : {Split::kTrain, Split::kDev, Split::kTest}) {
    std::string out;
    for (const Document& d : c.split(s)) {
      std::string text;
      for (std::size_t i = 0; i < d.tokens.size(); ++i) {
        if (i) text.push_back(' ');
        text += c.token_vocab[d.tokens[i]];
      }
      nlohmann::json codes = nlohmann::json::array();
      for (LabelId l : d.label_ids) codes.push_back(c.labels[l].code);
      nlohmann::json obj = {{"id", d.id}, {"text", text}, {"labels", codes}};
      out += obj.dump() + "\n";
    }
    io::write_file_atomic(dir / (std::string(split_name(s)) + ".jsonl"), out);
  }
}

struct Chunk {
  std::string doc_id;
  std::size_t chunk_index = 0;
  std::vector<TokenId> token_ids;     // length chunk_len
  std::vector<std::uint8_t> pad_mask;  // 1 = real token; pads form a suffix

  std::size_t real_count() const {
    return static_cast<std::size_t>(std::count(pad_mask.begin(), pad_mask.end(), std::uint8_t{1}));
  }
};

// Windows of `chunk_len` tokens advancing by chunk_len - overlap until every token
// is covered; the last window is right-padded with kPadId. A nonzero `max_tokens`
// truncates the document first.
inline std::vector<Chunk> chunk_document(const Document& doc, std::size_t chunk_len, std::size_t overlap,
                                         std::size_t max_tokens = 0) {
  if (chunk_len == 0) throw UsageError("chunk_len must be positive");
  if (overlap >= chunk_len)
    throw UsageError("overlap (" + std::to_string(overlap) + ") must be smaller than chunk_len (" +
                     std::to_string(chunk_len) + ")");
  if (doc.tokens.empty()) throw DataError("cannot chunk empty document '" + doc.id + "'");
  const std::size_t n = max_tokens > 0 ? std::min(max_tokens, doc.tokens.size()) : doc.tokens.size();
  const std::size_t stride = chunk_len - overlap;
  std::vector<Chunk> chunks;
  for (std::size_t start = 0;; start += stride) {
    Chunk ch;
    ch.doc_id = doc.id;
    ch.chunk_index = chunks.size();
    ch.token_ids.assign(chunk_len, kPadId);
    ch.pad_mask.assign(chunk_len, 0);
    for (std::size_t t = 0; t < chunk_len && start + t < n; ++t) {
      ch.token_ids[t] = doc.tokens[start + t];
      ch.pad_mask[t] = 1;
    }
    chunks.push_back(std::move(ch));
    if (start + chunk_len >= n) break;
  }
  return chunks;
}

}  // namespace probias
