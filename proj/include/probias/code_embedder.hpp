#pragma once

// Label descriptions and the frozen embedder that turns them into the initial
// per-label feature vectors.
//
// Descriptions come from a cache file, an offline stub, or a chat-completion
// style HTTP endpoint. The embedder is a mean of frozen, hash-seeded token
// vectors; it has no trainable state.

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "probias/corpus.hpp"
#include "probias/error.hpp"
#include "probias/io.hpp"
#include "probias/tensor.hpp"

namespace probias {

inline constexpr const char* kPromptContextHeader = "## Clinical context";
inline constexpr const char* kPromptProcedureHeader = "## Procedural and diagnostic detail";
inline constexpr const char* kPromptComorbidityHeader = "## Common comorbidities";

inline std::string render_prompt(std::string_view code, std::string_view name) {
  if (name.empty()) throw UsageError("render_prompt: code name must not be empty");
  std::string c(code), n(name);
  std::string p;
  p += "You are a clinical coding specialist. Write a structured description of the ICD code " + c + " (\"" + n +
       "\").\n\n";
  p += std::string(kPromptContextHeader) + "\n";
  p += "Describe the clinical settings, typical presentation and affected patients for " + n + ".\n\n";
  p += std::string(kPromptProcedureHeader) + "\n";
  p += "Describe the diagnostic criteria, procedures and methods used to identify or treat " + n + ".\n\n";
  p += std::string(kPromptComorbidityHeader) + "\n";
  p += "List conditions that frequently co-occur with " + n + " and explain how they relate to it.\n\n";
  p += "Answer in plain prose under the three headings above.\n";
  return p;
}

enum class DescriptionSource { kStub, kCache, kRemote };

inline const char* source_name(DescriptionSource s) {
  switch (s) {
    case DescriptionSource::kStub: return "stub";
    case DescriptionSource::kCache: return "cache";
    case DescriptionSource::kRemote: return "remote";
  }
  return "?";
}

inline DescriptionSource parse_source(std::string_view s) {
  if (s == "stub") return DescriptionSource::kStub;
  if (s == "cache") return DescriptionSource::kCache;
  if (s == "remote") return DescriptionSource::kRemote;
  throw DataError("unknown description source '" + std::string(s) + "'");
}

struct CodeDescription {
  std::string code;
  std::string text;
  DescriptionSource source = DescriptionSource::kStub;

  bool operator==(const CodeDescription&) const = default;
};

// Deterministic offline description covering the same three sections as the prompt.
inline std::string stub_description(std::string_view code, std::string_view name) {
  std::string c(code), n(name);
  return n + " (" + c + "). Clinical context: " + n + " is recorded when the clinical notes document " + n +
         ". Procedural and diagnostic detail: " + n + " is confirmed from the findings and procedures coded as " + c +
         ". Common comorbidities: conditions frequently documented together with " + n + ".";
}

// One JSON object per line: {"code": ..., "description": ..., "source": ...}.
// The whole file is rewritten atomically on every insert.
class DescriptionCache {
 public:
  explicit DescriptionCache(std::filesystem::path path) : path_(std::move(path)) {
    if (!std::filesystem::exists(path_)) return;
    const auto lines = io::split_lines(io::read_file(path_));
    for (std::size_t i = 0; i < lines.size(); ++i) {
      try {
        const auto j = nlohmann::json::parse(lines[i]);
        CodeDescription d{j.at("code").get<std::string>(), j.at("description").get<std::string>(),
                          parse_source(j.at("source").get<std::string>())};
        if (d.text.empty()) throw DataError("empty description");
        if (!entries_.count(d.code)) order_.push_back(d.code);
        entries_[d.code] = std::move(d);
      } catch (const std::exception& e) {
        throw DataError(path_.string() + ":" + std::to_string(i + 1) + ": " + e.what());
      }
    }
  }

  std::optional<CodeDescription> get(const std::string& code) const {
    std::lock_guard lock(mu_);
    auto it = entries_.find(code);
    if (it == entries_.end()) return std::nullopt;
    return it->second;
  }

  void put(const CodeDescription& d) {
    if (d.text.empty()) throw DataError("refusing to cache an empty description for " + d.code);
    std::lock_guard lock(mu_);
    if (!entries_.count(d.code)) order_.push_back(d.code);
    entries_[d.code] = d;
    std::string out;
    for (const auto& code : order_) {
      const auto& e = entries_.at(code);
      out += nlohmann::json{{"code", e.code}, {"description", e.text}, {"source", source_name(e.source)}}.dump() + "\n";
    }
    io::write_file_atomic(path_, out);
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return entries_.size();
  }
  const std::filesystem::path& path() const noexcept { return path_; }

 private:
  std::filesystem::path path_;
  mutable std::mutex mu_;
  std::unordered_map<std::string, CodeDescription> entries_;
  std::vector<std::string> order_;
};

inline constexpr const char* kLlmTokenEnv = "PROBIAS_LLM_TOKEN";

struct LlmClientConfig {
  std::string endpoint = "http://localhost:8000/v1/chat/completions";
  std::string model = "gpt-4o";
  double temperature = 0.2;
  int timeout_seconds = 60;
};

enum class DescribeMode { kStub, kRemote };

struct FetchOptions {
  DescribeMode mode = DescribeMode::kStub;
  LlmClientConfig llm;
  bool allow_stub_fallback = false;
};

namespace detail {

struct ParsedUrl {
  std::string scheme_host_port;
  std::string path;
};

inline ParsedUrl split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw UsageError("endpoint must be an absolute URL: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

}  // namespace detail

// Sends the rendered prompt to the configured endpoint and returns the reply text.
inline std::string request_remote_description(const LlmClientConfig& cfg, const std::string& prompt) {
  const auto url = detail::split_url(cfg.endpoint);
  httplib::Client client(url.scheme_host_port);
  client.set_connection_timeout(cfg.timeout_seconds);
  client.set_read_timeout(cfg.timeout_seconds);
  httplib::Headers headers;
  if (const char* tok = std::getenv(kLlmTokenEnv); tok != nullptr && *tok != '\0')
    headers.emplace("Authorization", std::string("Bearer ") + tok);
  const nlohmann::json body = {{"model", cfg.model},
                               {"temperature", cfg.temperature},
                               {"messages", nlohmann::json::array({{{"role", "user"}, {"content", prompt}}})}};
  auto res = client.Post(url.path, headers, body.dump(), "application/json");
  if (!res) throw DataError("description endpoint unreachable: " + httplib::to_string(res.error()));
  if (res->status != 200) throw DataError("description endpoint returned HTTP " + std::to_string(res->status));
  std::string text;
  try {
    const auto j = nlohmann::json::parse(res->body);
    text = j.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const std::exception& e) {
    throw DataError(std::string("unexpected description endpoint reply: ") + e.what());
  }
  if (tokenize(text).empty()) throw DataError("description endpoint returned an empty reply");
  return text;
}

inline CodeDescription fetch_description(const std::string& code, const std::string& name, const FetchOptions& opt,
                                         DescriptionCache& cache) {
  if (auto hit = cache.get(code)) {
    hit->source = DescriptionSource::kCache;
    return *hit;
  }
  CodeDescription d{code, "", DescriptionSource::kStub};
  if (opt.mode == DescribeMode::kRemote) {
    try {
      d.text = request_remote_description(opt.llm, render_prompt(code, name));
      d.source = DescriptionSource::kRemote;
    } catch (const DataError&) {
      if (!opt.allow_stub_fallback) throw;
    }
  }
  if (d.text.empty()) {
    if (name.empty()) throw UsageError("code " + code + " has an empty name");
    d.text = stub_description(code, name);
    d.source = DescriptionSource::kStub;
  }
  cache.put(d);
  return d;
}

// Mean of frozen per-token vectors. Each token's vector is drawn from a
// generator seeded by a hash of the token and the table seed, so the table is
// never materialized and never trained.
class HashEmbedder {
 public:
  HashEmbedder(std::size_t dim, std::uint64_t seed) : dim_(dim), seed_(seed) {
    if (dim_ == 0) throw UsageError("embedding dimension must be positive");
  }

  std::size_t dim() const noexcept { return dim_; }

  std::vector<double> token_vector(std::string_view token) const {
    std::uint64_t state = fnv1a(token) ^ (seed_ * 0x9E3779B97F4A7C15ULL);
    std::vector<double> v(dim_);
    const double scale = std::sqrt(3.0 / static_cast<double>(dim_));  // unit expected squared norm
    for (auto& x : v) {
      const double u = static_cast<double>(splitmix64(state) >> 11) * 0x1.0p-53;  // [0, 1)
      x = (2.0 * u - 1.0) * scale;
    }
    return v;
  }

  std::vector<double> embed(std::string_view text) const {
    const auto toks = tokenize(text);
    if (toks.empty()) throw DataError("cannot embed an empty description");
    std::vector<double> acc(dim_, 0.0);
    for (const auto& t : toks) {
      const auto v = token_vector(t);
      for (std::size_t i = 0; i < dim_; ++i) acc[i] += v[i];
    }
    for (auto& x : acc) x /= static_cast<double>(toks.size());
    return acc;
  }

 private:
  static std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : s) {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001b3ULL;
    }
    return h;
  }
  static std::uint64_t splitmix64(std::uint64_t& x) {
    std::uint64_t z = (x += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  std::size_t dim_;
  std::uint64_t seed_;
};

inline std::vector<double> embed_description(const CodeDescription& desc, const HashEmbedder& embedder) {
  return embedder.embed(desc.text);
}

// N x d initial label features. With `descriptions` empty the bare label names
// are embedded; otherwise descriptions[i] belongs to label i.
inline nn::Tensor embed_labels(const std::vector<LabelInfo>& labels, const std::vector<CodeDescription>& descriptions,
                               const HashEmbedder& embedder) {
  if (!descriptions.empty() && descriptions.size() != labels.size())
    throw DataError("description count does not match label count");
  nn::Tensor out(labels.size(), embedder.dim());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto v = descriptions.empty() ? embedder.embed(labels[i].name.empty() ? labels[i].code : labels[i].name) : embed_description(descriptions[i], embedder);
    std::copy(v.begin(), v.end(), out.row(i).begin());
  }
  return out;
}

}  // namespace probias
