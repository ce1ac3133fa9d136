#include <chrono>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "probias/probias.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace probias;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

// Flag values; unset optionals leave the config file's value in place.
struct Options {
  std::string config_path;
  std::string out_dir;
  std::string corpus_dir;
  std::string spec_path;
  std::string checkpoint;
  std::string descriptions;
  std::string cache_path;
  std::string describe_mode = "stub";
  bool allow_stub_fallback = false;
  std::size_t seeds = 5;
  std::vector<std::string> modes;

  std::optional<std::size_t> bins, graph_layers, rare_threshold, chunk_len, overlap, epochs, dim, heads, encoder_blocks,
      accumulation, patience;
  std::optional<std::string> mode;
  std::optional<std::uint64_t> seed;
  std::optional<double> threshold, lr, dropout;
};

void add_model_flags(CLI::App* cmd, Options& o) {
  cmd->add_option("--config", o.config_path, "Run configuration (JSON)")->check(CLI::ExistingFile);
  cmd->add_option("--bins", o.bins, "Number of probability bins B");
  cmd->add_option("--graph-layers", o.graph_layers, "Graph encoder layers");
  cmd->add_option("--rare-threshold", o.rare_threshold, "Labels with train frequency below this are rare");
  cmd->add_option("--mode", o.mode, "Model mode: MI, DI, CE or CE_des");
  cmd->add_option("--seed", o.seed, "Random seed");
  cmd->add_option("--chunk-len", o.chunk_len, "Tokens per chunk");
  cmd->add_option("--overlap", o.overlap, "Tokens shared by consecutive chunks");
  cmd->add_option("--threshold", o.threshold, "Classification threshold");
  cmd->add_option("--epochs", o.epochs, "Training epochs");
  cmd->add_option("--lr", o.lr, "Peak learning rate");
  cmd->add_option("--dim", o.dim, "Model width");
  cmd->add_option("--heads", o.heads, "Attention heads");
  cmd->add_option("--encoder-blocks", o.encoder_blocks, "Document encoder blocks");
  cmd->add_option("--accumulation", o.accumulation, "Gradient accumulation steps");
  cmd->add_option("--patience", o.patience, "Early stopping patience (epochs)");
  cmd->add_option("--dropout", o.dropout, "Dropout rate");
}

RunConfig resolve_config(const Options& o) {
  RunConfig rc = o.config_path.empty() ? RunConfig{} : load_run_config(o.config_path);
  TrainConfig& t = rc.train;
  if (o.bins) t.model.bins = *o.bins;
  if (o.graph_layers) t.model.graph_layers = *o.graph_layers;
  if (o.rare_threshold) t.rare_threshold = *o.rare_threshold;
  if (o.mode) t.model.mode = parse_mode(*o.mode);
  if (o.seed) t.seed = *o.seed;
  if (o.chunk_len) t.model.chunk_len = *o.chunk_len;
  if (o.overlap) t.model.overlap = *o.overlap;
  if (o.threshold) t.threshold = *o.threshold;
  if (o.epochs) t.epochs = *o.epochs;
  if (o.lr) t.lr = *o.lr;
  if (o.dim) t.model.dim = *o.dim;
  if (o.heads) t.model.heads = *o.heads;
  if (o.encoder_blocks) t.model.encoder_blocks = *o.encoder_blocks;
  if (o.accumulation) t.accumulation = *o.accumulation;
  if (o.patience) t.patience = *o.patience;
  if (o.dropout) t.model.dropout = *o.dropout;
  validate_train_config(t);
  return rc;
}

void write_json(const fs::path& p, const json& j) { io::write_file_atomic(p, j.dump(2) + "\n"); }

void write_config_copy(const fs::path& out, const RunConfig& rc) { write_json(out / "config.json", to_json(rc)); }

json partition_json(const LabelPartition& p) {
  return {{"threshold", p.threshold}, {"n_common", p.n_common()}, {"n_rare", p.n_rare()}};
}

// Cached descriptions for every label; labels missing from the cache get stubs.
std::vector<CodeDescription> load_descriptions(const Options& o, const Corpus& c) {
  if (o.descriptions.empty()) return {};
  if (!fs::exists(o.descriptions)) throw DataError("description cache not found: " + o.descriptions);
  DescriptionCache cache(o.descriptions);
  std::vector<CodeDescription> out;
  for (const auto& l : c.labels) {
    auto hit = cache.get(l.code);
    out.push_back(hit ? *hit : CodeDescription{l.code, stub_description(l.code, l.name.empty() ? l.code : l.name),
                                               DescriptionSource::kStub});
  }
  return out;
}

int cmd_gen_corpus(const Options& o) {
  SyntheticSpec spec;
  RunConfig rc = o.config_path.empty() ? RunConfig{} : load_run_config(o.config_path);
  if (!o.spec_path.empty()) spec = load_synthetic_spec(o.spec_path);
  else if (rc.synthetic) spec = *rc.synthetic;
  else throw UsageError("gen-corpus needs --spec or a config with a 'synthetic' section");
  if (o.seed) spec.rng_seed = *o.seed;
  const Corpus c = generate_synthetic_corpus(spec);
  const fs::path out(o.out_dir);
  save_corpus(c, out);
  write_json(out / "spec.json", to_json(spec));
  const LabelStats stats = count_label_stats(c.train, c.label_count());
  json summary = {{"command", "gen-corpus"},
                  {"labels", c.label_count()},
                  {"vocab", c.vocab_size()},
                  {"train_docs", c.train.size()},
                  {"dev_docs", c.dev.size()},
                  {"test_docs", c.test.size()},
                  {"partition", partition_json(partition_labels(stats, rc.train.rare_threshold))}};
  write_json(out / "summary.json", summary);
  std::cout << summary.dump() << "\n";
  return kExitOk;
}

int cmd_stats(const Options& o) {
  const RunConfig rc = resolve_config(o);
  const Corpus c = load_corpus(o.corpus_dir);
  const LabelStats s = count_label_stats(c.train, c.label_count());
  const LabelPartition part = partition_labels(s, rc.train.rare_threshold);
  const ProbMatrix p = conditional_prob_matrix(s, part);
  const fs::path out(o.out_dir);

  std::string freq = "code,name,frequency,group\n";
  std::vector<std::uint8_t> is_rare(c.label_count(), 0);
  for (LabelId r : part.rare_ids) is_rare[r] = 1;
  for (std::size_t l = 0; l < c.label_count(); ++l)
    freq += c.labels[l].code + "," + c.labels[l].name + "," + std::to_string(s.freq(static_cast<LabelId>(l))) + "," +
            (is_rare[l] ? "rare" : "common") + "\n";
  io::write_file_atomic(out / "label_freq.csv", freq);

  std::string cooc = "rare_code,common_code,count,probability\n";
  for (std::size_t i = 0; i < part.n_rare(); ++i)
    for (std::size_t j = 0; j < part.n_common(); ++j) {
      const LabelId r = part.rare_ids[i], k = part.common_ids[j];
      cooc += c.labels[r].code + "," + c.labels[k].code + "," + std::to_string(s.cooc(r, k)) + "," +
              io::format_double(p(i, j)) + "\n";
    }
  io::write_file_atomic(out / "cooc.csv", cooc);
  write_config_copy(out, rc);

  std::size_t nonzero = 0;
  for (double v : p.values) nonzero += v > 0.0;
  json summary = {{"command", "stats"}, {"train_docs", s.n_train_docs()}, {"partition", partition_json(part)},
                  {"nonzero_pairs", nonzero}};
  write_json(out / "summary.json", summary);
  std::cout << summary.dump() << "\n";
  return kExitOk;
}

int cmd_build_graph(const Options& o) {
  const RunConfig rc = resolve_config(o);
  const Corpus c = load_corpus(o.corpus_dir);
  const std::size_t bins = rc.train.model.bins;
  const LabelStats s = count_label_stats(c.train, c.label_count());
  const BipartiteGraph g = build_graph_from_stats(s, rc.train.rare_threshold, bins);
  const auto& part = g.partition();
  const fs::path out(o.out_dir);

  std::string edges = "rare_code,common_code,probability,phi\n";
  std::vector<std::size_t> hist(bins + 1, 0);
  for (std::size_t i = 0; i < g.n_rare(); ++i)
    for (std::size_t j = 0; j < g.n_common(); ++j) {
      ++hist[g.phi()(i, j)];
      if (!g.edge(i, j)) continue;
      edges += c.labels[part.rare_ids[i]].code + "," + c.labels[part.common_ids[j]].code + "," +
               io::format_double(g.prob()(i, j)) + "," + std::to_string(g.phi()(i, j)) + "\n";
    }
  io::write_file_atomic(out / "edges.csv", edges);

  std::string bounds = "index,boundary\n";
  bool has_cooc = true;
  try {
    const BinBoundaries bb = compute_bin_boundaries(g.prob(), bins);
    for (std::size_t k = 0; k < bb.boundaries.size(); ++k) bounds += std::to_string(k) + "," + io::format_double(bb.boundaries[k]) + "\n";
  } catch (const NoCooccurrenceError&) {
    has_cooc = false;
  }
  io::write_file_atomic(out / "boundaries.csv", bounds);

  std::string h = "phi,count\n";
  for (std::size_t b = 0; b <= bins; ++b) h += std::to_string(b) + "," + std::to_string(hist[b]) + "\n";
  io::write_file_atomic(out / "phi_histogram.csv", h);
  write_config_copy(out, rc);

  std::size_t isolated = 0;
  for (std::size_t i = 0; i < g.n_rare(); ++i) isolated += g.isolated(i);
  json summary = {{"command", "build-graph"}, {"bins", bins},        {"partition", partition_json(part)},
                  {"edges", g.edge_count()},  {"isolated_rare", isolated}, {"has_cooccurrence", has_cooc}};
  write_json(out / "summary.json", summary);
  std::cout << summary.dump() << "\n";
  return kExitOk;
}

int cmd_describe(const Options& o) {
  const RunConfig rc = resolve_config(o);
  const Corpus c = load_corpus(o.corpus_dir);
  const fs::path out(o.out_dir);
  const fs::path cache_path = o.cache_path.empty() ? out / "descriptions.jsonl" : fs::path(o.cache_path);
  DescriptionCache cache(cache_path);
  FetchOptions fo;
  if (o.describe_mode == "stub") fo.mode = DescribeMode::kStub;
  else if (o.describe_mode == "remote") fo.mode = DescribeMode::kRemote;
  else throw UsageError("--mode must be stub or remote for describe");
  fo.llm = rc.llm;
  fo.allow_stub_fallback = o.allow_stub_fallback;
  std::map<std::string, std::size_t> by_source;
  for (const auto& l : c.labels) {
    const auto d = fetch_description(l.code, l.name.empty() ? l.code : l.name, fo, cache);
    ++by_source[source_name(d.source)];
  }
  write_config_copy(out, rc);
  json summary = {{"command", "describe"}, {"cache", cache_path.string()}, {"labels", c.label_count()}, {"sources", by_source}};
  write_json(out / "summary.json", summary);
  std::cout << summary.dump() << "\n";
  return kExitOk;
}

int cmd_train(const Options& o) {
  const RunConfig rc = resolve_config(o);
  const TrainConfig& cfg = rc.train;
  const Corpus c = load_corpus(o.corpus_dir);
  const fs::path out(o.out_dir);
  fs::create_directories(out);
  const auto start = std::chrono::steady_clock::now();
  Model model(cfg.model, c.vocab_size(), prepare_graph_inputs(c, cfg.model, cfg.rare_threshold, load_descriptions(o, c)),
              cfg.seed);
  const TrainResult r = train(cfg, c, model, [](const EpochRecord& e) {
    std::cerr << "epoch " << e.epoch << " loss " << e.train_loss << " dev macro_f1 " << e.dev.macro_f1 << "\n";
  });
  io::write_file_atomic(out / "history.jsonl", format_history(r.history));
  save_checkpoint(model.params(), out / "checkpoint.bin");
  std::vector<AblationRow> rows;
  if (!c.dev.empty()) rows.push_back({cfg.model.mode, cfg.seed, "dev", evaluate(model, c.dev, cfg.threshold), {}});
  if (!c.test.empty()) rows.push_back({cfg.model.mode, cfg.seed, "test", evaluate(model, c.test, cfg.threshold), {}});
  io::write_file_atomic(out / "metrics.csv", metrics_csv(rows));
  write_config_copy(out, rc);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  json summary = {{"command", "train"}, {"mode", mode_name(cfg.model.mode)}, {"seed", cfg.seed},
                  {"epochs_run", r.history.size()}, {"best_epoch", r.best_epoch}, {"seconds", secs},
                  {"parameters", model.params().scalar_count()}};
  for (const auto& row : rows) summary[row.split] = to_json(row.metrics);
  write_json(out / "summary.json", summary);
  std::cout << summary.dump() << "\n";
  return kExitOk;
}

int cmd_eval(Options o) {
  if (o.checkpoint.empty()) throw UsageError("eval needs --checkpoint");
  if (o.config_path.empty()) {
    const fs::path beside = fs::path(o.checkpoint).parent_path() / "config.json";
    if (fs::exists(beside)) o.config_path = beside.string();
  }
  const RunConfig rc = resolve_config(o);
  const TrainConfig& cfg = rc.train;
  const Corpus c = load_corpus(o.corpus_dir);
  Model model(cfg.model, c.vocab_size(), prepare_graph_inputs(c, cfg.model, cfg.rare_threshold, load_descriptions(o, c)),
              cfg.seed);
  load_checkpoint(model.params(), o.checkpoint);
  const fs::path out(o.out_dir);
  std::vector<AblationRow> rows;
  for (Split s : {Split::kDev, Split::kTest})
    if (!c.split(s).empty()) rows.push_back({cfg.model.mode, cfg.seed, split_name(s), evaluate(model, c.split(s), cfg.threshold), {}});
  if (rows.empty()) throw DataError("corpus has no dev or test documents to evaluate");
  io::write_file_atomic(out / "metrics.csv", metrics_csv(rows));
  write_config_copy(out, rc);
  json summary = {{"command", "eval"}, {"checkpoint", o.checkpoint}};
  for (const auto& row : rows) summary[row.split] = to_json(row.metrics);
  write_json(out / "summary.json", summary);
  std::cout << summary.dump() << "\n";
  return kExitOk;
}

int cmd_ablate(const Options& o) {
  const RunConfig rc = resolve_config(o);
  if (o.seeds == 0) throw UsageError("--seeds must be >= 1");
  const Corpus c = load_corpus(o.corpus_dir);
  std::vector<ModelMode> modes;
  for (const auto& m : o.modes) modes.push_back(parse_mode(m));
  if (modes.empty()) modes = {ModelMode::kMI, ModelMode::kDI, ModelMode::kCE, ModelMode::kCEDes};
  std::vector<std::uint64_t> seeds;
  for (std::size_t s = 0; s < o.seeds; ++s) seeds.push_back(rc.train.seed + s);
  const fs::path out(o.out_dir);
  fs::create_directories(out);
  std::string history;
  const auto rows = run_ablation(rc.train, c, seeds, modes, load_descriptions(o, c), [&](const AblationRow& row) {
    std::cerr << mode_name(row.mode) << " seed " << row.seed << " rare_macro_f1 " << row.metrics.rare_macro_f1 << "\n";
    for (const auto& e : row.history)
      history += json{{"mode", mode_name(row.mode)}, {"seed", row.seed}, {"epoch", e.epoch}, {"train_loss", e.train_loss},
                      {"dev", to_json(e.dev)}}.dump() + "\n";
  });
  io::write_file_atomic(out / "metrics.csv", metrics_csv(rows));
  io::write_file_atomic(out / "history.jsonl", history);
  write_config_copy(out, rc);
  json means = json::object();
  for (ModelMode m : modes) {
    double rare = 0, macro = 0;
    std::size_t n = 0;
    for (const auto& r : rows)
      if (r.mode == m) {
        rare += r.metrics.rare_macro_f1;
        macro += r.metrics.macro_f1;
        ++n;
      }
    means[mode_name(m)] = {{"rare_macro_f1", rare / static_cast<double>(n)}, {"macro_f1", macro / static_cast<double>(n)}};
  }
  json summary = {{"command", "ablate"}, {"rows", rows.size()}, {"seeds", seeds}, {"mean", means}};
  write_json(out / "summary.json", summary);
  std::cout << summary.dump() << "\n";
  return kExitOk;
}

int cmd_gradcheck(const Options& o) {
  const RunConfig rc = resolve_config(o);
  SelfCheckConfig sc;
  // The check runs on a small instance; only explicit flags change its size.
  if (o.dim) sc.dim = *o.dim;
  if (o.heads) sc.heads = *o.heads;
  if (o.bins) sc.bins = *o.bins;
  if (sc.heads == 0 || sc.dim % sc.heads != 0) throw UsageError("--dim must be a multiple of --heads");
  sc.seed = rc.train.seed;
  const auto report = model_gradient_check(sc);
  const bool ok = report.max_rel_error < 1e-4;
  std::cout << "max relative error " << report.max_rel_error << " (" << report.checked << " scalars, worst "
            << report.worst_parameter << "[" << report.worst_index << "])\n";
  if (!o.out_dir.empty()) {
    const fs::path out(o.out_dir);
    write_config_copy(out, rc);
    write_json(out / "summary.json", {{"command", "gradcheck"}, {"max_rel_error", report.max_rel_error},
                                      {"checked", report.checked}, {"worst_parameter", report.worst_parameter},
                                      {"passed", ok}});
  }
  return ok ? kExitOk : kExitNumeric;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Long-tail multi-label classifier with co-occurrence encoding", "probias"};
  app.require_subcommand(1);
  Options o;

  auto* gen = app.add_subcommand("gen-corpus", "Generate a synthetic corpus bundle");
  gen->add_option("--spec", o.spec_path, "Synthetic corpus spec (JSON)")->check(CLI::ExistingFile);
  gen->add_option("--config", o.config_path, "Run configuration whose 'synthetic' section is used")->check(CLI::ExistingFile);
  gen->add_option("--seed", o.seed, "Override the spec's rng_seed");
  gen->add_option("--out", o.out_dir, "Output bundle directory")->required();

  auto* stats = app.add_subcommand("stats", "Label frequencies and co-occurrence probabilities");
  auto* graph = app.add_subcommand("build-graph", "Bipartite graph, bin boundaries and phi histogram");
  auto* describe = app.add_subcommand("describe", "Fetch label descriptions into a cache");
  auto* train_cmd = app.add_subcommand("train", "Train one model");
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  auto* ablate = app.add_subcommand("ablate", "Train every mode over several seeds");
  auto* grad = app.add_subcommand("gradcheck", "Finite-difference gradient check");

  for (CLI::App* cmd : {stats, graph, train_cmd, eval_cmd, ablate}) {
    add_model_flags(cmd, o);
    cmd->add_option("--corpus", o.corpus_dir, "Corpus bundle directory")->required()->check(CLI::ExistingDirectory);
    cmd->add_option("--out", o.out_dir, "Output directory")->required();
  }
  for (CLI::App* cmd : {train_cmd, eval_cmd, ablate})
    cmd->add_option("--descriptions", o.descriptions, "Description cache for CE_des features");
  eval_cmd->add_option("--checkpoint", o.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  ablate->add_option("--seeds", o.seeds, "Number of seeds, counting up from --seed");
  ablate->add_option("--modes", o.modes, "Subset of modes (default: all four)");

  describe->add_option("--config", o.config_path, "Run configuration (JSON)")->check(CLI::ExistingFile);
  describe->add_option("--corpus", o.corpus_dir, "Corpus bundle directory")->required()->check(CLI::ExistingDirectory);
  describe->add_option("--out", o.out_dir, "Output directory")->required();
  describe->add_option("--mode", o.describe_mode, "stub or remote");
  describe->add_option("--cache", o.cache_path, "Description cache (JSONL)");
  describe->add_flag("--allow-stub-fallback", o.allow_stub_fallback, "Use the stub when the endpoint fails");

  add_model_flags(grad, o);
  grad->add_option("--out", o.out_dir, "Optional output directory for a summary");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    CLI::App* cmd = app.get_subcommands().front();
    const std::string name = cmd->get_name();
    if (name == "gen-corpus") return cmd_gen_corpus(o);
    if (name == "stats") return cmd_stats(o);
    if (name == "build-graph") return cmd_build_graph(o);
    if (name == "describe") return cmd_describe(o);
    if (name == "train") return cmd_train(o);
    if (name == "eval") return cmd_eval(o);
    if (name == "ablate") return cmd_ablate(o);
    if (name == "gradcheck") return cmd_gradcheck(o);
    std::cerr << app.help();
    return kExitUsage;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  }
}
