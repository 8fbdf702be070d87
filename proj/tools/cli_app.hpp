#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "skyalign/skyalign.hpp"

// The `skyalign` command line. run() never exits the process, so tests can
// drive every command in-process.
namespace skyalign::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumeric = 4;

namespace fs = std::filesystem;

struct Globals {
  std::optional<std::uint64_t> seed;
  unsigned threads = 1;
};

inline config::KeyValues load_config(const std::string& path) {
  config::KeyValues kv;
  if (!path.empty()) {
    if (!fs::exists(path)) throw ConfigError("config file '" + path + "' not found");
    kv = config::load(path);
  }
  config::apply_env_overrides(kv);
  return kv;
}

inline GenConfig gen_config(const config::KeyValues& kv, const Globals& g) {
  GenConfig cfg = config::to_gen_config(kv);
  if (g.seed) cfg.seed = *g.seed;
  return cfg;
}

inline TrainConfig train_config(const config::KeyValues& kv, const Globals& g) {
  TrainConfig cfg = config::to_train_config(kv);
  if (g.seed) cfg.seed = *g.seed;
  return cfg;
}

inline void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw ConfigError("cannot create output directory '" + dir + "'");
}

template <typename Fn>
void write_file(const std::string& path, Fn&& fn) {
  auto os = binio::open_out(path);
  fn(os);
  os.flush();
  if (!os) throw DataError("write to '" + path + "' failed");
}

inline std::vector<ViewFeature> load_features(const std::string& path) {
  auto is = binio::open_in(path);
  return read_features(is);
}

inline EmbeddingSet load_embeddings(const std::string& path) {
  auto is = binio::open_in(path);
  return read_embeddings(is);
}

inline std::vector<std::size_t> parse_ks(const std::string& text) {
  std::vector<std::size_t> ks;
  for (auto f : csv::split(text)) {
    long long k = 0;
    try {
      k = csv::parse_int(csv::trim(f));
    } catch (const FormatError&) {
      throw ConfigError("--k: bad value '" + text + "'");
    }
    if (k < 1) throw ConfigError("--k values must be >= 1");
    ks.push_back(static_cast<std::size_t>(k));
  }
  return ks;
}

inline std::vector<double> parse_weights(const std::string& text) {
  std::vector<double> w;
  for (auto f : csv::split(text)) {
    try {
      w.push_back(csv::parse_double(csv::trim(f)));
    } catch (const FormatError&) {
      throw ConfigError("--weights: bad value '" + text + "'");
    }
  }
  return w;
}

inline std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  for (auto f : csv::split(text)) {
    long long s = 0;
    try {
      s = csv::parse_int(csv::trim(f));
    } catch (const FormatError&) {
      throw ConfigError("--seeds: bad value '" + text + "'");
    }
    if (s < 0) throw ConfigError("--seeds must be >= 0");
    seeds.push_back(static_cast<std::uint64_t>(s));
  }
  if (seeds.empty()) throw ConfigError("--seeds is empty");
  return seeds;
}

// ---------------------------------------------------------------------------
// Commands.

struct GenDataArgs {
  std::string config, out;
};

inline void gen_data(const GenDataArgs& a, const Globals& g, std::ostream& log) {
  const GenConfig cfg = gen_config(load_config(a.config), g);
  ensure_dir(a.out);
  const auto data = generate(cfg);
  const fs::path dir(a.out);
  write_file((dir / "features.fea").string(), [&](std::ostream& os) { write_features(os, data.features); });
  write_file((dir / "manifest.csv").string(), [&](std::ostream& os) { write_manifest(os, data.manifest); });
  write_file((dir / "relevance_d2s.csv").string(),
             [&](std::ostream& os) { write_relevance(os, drone_to_sat_pairs(data.features)); });
  write_file((dir / "relevance_s2d.csv").string(),
             [&](std::ostream& os) { write_relevance(os, sat_to_drone_pairs(data.features)); });
  log << "gen-data: " << data.features.size() << " views for " << cfg.n_buildings << " buildings -> " << a.out
      << '\n';
}

struct GenLabelsArgs {
  std::string manifest, out;
  int bins = 8;
};

inline void gen_labels(const GenLabelsArgs& a, std::ostream& log) {
  const LabelConfig cfg{a.bins};
  const auto labels = generate_labels(read_manifest(a.manifest), cfg);
  write_file(a.out, [&](std::ostream& os) { write_labels(os, labels); });
  const auto masked = std::count_if(labels.begin(), labels.end(), [](const auto& l) { return l.masked; });
  log << "gen-labels: " << labels.size() << " labels (" << masked << " masked) -> " << a.out << '\n';
}

struct TrainArgs {
  std::string config, data, out;
};

inline void train_cmd(const TrainArgs& a, const Globals& g, std::ostream& log) {
  const TrainConfig cfg = train_config(load_config(a.config), g);
  const fs::path data(a.data);
  auto features = load_features((data / "features.fea").string());
  const auto manifest = read_manifest((data / "manifest.csv").string());
  const auto ds = Dataset::assemble(std::move(features), manifest, LabelConfig{cfg.loss.bins});
  ensure_dir(a.out);
  const auto result = train(cfg, ds);
  const fs::path out(a.out);
  write_file((out / "checkpoint.ckp").string(), [&](std::ostream& os) { write_checkpoint(os, result.params); });
  write_file((out / "train_log.csv").string(), [&](std::ostream& os) { write_train_log(os, result.log); });
  log << "train: " << result.log.total_steps << " steps (" << result.log.skipped_steps << " skipped)";
  if (!result.log.rows.empty()) log << ", final loss " << result.log.rows.back().loss_total;
  log << " -> " << a.out << '\n';
}

struct EmbedArgs {
  std::string checkpoint, features, out, kind;
};

inline void embed_cmd(const EmbedArgs& a, std::ostream& log) {
  std::optional<ViewKind> kind;
  if (!a.kind.empty() && a.kind != "all") {
    try {
      kind = parse_view_kind(a.kind);
    } catch (const Error&) {
      throw ConfigError("--kind must be sat, drone or all");
    }
  }
  ModelParams params = [&] {
    auto is = binio::open_in(a.checkpoint);
    return read_checkpoint(is);
  }();
  const auto set = embed_views(params, load_features(a.features), kind);
  write_file(a.out, [&](std::ostream& os) { write_embeddings(os, set); });
  log << "embed: " << set.size() << " x " << set.dim() << " -> " << a.out << '\n';
}

struct EvalArgs {
  std::string gallery, queries, relevance, k = "1,5,10", out, scores_out;
  std::size_t dim = 0;
};

inline void eval_cmd(const EvalArgs& a, const Globals& g, std::ostream& out) {
  const auto ks = parse_ks(a.k);
  auto gallery = load_embeddings(a.gallery);
  auto queries = load_embeddings(a.queries);
  if (a.dim > 0) {
    gallery = truncate_dim(gallery, a.dim);
    queries = truncate_dim(queries, a.dim);
  }
  const auto rel = parse_relevance(csv::read_lines(a.relevance));
  SearchOptions opts;
  opts.threads = g.threads;
  const auto m = evaluate(queries, gallery, rel, ks, opts);
  if (a.out.empty()) {
    write_metrics(out, m);
  } else {
    write_file(a.out, [&](std::ostream& os) { write_metrics(os, m); });
  }
  if (!a.scores_out.empty()) {
    write_file(a.scores_out, [&](std::ostream& os) { write_score_table(os, score_table(gallery, queries, opts)); });
  }
}

struct EnsembleArgs {
  std::vector<std::string> scores;
  std::string weights, fusion = "mean", relevance, k = "1,5,10", out, ranking_out;
};

inline void write_ranking(std::ostream& os, const std::vector<RankedList>& lists) {
  os << "query_id,rank,gallery_id,score\n";
  for (const auto& l : lists) {
    for (std::size_t r = 0; r < l.gallery_ids.size(); ++r) {
      os << l.query_id << ',' << r + 1 << ',' << l.gallery_ids[r] << ',' << csv::format_float(l.scores[r]) << '\n';
    }
  }
}

inline void ensemble_cmd(const EnsembleArgs& a, std::ostream& out) {
  const auto ks = parse_ks(a.k);
  Fusion fusion = Fusion::score_mean;
  if (a.fusion == "rrf") {
    fusion = Fusion::reciprocal_rank;
  } else if (a.fusion != "mean") {
    throw ConfigError("--fusion must be mean or rrf");
  }
  std::vector<double> weights = a.weights.empty() ? std::vector<double>(a.scores.size(), 1.0)
                                                  : parse_weights(a.weights);
  if (weights.size() != a.scores.size()) throw ConfigError("--weights needs one value per --scores file");
  std::vector<ScoreTable> tables;
  for (const auto& path : a.scores) tables.push_back(parse_score_table(csv::read_lines(path)));
  const auto rel = parse_relevance(csv::read_lines(a.relevance));
  const auto fused = ensemble(tables, weights, fusion);

  Metrics m;
  m.queries = fused.size();
  for (auto k : ks) m.recall.emplace_back(k, mean_recall_at_k(fused, rel, k));
  m.mean_ap = mean_average_precision(fused, rel);
  if (a.out.empty()) {
    write_metrics(out, m);
  } else {
    write_file(a.out, [&](std::ostream& os) { write_metrics(os, m); });
  }
  if (!a.ranking_out.empty()) write_file(a.ranking_out, [&](std::ostream& os) { write_ranking(os, fused); });
}

struct AblateArgs {
  std::string config, out, seeds = "1,2,3,4,5";
};

inline ExperimentConfig experiment_config(const AblateArgs& a, const Globals& g) {
  const auto kv = load_config(a.config);
  ExperimentConfig cfg;
  cfg.gen = config::to_gen_config(kv);
  cfg.train = config::to_train_config(kv);
  cfg.search.threads = g.threads;
  return cfg;
}

inline void ablate_cmd(const AblateArgs& a, const Globals& g, bool bins, std::ostream& out, std::ostream& log) {
  const auto cfg = experiment_config(a, g);
  const auto seeds = g.seed ? std::vector<std::uint64_t>{*g.seed} : parse_seeds(a.seeds);
  const auto summary = bins ? ablate_bins(cfg, seeds) : ablate_dim(cfg, seeds);
  if (a.out.empty()) {
    write_ablation(out, summary);
  } else {
    write_file(a.out, [&](std::ostream& os) { write_ablation(os, summary); });
  }
  for (const auto& r : summary.means) log << (bins ? "ablate-bins: " : "ablate-dim: ") << r.setting << " R@1 " << r.r1 << '\n';
}

// ---------------------------------------------------------------------------

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Orientation-guided cross-view retrieval experiments", "skyalign"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "Override the generator/training seed");
  app.add_option("--threads", g.threads, "Retrieval worker threads")->check(CLI::Range(1u, 1024u));

  GenDataArgs gd;
  auto* c_gen = app.add_subcommand("gen-data", "Generate a synthetic feature set and pose manifest");
  c_gen->add_option("--config", gd.config, "Config file")->check(CLI::ExistingFile);
  c_gen->add_option("--out", gd.out, "Output directory")->required();

  GenLabelsArgs gl;
  auto* c_labels = app.add_subcommand("gen-labels", "Derive orientation labels from a pose manifest");
  c_labels->add_option("--manifest", gl.manifest, "Pose manifest CSV")->required();
  c_labels->add_option("--bins", gl.bins, "Orientation bin count")->required();
  c_labels->add_option("--out", gl.out, "Label CSV")->required();

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "Train the encoder and orientation head");
  c_train->add_option("--config", tr.config, "Config file")->check(CLI::ExistingFile);
  c_train->add_option("--data", tr.data, "Directory written by gen-data")->required()->check(CLI::ExistingDirectory);
  c_train->add_option("--out", tr.out, "Output directory")->required();

  EmbedArgs em;
  auto* c_embed = app.add_subcommand("embed", "Encode features into an embedding file");
  c_embed->add_option("--checkpoint", em.checkpoint, "Checkpoint file")->required();
  c_embed->add_option("--features", em.features, "Feature file")->required();
  c_embed->add_option("--out", em.out, "Embedding file")->required();
  c_embed->add_option("--kind", em.kind, "sat, drone or all");

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("eval", "Recall@K and AP for queries against a gallery");
  c_eval->add_option("--gallery", ev.gallery, "Gallery embeddings")->required();
  c_eval->add_option("--queries", ev.queries, "Query embeddings")->required();
  c_eval->add_option("--relevance", ev.relevance, "Relevance CSV")->required();
  c_eval->add_option("--k", ev.k, "Comma-separated k values");
  c_eval->add_option("--dim", ev.dim, "Truncate embeddings to this dimension first");
  c_eval->add_option("--out", ev.out, "Metrics CSV (stdout when omitted)");
  c_eval->add_option("--scores-out", ev.scores_out, "Also write the full score table");

  EnsembleArgs en;
  auto* c_ens = app.add_subcommand("ensemble", "Fuse score tables and evaluate the fused ranking");
  c_ens->add_option("--scores", en.scores, "Score tables")->required()->expected(2, 64);
  c_ens->add_option("--weights", en.weights, "Comma-separated weights (default equal)");
  c_ens->add_option("--fusion", en.fusion, "mean or rrf");
  c_ens->add_option("--relevance", en.relevance, "Relevance CSV")->required();
  c_ens->add_option("--k", en.k, "Comma-separated k values");
  c_ens->add_option("--out", en.out, "Metrics CSV (stdout when omitted)");
  c_ens->add_option("--ranking-out", en.ranking_out, "Fused ranking CSV");

  AblateArgs ab_bins, ab_dim;
  auto* c_ab_bins = app.add_subcommand("ablate-bins", "Sweep orientation bin count (plus no orientation)");
  auto* c_ab_dim = app.add_subcommand("ablate-dim", "Sweep embedding dimension");
  for (auto [cmd, args] : {std::pair{c_ab_bins, &ab_bins}, std::pair{c_ab_dim, &ab_dim}}) {
    cmd->add_option("--config", args->config, "Config file")->check(CLI::ExistingFile);
    cmd->add_option("--seeds", args->seeds, "Comma-separated seeds");
    cmd->add_option("--out", args->out, "Summary CSV (stdout when omitted)");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*c_gen) gen_data(gd, g, err);
    else if (*c_labels) gen_labels(gl, err);
    else if (*c_train) train_cmd(tr, g, err);
    else if (*c_embed) embed_cmd(em, err);
    else if (*c_eval) eval_cmd(ev, g, out);
    else if (*c_ens) ensemble_cmd(en, out);
    else if (*c_ab_bins) ablate_cmd(ab_bins, g, true, out, err);
    else if (*c_ab_dim) ablate_cmd(ab_dim, g, false, out, err);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const DataError& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const NumericError& e) {
    err << "error: " << e.what() << '\n';
    return kExitNumeric;
  }
  return kExitOk;
}

}  // namespace skyalign::cli
