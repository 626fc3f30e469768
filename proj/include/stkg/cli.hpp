#pragma once
// Command-line pipeline: one binary with gen-synth / build-kg / train /
// predict / eval subcommands, flat key=value configs mirrored by flags, a
// run manifest per artifact-producing command, and distinct exit codes for
// configuration, data, and runtime failures.

#include <iomanip>

#include <CLI11.hpp>
#include <json.hpp>

#include "stkg/checkpoint.hpp"
#include "stkg/config.hpp"
#include "stkg/kgio.hpp"
#include "stkg/manifest.hpp"
#include "stkg/predict.hpp"
#include "stkg/synth.hpp"
#include "stkg/training.hpp"

namespace stkg::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;   // bad flags, keys, option combinations
inline constexpr int kExitData = 3;     // malformed or inconsistent input data
inline constexpr int kExitRuntime = 4;  // I/O and internal failures

namespace detail {

inline std::string fixed(double v, int places = 4) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", places, v);
  return buf;
}

inline std::vector<size_t> parse_k_list(const std::string& s) {
  std::vector<size_t> ks;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    std::string t(stkg::detail::trim(tok));
    if (t.empty()) continue;
    ks.push_back(size_t(stkg::detail::parse_u64("k", t)));
    if (ks.back() == 0) throw ConfigError("k values must be >= 1");
  }
  if (ks.empty()) throw ConfigError("empty k list");
  std::sort(ks.begin(), ks.end());
  return ks;
}

inline std::vector<double> parse_double_list(const std::string& key, const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    std::string t(stkg::detail::trim(tok));
    if (!t.empty()) out.push_back(stkg::detail::parse_double(key, t));
  }
  if (out.empty()) throw ConfigError("empty list for " + key);
  return out;
}

inline std::vector<uint64_t> parse_u64_list(const std::string& key, const std::string& s) {
  std::vector<uint64_t> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    std::string t(stkg::detail::trim(tok));
    if (!t.empty()) out.push_back(stkg::detail::parse_u64(key, t));
  }
  if (out.empty()) throw ConfigError("empty list for " + key);
  return out;
}

// Registers `--flag value` capturing the raw string under a config key, so
// flags and config files flow through one merge path.
inline CLI::Option* kv_option(CLI::App* sub, KvMap& sink, const std::string& flag,
                              const std::string& key, const std::string& help) {
  return sub->add_option(flag, help)->each([&sink, key](const std::string& v) {
    sink[key] = v;
  });
}

inline void kv_flag(CLI::App* sub, KvMap& sink, const std::string& flag,
                    const std::string& key, const std::string& help) {
  sub->add_flag_callback(flag, [&sink, key] { sink[key] = "true"; }, help);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Shared option blocks
// ---------------------------------------------------------------------------

// Training configuration: defaults <- config file <- explicit flags.
struct TrainArgs {
  std::string config_path;
  KvMap overrides;
  bool strict{false};

  void register_on(CLI::App* sub) {
    namespace d = detail;
    sub->add_option("--config", config_path, "key=value training config file");
    d::kv_option(sub, overrides, "--dim", "dim", "embedding dimension");
    d::kv_option(sub, overrides, "--alpha,--temporal-ratio", "temporal_ratio",
                 "share of time-modulated dimensions in [0,1]");
    d::kv_option(sub, overrides, "--beta,--affiliation-weight", "affiliation_weight",
                 "affiliation loss weight (number or preset high|mid|low)");
    d::kv_option(sub, overrides, "--learning-rate", "learning_rate", "optimizer step size");
    d::kv_option(sub, overrides, "--num-negatives", "num_negatives",
                 "negative samples per mobility fact");
    d::kv_option(sub, overrides, "--epochs", "epochs", "training epochs");
    d::kv_option(sub, overrides, "--batch-size", "batch_size", "facts per mini-batch");
    d::kv_option(sub, overrides, "--emb-reg", "emb_reg", "embedding regularization weight");
    d::kv_option(sub, overrides, "--time-reg", "time_reg", "temporal smoothness weight");
    d::kv_option(sub, overrides, "--noise", "noise", "negative noise distribution (uniform|unigram)");
    d::kv_option(sub, overrides, "--unigram-power", "unigram_power", "unigram count exponent");
    d::kv_option(sub, overrides, "--loss-mode", "loss_mode", "neg-sampling|full-softmax");
    d::kv_option(sub, overrides, "--seed", "seed", "training seed");
    d::kv_option(sub, overrides, "--variant", "variant",
                 "mobility variant V0..V4 (must match the graph)");
    d::kv_option(sub, overrides, "--parts", "parts",
                 "graph parts to train on (G_0..G_3, G_all, all, or a comma list)");
    d::kv_option(sub, overrides, "--optimizer", "optimizer", "adam|sgd");
    d::kv_option(sub, overrides, "--emb-reg-form", "emb_reg_form", "n3|l2");
    d::kv_option(sub, overrides, "--time-reg-form", "time_reg_form", "smooth-diff|l2");
    d::kv_option(sub, overrides, "--batch-mix", "batch_mix", "mixed|homogeneous");
    d::kv_option(sub, overrides, "--patience", "patience",
                 "stop after this many epochs without validation gain (0 = off)");
    d::kv_option(sub, overrides, "--init-scale", "init_scale", "initial embedding scale");
    d::kv_option(sub, overrides, "--precision-bits", "precision_bits", "32 or 64");
    d::kv_option(sub, overrides, "--threads", "threads", "evaluation worker cap");
    sub->add_flag("--strict", strict, "force single-threaded, bit-reproducible runs");
  }

  struct Resolved {
    TrainConfig cfg;
    KvMap effective;
    bool variant_explicit{false};
  };

  Resolved resolve() const {
    Resolved r;
    KvMap file_kv;
    if (!config_path.empty()) file_kv = load_kv_file(config_path);
    apply_train_config(r.cfg, file_kv);
    apply_train_config(r.cfg, overrides);
    if (strict) r.cfg.threads = 1;
    r.cfg.validate();
    r.effective = train_config_snapshot(r.cfg);
    r.variant_explicit = file_kv.count("variant") > 0 || overrides.count("variant") > 0;
    return r;
  }
};

// Ingestion configuration with the same merge order.
struct IngestArgs {
  std::string config_path;
  KvMap overrides;

  void register_on(CLI::App* sub, bool own_config_flag = true) {
    namespace d = detail;
    if (own_config_flag)
      sub->add_option("--config", config_path, "key=value ingest config file");
    else
      sub->add_option("--ingest-config", config_path, "key=value ingest config file");
    d::kv_option(sub, overrides, "--bin-minutes", "bin_minutes",
                 "time bin width in minutes (must divide 1440)");
    d::kv_option(sub, overrides, "--utc-offset-minutes", "utc_offset_minutes",
                 "local zone offset applied to timestamps");
    d::kv_option(sub, overrides, "--min-records", "min_records",
                 "drop users with fewer records");
    d::kv_option(sub, overrides, "--min-places", "min_places",
                 "drop users visiting fewer distinct PoIs");
    d::kv_option(sub, overrides, "--train-ratio", "train_ratio", "leading share per user");
    d::kv_option(sub, overrides, "--valid-ratio", "valid_ratio", "validation share per user");
    d::kv_option(sub, overrides, "--holidays", "holidays",
                 "comma list of YYYY-MM-DD treated as non-working days");
    d::kv_flag(sub, overrides, "--keep-last-per-bin", "keep_last_per_bin",
               "collapse repeated records inside one bin instance");
    d::kv_flag(sub, overrides, "--lenient", "lenient", "skip malformed lines instead of failing");
  }

  struct Resolved {
    IngestConfig cfg;
    KvMap effective;
  };

  Resolved resolve() const {
    Resolved r;
    KvMap merged;
    if (!config_path.empty()) merged = load_kv_file(config_path);
    for (const auto& [k, v] : overrides) merged[k] = v;
    apply_ingest_config(r.cfg, merged);
    r.effective = ingest_config_snapshot(r.cfg, merged.count("holidays") ? merged.at("holidays") : "");
    return r;
  }
};

// ---------------------------------------------------------------------------
// gen-synth
// ---------------------------------------------------------------------------

struct GenSynthArgs {
  std::string out_dir;
  std::string pattern{"periodic-deterministic"};
  std::string map_style{"shared"};
  SynthSpec spec;
  bool random_slots{false};

  void register_on(CLI::App* sub) {
    sub->add_option("--out", out_dir, "output directory")->required();
    sub->add_option("--pattern", pattern,
                    "periodic-deterministic|periodic-noisy|category-markov");
    sub->add_option("--users", spec.n_users, "number of users");
    sub->add_option("--pois", spec.n_pois, "number of PoIs");
    sub->add_option("--coarse", spec.n_coarse, "coarse categories");
    sub->add_option("--mid-fanout", spec.mid_fanout, "mid categories per coarse");
    sub->add_option("--fine-fanout", spec.fine_fanout, "fine categories per mid");
    sub->add_option("--bins-per-day", spec.bins_per_day, "time bins per day");
    sub->add_option("--records", spec.records_per_user, "records per user");
    sub->add_option("--map-style", map_style, "shared|per-user|constant (periodic patterns)");
    sub->add_flag("--random-slots", random_slots, "one record per day at a random bin");
    sub->add_option("--noise", spec.noise, "off-pattern probability (periodic-noisy)");
    sub->add_option("--seed", spec.seed, "generator seed");
    sub->add_option("--id-prefix", spec.id_prefix, "prefix for user/PoI/category ids");
  }

  KvMap snapshot() const {
    KvMap kv;
    kv["pattern"] = pattern;
    kv["users"] = std::to_string(spec.n_users);
    kv["pois"] = std::to_string(spec.n_pois);
    kv["coarse"] = std::to_string(spec.n_coarse);
    kv["mid_fanout"] = std::to_string(spec.mid_fanout);
    kv["fine_fanout"] = std::to_string(spec.fine_fanout);
    kv["bins_per_day"] = std::to_string(spec.bins_per_day);
    kv["records"] = std::to_string(spec.records_per_user);
    kv["map_style"] = map_style;
    kv["random_slots"] = random_slots ? "true" : "false";
    kv["noise"] = stkg::detail::format_double(spec.noise);
    kv["id_prefix"] = spec.id_prefix;
    return kv;
  }
};

inline int run_gen_synth(GenSynthArgs& args, std::ostream& out) {
  args.spec.pattern = synth_pattern_from(args.pattern);
  args.spec.map_style = map_style_from(args.map_style);
  args.spec.random_slots = args.random_slots;

  RunManifest manifest;
  manifest.command = "gen-synth";
  manifest.seed = args.spec.seed;
  manifest.config = args.snapshot();
  PhaseClock clock(manifest);

  SynthDataset ds = generate(args.spec);
  clock.stop("generate");
  SynthFiles files = write_dataset(ds, args.out_dir);
  clock.stop("write");

  manifest.outputs["trajectories"] = files.trajectories.string();
  manifest.outputs["catalog"] = files.catalog.string();
  manifest.outputs["truth"] = files.truth.string();
  write_manifest(std::filesystem::path(args.out_dir) / "manifest.json", manifest);

  out << "pattern " << to_string(ds.spec.pattern) << ": wrote " << ds.rows.size()
      << " rows for " << ds.spec.n_users << " users over " << ds.spec.n_pois
      << " PoIs to " << args.out_dir << "\n";
  out << "catalog: " << ds.catalog_rows.size() << " PoIs in " << ds.spec.n_fine()
      << "/" << ds.spec.n_mid() << "/" << ds.spec.n_coarse << " categories\n";
  out << "best achievable Acc@1 under the generative law: "
      << detail::fixed(ds.bayes_acc1) << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// build-kg
// ---------------------------------------------------------------------------

struct BuildKgArgs {
  std::string trajectories;
  std::string catalog_path;
  std::string out_dir;
  std::string variant{"V0"};
  bool cat_cat{false};
  IngestArgs ingest;

  void register_on(CLI::App* sub) {
    sub->add_option("--trajectories", trajectories, "trajectory CSV (user_id,timestamp,poi_id)")
        ->required();
    sub->add_option("--catalog", catalog_path, "PoI category CSV (poi_id,cat1[,cat2[,cat3]])");
    sub->add_option("--out", out_dir, "graph output directory")->required();
    sub->add_option("--variant", variant, "mobility variant V0..V4");
    sub->add_flag("--cat-cat", cat_cat, "also build category-to-category facts");
    ingest.register_on(sub);
  }
};

inline int run_build_kg(BuildKgArgs& args, std::ostream& out) {
  StmprVariant variant = stmpr_variant_from_string(args.variant);
  if (args.catalog_path.empty()) {
    if (variant >= StmprVariant::V2)
      throw ConfigError("variant " + args.variant +
                        " attaches category context; pass the category file via --catalog");
    if (args.cat_cat)
      throw ConfigError("--cat-cat needs the category file; pass it via --catalog");
  }

  auto resolved = args.ingest.resolve();

  RunManifest manifest;
  manifest.command = "build-kg";
  manifest.config = resolved.effective;
  manifest.config["variant"] = args.variant;
  manifest.config["cat_cat"] = args.cat_cat ? "true" : "false";
  PhaseClock clock(manifest);

  ParseOptions popts;
  popts.lenient = resolved.cfg.lenient;
  popts.utc_offset_minutes = resolved.cfg.utc_offset_minutes;
  ParseReport parse_report;
  auto rows = parse_trajectories(args.trajectories, popts, &parse_report);
  if (rows.empty())
    throw DataError("trajectory file '" + args.trajectories + "' contains no records");
  Catalog catalog;
  if (!args.catalog_path.empty()) catalog = parse_catalog(args.catalog_path, popts, &parse_report);
  manifest.add_input(args.trajectories);
  if (!args.catalog_path.empty()) manifest.add_input(args.catalog_path);
  clock.stop("parse");

  GraphParts parts;
  parts.cat_affiliation = args.cat_cat;
  IngestResult result = ingest_dataset(rows, catalog, variant, resolved.cfg, parts);
  if (result.split.n_users() == 0)
    throw DataError("no users survived filtering; check --min-records/--min-places");
  clock.stop("ingest");

  write_stkg(args.out_dir, result.stkg, result.split, result.coverage.to_text());
  clock.stop("write");

  const Stkg& stkg = result.stkg;
  manifest.outputs["graph"] = args.out_dir;
  write_manifest(std::filesystem::path(args.out_dir) / "manifest.json", manifest);

  out << "entities: " << stkg.vocab.count(EntityKind::User) << " users, "
      << stkg.vocab.count(EntityKind::Poi) << " PoIs, " << stkg.vocab.count(EntityKind::Cat1)
      << "/" << stkg.vocab.count(EntityKind::Cat2) << "/" << stkg.vocab.count(EntityKind::Cat3)
      << " categories, " << stkg.vocab.count(EntityKind::TimeBin) << " time bins\n";
  out << "mobility facts (" << to_string(stkg.variant) << "): " << stkg.stmpr_facts.size() << "\n";
  for (int level = 0; level < 3; ++level)
    out << "affiliation C" << (level + 1) << ": " << stkg.affiliation[size_t(level)].size()
        << "\n";
  out << "category->category: " << stkg.cat_affiliation.size() << "\n";
  out << "records train/valid/test: " << result.split.count(result.split.train) << "/"
      << result.split.count(result.split.valid) << "/" << result.split.count(result.split.test)
      << "\n";
  if (!result.coverage.users_dropped_filter.empty() ||
      !result.coverage.users_dropped_split.empty())
    out << "dropped users: " << result.coverage.users_dropped_filter.size() << " by filters, "
        << result.coverage.users_dropped_split.size() << " too short\n";
  if (!result.coverage.pois_missing_catalog.empty())
    out << "PoIs without catalog entry: " << result.coverage.pois_missing_catalog.size() << "\n";
  out << "graph written to " << args.out_dir << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainCmdArgs {
  std::string kg_dir;
  std::string out_dir;
  TrainArgs train;

  void register_on(CLI::App* sub) {
    sub->add_option("--kg", kg_dir, "graph directory from build-kg")->required();
    sub->add_option("--out", out_dir, "output directory for checkpoint + reports")->required();
    train.register_on(sub);
  }
};

template <typename S>
int run_train_typed(const TrainCmdArgs& args, TrainConfig cfg, const KvMap& effective,
                    const StkgBundle& bundle, RunManifest& manifest, PhaseClock& clock,
                    std::ostream& out) {
  TrainResult<S> result = train<S>(bundle.stkg, bundle.split, cfg);
  clock.stop("train");

  for (size_t e = 0; e < result.report.epochs.size(); ++e) {
    const EpochStats& s = result.report.epochs[e];
    double affil = s.affiliation[0] + s.affiliation[1] + s.affiliation[2] + s.affiliation[3];
    out << "epoch " << (e + 1) << "/" << cfg.epochs << "  loss " << detail::fixed(s.total)
        << "  mobility " << detail::fixed(s.stmpr) << "  affiliation " << detail::fixed(affil)
        << "  reg " << detail::fixed(s.reg_emb + s.reg_time);
    if (s.valid_mrr >= 0.0) out << "  valid MRR " << detail::fixed(s.valid_mrr);
    out << "  " << detail::fixed(s.seconds, 2) << "s\n";
  }
  if (result.report.best_epoch >= 0)
    out << "kept epoch " << (result.report.best_epoch + 1) << " (valid MRR "
        << detail::fixed(result.report.best_valid_mrr) << ")\n";

  namespace fs = std::filesystem;
  fs::create_directories(args.out_dir);
  const fs::path ckpt = fs::path(args.out_dir) / "checkpoint.bin";
  CheckpointMeta meta;
  meta.seed = cfg.seed;
  meta.variant = cfg.variant;
  meta.bin_minutes = bundle.stkg.bin_minutes;
  save_checkpoint(ckpt.string(), result.table, bundle.stkg.vocab, meta);

  nlohmann::ordered_json report;
  report["facts_per_epoch"] = result.report.facts_per_epoch;
  report["best_epoch"] = result.report.best_epoch;
  report["best_valid_mrr"] = result.report.best_valid_mrr;
  report["epochs"] = nlohmann::ordered_json::array();
  for (const auto& s : result.report.epochs)
    report["epochs"].push_back({{"total", s.total},
                                {"mobility", s.stmpr},
                                {"affiliation",
                                 {s.affiliation[0], s.affiliation[1], s.affiliation[2],
                                  s.affiliation[3]}},
                                {"reg_emb", s.reg_emb},
                                {"reg_time", s.reg_time},
                                {"valid_mrr", s.valid_mrr},
                                {"seconds", s.seconds}});
  const fs::path report_path = fs::path(args.out_dir) / "train_report.json";
  {
    std::ofstream os(report_path, std::ios::trunc);
    if (!os) throw IoError("cannot write '" + report_path.string() + "'");
    os << report.dump(2) << '\n';
  }
  clock.stop("save");

  manifest.config = effective;
  manifest.config["kg"] = args.kg_dir;
  manifest.seed = cfg.seed;
  manifest.outputs["checkpoint"] = ckpt.string();
  manifest.outputs["train_report"] = report_path.string();
  write_manifest(fs::path(args.out_dir) / "manifest.json", manifest);

  out << "checkpoint written to " << ckpt.string() << "\n";
  return kExitOk;
}

inline int run_train(TrainCmdArgs& args, std::ostream& out) {
  auto resolved = args.train.resolve();
  TrainConfig cfg = resolved.cfg;

  RunManifest manifest;
  manifest.command = "train";
  PhaseClock clock(manifest);

  StkgBundle bundle = read_stkg(args.kg_dir);
  manifest.add_input_dir(args.kg_dir);
  clock.stop("load");

  if (resolved.variant_explicit && cfg.variant != bundle.stkg.variant)
    throw ConfigError(std::string("config requests variant ") + to_string(cfg.variant) +
                      " but the graph was built with " + to_string(bundle.stkg.variant) +
                      "; rebuild the graph or drop the variant override");
  cfg.variant = bundle.stkg.variant;
  KvMap effective = train_config_snapshot(cfg);

  if (cfg.precision_bits == 32)
    return run_train_typed<float>(args, cfg, effective, bundle, manifest, clock, out);
  return run_train_typed<double>(args, cfg, effective, bundle, manifest, clock, out);
}

// ---------------------------------------------------------------------------
// predict
// ---------------------------------------------------------------------------

struct PredictArgs {
  std::string checkpoint;
  std::string kg_dir;
  std::string queries_path;
  std::string out_path;
  std::string part{"test"};
  size_t k{10};

  void register_on(CLI::App* sub) {
    sub->add_option("--checkpoint", checkpoint, "trained checkpoint")->required();
    sub->add_option("--kg", kg_dir, "graph directory (query source and category lookup)");
    sub->add_option("--queries", queries_path,
                    "explicit query CSV: user_id,timestamp[,prev_poi_id]");
    sub->add_option("--out", out_path, "predictions TSV")->required();
    sub->add_option("--part", part, "split part to predict when no --queries (valid|test)");
    sub->add_option("--k", k, "ranked candidates per query");
  }
};

namespace detail {

struct FileQuery {
  Query query;
  size_t lineno;
};

// Reads `user_id,timestamp[,prev_poi_id]` lines; unknown identifiers become
// per-line reports instead of hard failures.
inline std::vector<FileQuery> read_query_file(const std::string& path, const EntityVocab& vocab,
                                              const AuxResolver& resolver, int bin_minutes,
                                              size_t& skipped, std::ostream& err) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open query file '" + path + "'");
  std::vector<FileQuery> out;
  const Calendar calendar;
  std::string line;
  size_t lineno = 0;
  skipped = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::string_view sv = stkg::detail::trim(line);
    if (sv.empty()) continue;
    auto fields = stkg::detail::split_csv(sv);
    if (lineno == 1 && !fields.empty() && fields[0] == "user_id") continue;
    auto complain = [&](const std::string& why) {
      err << path << ":" << lineno << ": " << why << "\n";
      ++skipped;
    };
    if (fields.size() < 2 || fields.size() > 3) {
      complain("expected user_id,timestamp[,prev_poi_id]");
      continue;
    }
    auto user = vocab.find(EntityKind::User, fields[0]);
    if (!user) {
      complain("unknown user '" + fields[0] + "'");
      continue;
    }
    int64_t ts = 0;
    try {
      ts = parse_timestamp(fields[1]);
    } catch (const DataError& e) {
      complain(e.what());
      continue;
    }
    std::optional<EntityId> prev;
    if (fields.size() == 3 && !fields[2].empty() && fields[2] != "-") {
      prev = vocab.find(EntityKind::Poi, fields[2]);
      if (!prev) {
        complain("unknown PoI '" + fields[2] + "'");
        continue;
      }
    }
    FileQuery fq;
    fq.lineno = lineno;
    fq.query.user = *user;
    fq.query.bin = discretize_timestamp(ts, bin_minutes, calendar);
    fq.query.aux = resolver.aux_for(prev);
    out.push_back(std::move(fq));
  }
  return out;
}

}  // namespace detail

template <typename S>
int run_predict_typed(const PredictArgs& args, RunManifest& manifest, PhaseClock& clock,
                      std::ostream& out, std::ostream& err) {
  LoadedCheckpoint<S> loaded = load_checkpoint<S>(args.checkpoint);
  const EntityVocab& vocab = loaded.vocab;

  const bool from_file = !args.queries_path.empty();
  const bool needs_kg =
      !from_file || (loaded.meta.variant >= StmprVariant::V2);  // category lookup
  if (needs_kg && args.kg_dir.empty()) {
    if (from_file)
      throw ConfigError(std::string("variant ") + to_string(loaded.meta.variant) +
                        " maps predecessors to categories; pass the graph via --kg");
    throw ConfigError("pass --kg for split queries or --queries for an explicit file");
  }

  std::optional<StkgBundle> bundle;
  AuxResolver resolver;
  if (!args.kg_dir.empty()) {
    bundle = read_stkg(args.kg_dir);
    if (bundle->stkg.variant != loaded.meta.variant)
      throw ConfigError(std::string("checkpoint variant ") + to_string(loaded.meta.variant) +
                        " does not match the graph variant " + to_string(bundle->stkg.variant));
    resolver = AuxResolver::from(bundle->stkg);
  } else {
    Stkg shell;  // V0/V1 need no affiliation lookup
    shell.variant = loaded.meta.variant;
    shell.vocab = vocab;
    resolver = AuxResolver::from(shell);
  }

  std::vector<Query> queries;
  std::vector<std::string> labels;  // per-query truth column
  size_t skipped = 0;
  if (from_file) {
    auto file_queries = detail::read_query_file(args.queries_path, vocab, resolver,
                                                loaded.meta.bin_minutes, skipped, err);
    for (auto& fq : file_queries) {
      queries.push_back(std::move(fq.query));
      labels.push_back("-");
    }
    if (skipped > 0)
      err << "skipped " << skipped << " query line" << (skipped == 1 ? "" : "s") << "\n";
    if (queries.empty()) throw DataError("no usable queries in '" + args.queries_path + "'");
  } else {
    SplitPart part;
    if (args.part == "test") part = SplitPart::Test;
    else if (args.part == "valid") part = SplitPart::Valid;
    else throw ConfigError("unknown split part '" + args.part + "' (valid|test)");
    queries = build_queries(bundle->split, resolver, part);
    if (queries.empty()) throw DataError("the " + args.part + " split has no queries");
    for (const Query& q : queries) labels.push_back(vocab.external_of(*q.truth));
  }
  clock.stop("load");

  size_t k = args.k;
  const uint32_t n_pois = vocab.count(EntityKind::Poi);
  if (k > n_pois) {
    err << "warning: k=" << k << " clamped to the catalog size " << n_pois << "\n";
    k = n_pois;
  }

  std::ofstream os(args.out_path, std::ios::trunc);
  if (!os) throw IoError("cannot write predictions '" + args.out_path + "'");
  os << "# user\tbin\ttruth\ttop-" << k << " candidates as poi:score\n";
  for (size_t i = 0; i < queries.size(); ++i) {
    const Query& q = queries[i];
    RankedPrediction pred = predict_topk(loaded.table, vocab, q, k);
    os << vocab.external_of(q.user) << '\t' << vocab.external_of(vocab.time_bin_id(q.bin))
       << '\t' << labels[i];
    for (const auto& [poi, score] : pred.candidates)
      os << '\t' << vocab.names(EntityKind::Poi)[poi] << ':' << detail::fixed(score, 6);
    os << '\n';
  }
  os.flush();
  if (!os) throw IoError("short write on predictions '" + args.out_path + "'");
  clock.stop("predict");

  manifest.outputs["predictions"] = args.out_path;
  manifest.config["k"] = std::to_string(k);
  manifest.config["part"] = from_file ? "file" : args.part;
  write_manifest(args.out_path + ".manifest.json", manifest);

  out << "wrote " << queries.size() << " prediction lines (top-" << k << ") to "
      << args.out_path << "\n";
  return kExitOk;
}

inline int run_predict(PredictArgs& args, std::ostream& out, std::ostream& err) {
  RunManifest manifest;
  manifest.command = "predict";
  PhaseClock clock(manifest);

  CheckpointMeta meta = peek_checkpoint(args.checkpoint);
  manifest.add_input(args.checkpoint);
  if (!args.kg_dir.empty()) manifest.add_input_dir(args.kg_dir);
  if (!args.queries_path.empty()) manifest.add_input(args.queries_path);
  if (meta.precision_bytes == 4) return run_predict_typed<float>(args, manifest, clock, out, err);
  return run_predict_typed<double>(args, manifest, clock, out, err);
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint;
  std::string kg_dir;
  std::string out_path;
  std::string part{"test"};
  std::string k_list{"1,5,10"};
  bool micro{false};
  bool baseline{false};
  std::string freq_buckets;
  std::string sweep_alpha;
  bool sweep_graph{false};
  bool sweep_variant{false};
  std::string trajectories;
  std::string catalog_path;
  TrainArgs train;       // sweep training configuration; also carries --threads/--strict
  IngestArgs ingest;     // sweep-variant rebuild configuration

  void register_on(CLI::App* sub) {
    sub->add_option("--checkpoint", checkpoint, "trained checkpoint to evaluate");
    sub->add_option("--kg", kg_dir, "graph directory");
    sub->add_option("--out", out_path, "metrics JSON; a manifest lands next to it");
    sub->add_option("--part", part, "split part to evaluate (valid|test)");
    sub->add_option("--k", k_list, "comma list of Acc@k cutoffs");
    sub->add_flag("--micro", micro, "average over queries instead of users");
    sub->add_flag("--baseline", baseline, "also score the visit-count baseline");
    sub->add_option("--freq-buckets", freq_buckets,
                    "bucket edges over the user's training visits to the true PoI");
    sub->add_option("--sweep-alpha", sweep_alpha,
                    "retrain per temporal ratio in this comma list and tabulate");
    sub->add_flag("--sweep-graph", sweep_graph,
                  "retrain per graph selection G_0..G_3, G_all and tabulate");
    sub->add_flag("--sweep-variant", sweep_variant,
                  "rebuild + retrain per variant V0..V4 and tabulate");
    sub->add_option("--trajectories", trajectories, "trajectory CSV for --sweep-variant");
    sub->add_option("--catalog", catalog_path, "category CSV for --sweep-variant");
    train.register_on(sub);
    ingest.register_on(sub, /*own_config_flag=*/false);
  }
};

namespace detail {

struct SweepRow {
  std::string label;
  size_t facts{0};
  MetricsReport metrics;
};

inline void print_metrics_line(std::ostream& out, const std::string& head,
                               const MetricsReport& m) {
  out << head << "MRR " << fixed(m.mrr);
  for (size_t i = 0; i < m.ks.size(); ++i)
    out << "  Acc@" << m.ks[i] << " " << fixed(m.acc[i]);
  out << "  (" << m.queries << " queries, " << m.users_evaluated << " users)\n";
}

inline void print_sweep_table(std::ostream& out, const std::vector<SweepRow>& rows,
                              const std::vector<size_t>& ks) {
  out << std::left << std::setw(14) << "run" << std::right << std::setw(10) << "facts"
      << std::setw(9) << "MRR";
  for (size_t k : ks) out << std::setw(9) << ("Acc@" + std::to_string(k));
  out << "\n";
  for (const auto& row : rows) {
    out << std::left << std::setw(14) << row.label << std::right << std::setw(10) << row.facts
        << std::setw(9) << fixed(row.metrics.mrr);
    for (size_t i = 0; i < ks.size(); ++i) out << std::setw(9) << fixed(row.metrics.acc[i]);
    out << "\n";
  }
}

inline nlohmann::ordered_json metrics_json(const MetricsReport& m) {
  nlohmann::ordered_json j;
  j["mrr"] = m.mrr;
  for (size_t i = 0; i < m.ks.size(); ++i) j["acc@" + std::to_string(m.ks[i])] = m.acc[i];
  j["queries"] = m.queries;
  j["users_evaluated"] = m.users_evaluated;
  j["users_skipped"] = m.users_skipped;
  j["averaging"] = m.micro ? "micro" : "macro";
  return j;
}

// Trains on the bundle with the given config and evaluates the chosen part.
inline SweepRow train_and_eval(const StkgBundle& bundle, TrainConfig cfg, SplitPart part,
                               const std::vector<size_t>& ks, bool micro, int threads,
                               const std::string& label) {
  SweepRow row;
  row.label = label;
  row.facts = bundle.stkg.total_facts(cfg.parts);
  TrainResult<double> result = train<double>(bundle.stkg, bundle.split, cfg);
  AuxResolver resolver = AuxResolver::from(bundle.stkg);
  auto queries = build_queries(bundle.split, resolver, part);
  if (queries.empty()) throw DataError("the evaluation split has no queries");
  row.metrics = evaluate(result.table, bundle.stkg.vocab, queries, ks, micro, threads);
  return row;
}

}  // namespace detail

template <typename S>
MetricsReport eval_checkpoint_typed(const EvalArgs& args, const StkgBundle& bundle,
                                    SplitPart part, const std::vector<size_t>& ks,
                                    int threads, std::ostream& out,
                                    nlohmann::ordered_json& json_out) {
  LoadedCheckpoint<S> loaded = load_checkpoint<S>(args.checkpoint);
  if (loaded.meta.variant != bundle.stkg.variant)
    throw ConfigError(std::string("checkpoint variant ") + to_string(loaded.meta.variant) +
                      " does not match the graph variant " + to_string(bundle.stkg.variant));

  AuxResolver resolver = AuxResolver::from(bundle.stkg);
  auto queries = build_queries(bundle.split, resolver, part);
  if (queries.empty()) throw DataError("the " + args.part + " split has no queries");

  MetricsReport metrics = evaluate(loaded.table, bundle.stkg.vocab, queries, ks, args.micro,
                                   threads);
  detail::print_metrics_line(out, "model:    ", metrics);
  json_out["metrics"] = detail::metrics_json(metrics);

  if (args.baseline || !args.freq_buckets.empty()) {
    FrequencyBaseline counts(bundle.split, bundle.stkg.vocab);
    if (args.baseline) {
      MetricsReport base = counts.evaluate(queries, ks,
                                           bundle.stkg.vocab.count(EntityKind::User),
                                           args.micro);
      detail::print_metrics_line(out, "baseline: ", base);
      out << "MRR delta over baseline: " << detail::fixed(metrics.mrr - base.mrr) << "\n";
      json_out["baseline"] = detail::metrics_json(base);
    }
    if (!args.freq_buckets.empty()) {
      auto edges = detail::parse_u64_list("freq-buckets", args.freq_buckets);
      auto buckets = group_by_frequency(loaded.table, bundle.stkg.vocab, queries, counts,
                                        edges, ks);
      json_out["frequency_buckets"] = nlohmann::ordered_json::array();
      for (size_t b = 0; b < buckets.size(); ++b) {
        std::string lo = b == 0 ? "0" : std::to_string(edges[b - 1]);
        std::string hi = b < edges.size() ? std::to_string(edges[b]) : "inf";
        std::string label = "[" + lo + "," + hi + ")";
        detail::print_metrics_line(out, "visits " + label + ": ", buckets[b]);
        auto j = detail::metrics_json(buckets[b]);
        j["bucket"] = label;
        json_out["frequency_buckets"].push_back(std::move(j));
      }
    }
  }
  return metrics;
}

inline int run_eval(EvalArgs& args, std::ostream& out) {
  const bool sweeping = !args.sweep_alpha.empty() || args.sweep_graph || args.sweep_variant;
  if (!sweeping && args.checkpoint.empty())
    throw ConfigError("pass --checkpoint, or one of --sweep-alpha/--sweep-graph/--sweep-variant");
  if (args.sweep_variant && args.trajectories.empty())
    throw ConfigError("--sweep-variant rebuilds the graph per variant; pass --trajectories");
  if (!args.sweep_variant && args.kg_dir.empty())
    throw ConfigError("pass the graph directory via --kg");

  const std::vector<size_t> ks = detail::parse_k_list(args.k_list);
  SplitPart part;
  if (args.part == "test") part = SplitPart::Test;
  else if (args.part == "valid") part = SplitPart::Valid;
  else throw ConfigError("unknown split part '" + args.part + "' (valid|test)");
  auto resolved = args.train.resolve();  // strict folds threads=1 here
  const int threads = resolved.cfg.threads;

  RunManifest manifest;
  manifest.command = "eval";
  manifest.config["part"] = args.part;
  manifest.config["k"] = args.k_list;
  PhaseClock clock(manifest);
  nlohmann::ordered_json json_out;

  std::vector<detail::SweepRow> rows;
  if (sweeping) {
    for (const auto& [key, value] : resolved.effective) manifest.config["train." + key] = value;
    manifest.seed = resolved.cfg.seed;

    if (!args.sweep_alpha.empty()) {
      StkgBundle bundle = read_stkg(args.kg_dir);
      manifest.add_input_dir(args.kg_dir);
      clock.stop("load");
      TrainConfig cfg = resolved.cfg;
      cfg.variant = bundle.stkg.variant;
      for (double alpha : detail::parse_double_list("sweep-alpha", args.sweep_alpha)) {
        cfg.temporal_ratio = alpha;
        rows.push_back(detail::train_and_eval(bundle, cfg, part, ks, args.micro, threads,
                                              "alpha=" + detail::fixed(alpha, 2)));
        clock.stop(rows.back().label);
      }
      json_out["sweep"] = "alpha";
    } else if (args.sweep_graph) {
      StkgBundle bundle = read_stkg(args.kg_dir);
      manifest.add_input_dir(args.kg_dir);
      clock.stop("load");
      TrainConfig cfg = resolved.cfg;
      cfg.variant = bundle.stkg.variant;
      for (const char* label : {"G_0", "G_1", "G_2", "G_3", "G_all"}) {
        cfg.parts = graph_parts_from(label);
        rows.push_back(
            detail::train_and_eval(bundle, cfg, part, ks, args.micro, threads, label));
        clock.stop(label);
      }
      json_out["sweep"] = "graph";
    } else {
      auto ingest_resolved = args.ingest.resolve();
      for (const auto& [key, value] : ingest_resolved.effective)
        manifest.config["ingest." + key] = value;

      ParseOptions popts;
      popts.lenient = ingest_resolved.cfg.lenient;
      popts.utc_offset_minutes = ingest_resolved.cfg.utc_offset_minutes;
      auto raw_rows = parse_trajectories(args.trajectories, popts);
      if (raw_rows.empty())
        throw DataError("trajectory file '" + args.trajectories + "' contains no records");
      Catalog catalog;
      if (!args.catalog_path.empty()) catalog = parse_catalog(args.catalog_path, popts);
      manifest.add_input(args.trajectories);
      if (!args.catalog_path.empty()) manifest.add_input(args.catalog_path);
      clock.stop("load");

      for (int v = 0; v <= 4; ++v) {
        StmprVariant variant = StmprVariant(v);
        if (variant >= StmprVariant::V2 && args.catalog_path.empty())
          throw ConfigError(std::string("variant ") + to_string(variant) +
                            " attaches category context; pass the category file via --catalog");
        GraphParts build_parts;
        build_parts.cat_affiliation = resolved.cfg.parts.cat_affiliation;
        StkgBundle bundle;
        IngestResult ing = ingest_dataset(raw_rows, catalog, variant, ingest_resolved.cfg,
                                          build_parts);
        bundle.stkg = std::move(ing.stkg);
        bundle.split = std::move(ing.split);
        if (bundle.split.n_users() == 0)
          throw DataError("no users survived filtering; check min_records/min_places");
        TrainConfig cfg = resolved.cfg;
        cfg.variant = variant;
        rows.push_back(detail::train_and_eval(bundle, cfg, part, ks, args.micro, threads,
                                              std::string("r_") + to_string(variant)));
        clock.stop(rows.back().label);
      }
      json_out["sweep"] = "variant";
    }

    detail::print_sweep_table(out, rows, ks);
    json_out["rows"] = nlohmann::ordered_json::array();
    for (const auto& row : rows) {
      auto j = detail::metrics_json(row.metrics);
      j["run"] = row.label;
      j["facts"] = row.facts;
      json_out["rows"].push_back(std::move(j));
    }
  } else {
    StkgBundle bundle = read_stkg(args.kg_dir);
    CheckpointMeta meta = peek_checkpoint(args.checkpoint);
    manifest.add_input(args.checkpoint);
    manifest.add_input_dir(args.kg_dir);
    clock.stop("load");
    manifest.seed = meta.seed;
    if (meta.precision_bytes == 4)
      eval_checkpoint_typed<float>(args, bundle, part, ks, threads, out, json_out);
    else
      eval_checkpoint_typed<double>(args, bundle, part, ks, threads, out, json_out);
    clock.stop("evaluate");
  }

  if (!args.out_path.empty()) {
    std::ofstream os(args.out_path, std::ios::trunc);
    if (!os) throw IoError("cannot write metrics '" + args.out_path + "'");
    os << json_out.dump(2) << '\n';
    manifest.outputs["metrics"] = args.out_path;
    write_manifest(args.out_path + ".manifest.json", manifest);
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// Dispatch
// ---------------------------------------------------------------------------

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  CLI::App app{"Spatio-temporal knowledge-graph embeddings for next-PoI prediction"};
  app.set_version_flag("--version", std::string(kToolName) + " " + kToolVersion);
  app.require_subcommand(1);

  GenSynthArgs gen_args;
  gen_args.register_on(app.add_subcommand("gen-synth", "generate a synthetic dataset"));
  BuildKgArgs build_args;
  build_args.register_on(
      app.add_subcommand("build-kg", "build the knowledge graph from trajectories"));
  TrainCmdArgs train_args;
  train_args.register_on(app.add_subcommand("train", "learn embeddings from a built graph"));
  PredictArgs predict_args;
  predict_args.register_on(app.add_subcommand("predict", "rank PoIs for queries"));
  EvalArgs eval_args;
  eval_args.register_on(app.add_subcommand("eval", "evaluate a checkpoint or run sweeps"));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (app.got_subcommand("gen-synth")) return run_gen_synth(gen_args, out);
    if (app.got_subcommand("build-kg")) return run_build_kg(build_args, out);
    if (app.got_subcommand("train")) return run_train(train_args, out);
    if (app.got_subcommand("predict")) return run_predict(predict_args, out, err);
    if (app.got_subcommand("eval")) return run_eval(eval_args, out);
    err << "error: no subcommand\n";
    return kExitConfig;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const IoError& e) {
    err << "io error: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace stkg::cli
