#pragma once
// Synthetic trajectory generators with planted, recoverable structure and
// exact best-achievable metric ceilings. The generation path is integer-only
// (raw mt19937 draws), so a fixed seed yields byte-identical files on every
// platform.

#include <filesystem>
#include <fstream>
#include <unordered_set>

#include <json.hpp>

#include "stkg/ingest.hpp"
#include "stkg/predict.hpp"
#include "stkg/training.hpp"

namespace stkg {

enum class SynthPattern {
  PeriodicDeterministic,  // fixed per-user map time bin -> PoI
  PeriodicNoisy,          // the map with probability 1 - noise, else uniform
  CategoryMarkov,         // coarse category walks a fixed cycle; PoI uniform inside
};

inline std::string to_string(SynthPattern p) {
  switch (p) {
    case SynthPattern::PeriodicDeterministic: return "periodic-deterministic";
    case SynthPattern::PeriodicNoisy: return "periodic-noisy";
    case SynthPattern::CategoryMarkov: return "category-markov";
  }
  return "?";
}

inline SynthPattern synth_pattern_from(const std::string& s) {
  if (s == "periodic-deterministic") return SynthPattern::PeriodicDeterministic;
  if (s == "periodic-noisy") return SynthPattern::PeriodicNoisy;
  if (s == "category-markov") return SynthPattern::CategoryMarkov;
  throw ConfigError("unknown synthetic pattern '" + s + "'");
}

// How the periodic patterns assign their time-bin -> PoI maps.
enum class MapStyle {
  Shared,    // one map for everyone: pure collaborative time structure
  PerUser,   // independent random map per user: time x user interactions
  Constant,  // each user's map sends every bin to one favourite PoI
};

inline std::string to_string(MapStyle m) {
  switch (m) {
    case MapStyle::Shared: return "shared";
    case MapStyle::PerUser: return "per-user";
    case MapStyle::Constant: return "constant";
  }
  return "?";
}

inline MapStyle map_style_from(const std::string& s) {
  if (s == "shared") return MapStyle::Shared;
  if (s == "per-user") return MapStyle::PerUser;
  if (s == "constant") return MapStyle::Constant;
  throw ConfigError("unknown map style '" + s + "'");
}

struct SynthSpec {
  int n_users{20};
  int n_pois{50};
  int n_coarse{4};       // categories at the coarsest level
  int mid_fanout{2};     // mid-level categories per coarse category
  int fine_fanout{2};    // fine categories per mid-level category
  int bins_per_day{48};
  int records_per_user{100};
  SynthPattern pattern{SynthPattern::PeriodicDeterministic};
  MapStyle map_style{MapStyle::Shared};  // periodic patterns only
  bool random_slots{false};  // periodic: one record per day at a random bin
  double noise{0.0};     // only read by PeriodicNoisy
  uint64_t seed{1};
  std::string id_prefix{};  // distinct prefixes keep merged datasets disjoint

  int n_mid() const { return n_coarse * mid_fanout; }
  int n_fine() const { return n_mid() * fine_fanout; }
  int bin_minutes() const { return 1440 / bins_per_day; }

  void validate() const {
    if (n_users < 1) throw ConfigError("n_users must be >= 1");
    if (n_pois < 1) throw ConfigError("n_pois must be >= 1");
    if (n_coarse < 1 || mid_fanout < 1 || fine_fanout < 1)
      throw ConfigError("category fanouts must be >= 1");
    if (bins_per_day < 1 || 1440 % bins_per_day != 0)
      throw ConfigError("bins_per_day must divide 1440, got " + std::to_string(bins_per_day));
    if (records_per_user < 1) throw ConfigError("records_per_user must be >= 1");
    if (noise < 0.0 || noise > 1.0) throw ConfigError("noise must lie in [0, 1]");
    if (pattern == SynthPattern::CategoryMarkov && n_pois < n_fine())
      throw ConfigError("category-markov needs n_pois >= " + std::to_string(n_fine()) +
                        " (one per fine category), got " + std::to_string(n_pois));
  }
};

// A generated dataset plus the planted structure the oracles need.
struct SynthDataset {
  SynthSpec spec;
  std::vector<RawTrajectoryRow> rows;
  std::vector<CategoryRow> catalog_rows;

  // poi -> category index at each level, and coarse category -> member PoIs.
  std::vector<uint32_t> poi_fine, poi_mid, poi_coarse;
  std::vector<std::vector<uint32_t>> coarse_members;

  // Periodic patterns: [user][flat time bin] -> planted PoI.
  std::vector<std::vector<uint32_t>> planted_map;

  double bayes_acc1{1.0};  // best achievable Acc@1 under the generative law
};

namespace synth_detail {

inline std::string user_name(const SynthSpec& s, uint32_t u) {
  return s.id_prefix + "u" + std::to_string(u);
}
inline std::string poi_name(const SynthSpec& s, uint32_t p) {
  return s.id_prefix + "p" + std::to_string(p);
}
inline std::string cat_name(const SynthSpec& s, char level, uint32_t c) {
  return s.id_prefix + level + std::to_string(c);
}

}  // namespace synth_detail

// Generates the dataset in memory. Records run one time bin after another,
// with timestamps at bin centers so discretization is unambiguous;
// CategoryMarkov instead picks one uniformly random bin per day so that
// arrival time carries no information about the next PoI.
//
// The periodic patterns assign time-bin -> PoI maps per MapStyle, and each
// user starts on a different calendar day (user index mod 7). Under the
// shared style users therefore reach weekend bins at different points of
// their chronological splits: some meet a day-type bin at test time that
// never occurs in their own training records. A per-user frequency count
// cannot answer those queries, but an embedding model can, through the bins'
// other visitors — which is exactly the collaborative structure the
// embeddings are supposed to recover.
inline SynthDataset generate(const SynthSpec& spec) {
  spec.validate();
  SynthDataset out;
  out.spec = spec;

  const uint32_t n_pois = uint32_t(spec.n_pois);
  const int n_fine = spec.n_fine();

  // Category tree: PoI -> fine category round-robin, then fixed fan-in.
  out.poi_fine.resize(n_pois);
  out.poi_mid.resize(n_pois);
  out.poi_coarse.resize(n_pois);
  out.coarse_members.assign(size_t(spec.n_coarse), {});
  for (uint32_t p = 0; p < n_pois; ++p) {
    out.poi_fine[p] = p % uint32_t(n_fine);
    out.poi_mid[p] = out.poi_fine[p] / uint32_t(spec.fine_fanout);
    out.poi_coarse[p] = out.poi_mid[p] / uint32_t(spec.mid_fanout);
    out.coarse_members[out.poi_coarse[p]].push_back(p);
  }
  out.catalog_rows.reserve(n_pois);
  for (uint32_t p = 0; p < n_pois; ++p)
    out.catalog_rows.push_back({synth_detail::poi_name(spec, p),
                                synth_detail::cat_name(spec, 'F', out.poi_fine[p]),
                                synth_detail::cat_name(spec, 'M', out.poi_mid[p]),
                                synth_detail::cat_name(spec, 'C', out.poi_coarse[p])});

  std::mt19937 rng(uint32_t(spec.seed ^ (spec.seed >> 32) ^ 0x9e3779b9u));
  const Calendar calendar;
  const int64_t bin_seconds = int64_t(spec.bin_minutes()) * 60;
  const bool periodic = spec.pattern != SynthPattern::CategoryMarkov;

  if (periodic) {
    const size_t n_flat = size_t(2 * spec.bins_per_day);
    switch (spec.map_style) {
      case MapStyle::Shared: {
        std::vector<uint32_t> shared(n_flat);
        for (auto& poi : shared) poi = bounded_uniform(rng, n_pois);
        out.planted_map.assign(size_t(spec.n_users), shared);
        break;
      }
      case MapStyle::PerUser:
        out.planted_map.assign(size_t(spec.n_users), std::vector<uint32_t>(n_flat));
        for (auto& m : out.planted_map)
          for (auto& poi : m) poi = bounded_uniform(rng, n_pois);
        break;
      case MapStyle::Constant:
        out.planted_map.reserve(size_t(spec.n_users));
        for (int u = 0; u < spec.n_users; ++u)
          out.planted_map.emplace_back(n_flat, bounded_uniform(rng, n_pois));
        break;
    }
  }
  // Integer noise threshold keeps the per-record decision free of float math.
  const uint64_t noise_threshold =
      spec.pattern == SynthPattern::PeriodicNoisy
          ? uint64_t(std::llround(spec.noise * 4294967296.0))
          : 0;

  out.rows.reserve(size_t(spec.n_users) * size_t(spec.records_per_user));
  for (uint32_t u = 0; u < uint32_t(spec.n_users); ++u) {
    uint32_t markov_cat = u % uint32_t(spec.n_coarse);
    for (int k = 0; k < spec.records_per_user; ++k) {
      int64_t day;
      int slot;
      uint32_t poi;
      if (periodic) {
        if (spec.random_slots) {
          day = int64_t(u % 7) + k;  // one record per day, bin drawn uniformly
          slot = int(bounded_uniform(rng, uint32_t(spec.bins_per_day)));
        } else {
          day = int64_t(u % 7) + k / spec.bins_per_day;  // staggered start days
          slot = k % spec.bins_per_day;
        }
        TimeBin bin{slot, calendar.day_type(day)};
        poi = out.planted_map[u][size_t(flatten_timebin(bin, spec.bins_per_day))];
        if (noise_threshold > 0 && rng() < noise_threshold)
          poi = bounded_uniform(rng, n_pois);
      } else {
        day = k;  // one visit per day at a random time
        slot = int(bounded_uniform(rng, uint32_t(spec.bins_per_day)));
        const auto& members = out.coarse_members[markov_cat];
        poi = members[bounded_uniform(rng, uint32_t(members.size()))];
        markov_cat = (markov_cat + 1) % uint32_t(spec.n_coarse);
      }
      int64_t ts = day * 86400 + int64_t(slot) * bin_seconds + bin_seconds / 2;
      out.rows.push_back(
          {synth_detail::user_name(spec, u), ts, synth_detail::poi_name(spec, poi)});
    }
  }

  switch (spec.pattern) {
    case SynthPattern::PeriodicDeterministic:
      out.bayes_acc1 = 1.0;
      break;
    case SynthPattern::PeriodicNoisy:
      out.bayes_acc1 = (1.0 - spec.noise) + spec.noise / double(n_pois);
      break;
    case SynthPattern::CategoryMarkov: {
      // The category is predictable exactly; the PoI inside is uniform.
      double acc = 0.0;
      for (const auto& members : out.coarse_members) acc += 1.0 / double(members.size());
      out.bayes_acc1 = acc / double(spec.n_coarse);
      break;
    }
  }
  return out;
}

// Concatenates datasets generated with disjoint id prefixes, interleaving
// nothing: rows stay grouped by source, which ingest handles (it groups by
// user and sorts by time). Only the row/catalog payload merges; oracle fields
// keep the first dataset's spec.
inline SynthDataset merge_datasets(const SynthDataset& a, const SynthDataset& b) {
  if (a.spec.id_prefix == b.spec.id_prefix)
    throw ConfigError("merging synthetic datasets requires distinct id prefixes");
  if (a.spec.bins_per_day != b.spec.bins_per_day)
    throw ConfigError("merging synthetic datasets requires a common bins_per_day");
  SynthDataset out = a;
  out.rows.insert(out.rows.end(), b.rows.begin(), b.rows.end());
  out.catalog_rows.insert(out.catalog_rows.end(), b.catalog_rows.begin(),
                          b.catalog_rows.end());
  return out;
}

// ---------------------------------------------------------------------------
// Exact metric ceilings
// ---------------------------------------------------------------------------

// Best achievable metrics on the given queries under the generative law, for
// a predictor that knows the planted structure. Averages the per-query
// expected values, so the result is exact (no sampling noise) and serves as
// the upper reference for learned models.
inline MetricsReport bayes_optimal_metrics(const SynthDataset& ds, const EntityVocab& vocab,
                                           std::span<const Query> queries,
                                           std::vector<size_t> ks = {1, 5, 10}) {
  const SynthSpec& spec = ds.spec;
  MetricsReport report;
  report.ks = ks;
  report.micro = true;
  report.acc.assign(ks.size(), 0.0);
  if (queries.empty()) throw DataError("no queries to evaluate");

  const uint32_t n = uint32_t(spec.n_pois);
  std::unordered_set<uint32_t> users;
  double mrr = 0.0;
  std::vector<double> acc(ks.size(), 0.0);

  // Map internal PoI index -> generator index once.
  std::vector<uint32_t> gen_of(vocab.count(EntityKind::Poi), UINT32_MAX);
  for (uint32_t p = 0; p < n; ++p)
    if (auto id = vocab.find(EntityKind::Poi, synth_detail::poi_name(spec, p)))
      gen_of[id->index] = p;

  for (const Query& q : queries) {
    if (!q.truth) throw DataError("ceiling evaluation needs ground-truth queries");
    users.insert(q.user.index);
    uint32_t truth_gen = gen_of[q.truth->index];
    if (truth_gen == UINT32_MAX)
      throw DataError("query truth is not part of the synthetic dataset");

    switch (spec.pattern) {
      case SynthPattern::PeriodicDeterministic:
        mrr += 1.0;
        for (double& a : acc) a += 1.0;
        break;
      case SynthPattern::PeriodicNoisy: {
        // Guess the planted PoI first, the rest in any fixed order.
        double p1 = (1.0 - spec.noise) + spec.noise / double(n);
        mrr += p1;
        double tail = spec.noise / double(n);
        for (uint32_t r = 2; r <= n; ++r) mrr += tail / double(r);
        for (size_t i = 0; i < ks.size(); ++i) {
          uint32_t k = uint32_t(std::min<size_t>(ks[i], size_t(n)));
          acc[i] += p1 + tail * double(k - 1);
        }
        break;
      }
      case SynthPattern::CategoryMarkov: {
        // The next coarse category is certain; the PoI is uniform among its
        // members, so rank the c members first in any order.
        double c = double(ds.coarse_members[ds.poi_coarse[truth_gen]].size());
        for (uint32_t r = 1; r <= uint32_t(c); ++r) mrr += 1.0 / (c * double(r));
        for (size_t i = 0; i < ks.size(); ++i)
          acc[i] += std::min(double(ks[i]), c) / c;
        break;
      }
    }
  }

  report.queries = queries.size();
  report.users_evaluated = users.size();
  report.mrr = mrr / double(queries.size());
  for (size_t i = 0; i < ks.size(); ++i) report.acc[i] = acc[i] / double(queries.size());
  return report;
}

// ---------------------------------------------------------------------------
// File emission (ingest formats + ground-truth manifest)
// ---------------------------------------------------------------------------

struct SynthFiles {
  std::filesystem::path trajectories, catalog, truth;
};

inline SynthFiles write_dataset(const SynthDataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  SynthFiles files{dir / "trajectories.csv", dir / "catalog.csv", dir / "truth.json"};

  {
    std::ofstream out(files.trajectories, std::ios::binary);
    if (!out) throw IoError("cannot write " + files.trajectories.string());
    out << "user_id,timestamp,poi_id\n";
    for (const auto& r : ds.rows)
      out << r.user_id << ',' << r.timestamp << ',' << r.poi_id << '\n';
  }
  {
    std::ofstream out(files.catalog, std::ios::binary);
    if (!out) throw IoError("cannot write " + files.catalog.string());
    out << "poi_id,cat1,cat2,cat3\n";
    for (const auto& r : ds.catalog_rows)
      out << r.poi_id << ',' << r.cat1 << ',' << r.cat2.value_or("") << ','
          << r.cat3.value_or("") << '\n';
  }
  {
    nlohmann::ordered_json truth;
    truth["pattern"] = to_string(ds.spec.pattern);
    truth["n_users"] = ds.spec.n_users;
    truth["n_pois"] = ds.spec.n_pois;
    truth["n_coarse"] = ds.spec.n_coarse;
    truth["mid_fanout"] = ds.spec.mid_fanout;
    truth["fine_fanout"] = ds.spec.fine_fanout;
    truth["bins_per_day"] = ds.spec.bins_per_day;
    truth["records_per_user"] = ds.spec.records_per_user;
    truth["map_style"] = to_string(ds.spec.map_style);
    truth["random_slots"] = ds.spec.random_slots;
    truth["noise"] = ds.spec.noise;
    truth["seed"] = ds.spec.seed;
    truth["id_prefix"] = ds.spec.id_prefix;
    truth["rows"] = ds.rows.size();
    truth["bayes_acc1"] = ds.bayes_acc1;
    std::ofstream out(files.truth, std::ios::binary);
    if (!out) throw IoError("cannot write " + files.truth.string());
    out << truth.dump(2) << '\n';
  }
  return files;
}

// Rebuilds a SynthSpec from a ground-truth manifest, so downstream commands
// can recompute ceilings without re-passing every knob.
inline SynthSpec read_truth_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("bad truth manifest " + path.string() + ": " + e.what());
  }
  SynthSpec spec;
  try {
    spec.pattern = synth_pattern_from(j.at("pattern").get<std::string>());
    spec.n_users = j.at("n_users").get<int>();
    spec.n_pois = j.at("n_pois").get<int>();
    spec.n_coarse = j.at("n_coarse").get<int>();
    spec.mid_fanout = j.at("mid_fanout").get<int>();
    spec.fine_fanout = j.at("fine_fanout").get<int>();
    spec.bins_per_day = j.at("bins_per_day").get<int>();
    spec.records_per_user = j.at("records_per_user").get<int>();
    spec.map_style = map_style_from(j.at("map_style").get<std::string>());
    spec.random_slots = j.at("random_slots").get<bool>();
    spec.noise = j.at("noise").get<double>();
    spec.seed = j.at("seed").get<uint64_t>();
    spec.id_prefix = j.at("id_prefix").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError("bad truth manifest " + path.string() + ": " + e.what());
  }
  spec.validate();
  return spec;
}

}  // namespace stkg
