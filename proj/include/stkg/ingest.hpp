#pragma once
// Trajectory / category-catalog ingestion: file parsing, user filtering, the
// chronological 7:1:2 split, and construction of the mobility-pattern and
// affiliation fact sets.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "stkg/core.hpp"

namespace stkg {

// ---------------------------------------------------------------------------
// Raw rows
// ---------------------------------------------------------------------------

struct RawTrajectoryRow {
  std::string user_id;
  int64_t timestamp{0};  // epoch seconds
  std::string poi_id;
};

struct CategoryRow {
  std::string poi_id;
  std::string cat1;
  std::optional<std::string> cat2;
  std::optional<std::string> cat3;
};

struct ParseOptions {
  bool lenient{false};          // skip malformed lines instead of failing fast
  int utc_offset_minutes{0};    // applied to ISO timestamps without a zone suffix
};

struct ParseReport {
  size_t rows{0};
  size_t skipped{0};
  std::vector<std::string> messages;  // first few skip reasons

  void note(const std::string& msg) {
    ++skipped;
    if (messages.size() < 20) messages.push_back(msg);
  }
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(uint8_t(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(uint8_t(s.back()))) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string> split_csv(std::string_view line) {
  std::vector<std::string> fields;
  size_t start = 0;
  while (true) {
    size_t pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      fields.emplace_back(trim(line.substr(start)));
      break;
    }
    fields.emplace_back(trim(line.substr(start, pos - start)));
    start = pos + 1;
  }
  return fields;
}

inline bool is_integer(std::string_view s) {
  if (s.empty()) return false;
  size_t i = (s[0] == '-' || s[0] == '+') ? 1 : 0;
  if (i == s.size()) return false;
  for (; i < s.size(); ++i)
    if (!std::isdigit(uint8_t(s[i]))) return false;
  return true;
}

}  // namespace detail

// Parses an integer epoch or an ISO-8601 civil timestamp. ISO values without
// a zone suffix are read in the configured local time zone; a trailing 'Z'
// forces UTC. Fractional seconds are truncated.
inline int64_t parse_timestamp(std::string_view raw, int utc_offset_minutes = 0) {
  std::string_view s = detail::trim(raw);
  if (detail::is_integer(s)) {
    int64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size())
      throw DataError("bad epoch timestamp '" + std::string(raw) + "'");
    return v;
  }
  int y, mo, d, h, mi;
  int sec = 0;
  char sep;
  int consumed = 0;
  std::string str(s);
  int n = std::sscanf(str.c_str(), "%d-%d-%d%c%d:%d:%d%n", &y, &mo, &d, &sep, &h, &mi, &sec, &consumed);
  if (n < 6 || (sep != 'T' && sep != ' '))
    throw DataError("unparseable timestamp '" + std::string(raw) + "'");
  if (n == 6) {  // seconds absent
    sec = 0;
    std::sscanf(str.c_str(), "%d-%d-%d%c%d:%d%n", &y, &mo, &d, &sep, &h, &mi, &consumed);
  }
  std::string_view rest = detail::trim(s.substr(consumed));
  if (!rest.empty() && rest[0] == '.') {  // drop fractional seconds
    size_t i = 1;
    while (i < rest.size() && std::isdigit(uint8_t(rest[i]))) ++i;
    rest = rest.substr(i);
  }
  bool utc = false;
  if (rest == "Z") {
    utc = true;
  } else if (!rest.empty()) {
    throw DataError("unsupported timestamp suffix in '" + std::string(raw) + "'");
  }
  int64_t civil = days_from_civil(y, mo, d) * 86400 + h * 3600 + mi * 60 + sec;
  return utc ? civil : civil - int64_t(utc_offset_minutes) * 60;
}

// Trajectory files: UTF-8, one record per line, either comma-separated
// `user_id,timestamp,poi_id` (optional auto-detected header) or a JSON object
// per line with the same three fields.
inline std::vector<RawTrajectoryRow> parse_trajectories(const std::string& path,
                                                        const ParseOptions& opts = {},
                                                        ParseReport* report = nullptr) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open trajectory file '" + path + "'");

  std::vector<RawTrajectoryRow> rows;
  std::string line;
  size_t lineno = 0;
  auto fail = [&](const std::string& why) {
    std::string msg = path + ":" + std::to_string(lineno) + ": " + why;
    if (!opts.lenient) throw DataError(msg);
    if (report) report->note(msg);
  };

  while (std::getline(in, line)) {
    ++lineno;
    std::string_view sv = detail::trim(line);
    if (sv.empty() || sv[0] == '#') continue;

    RawTrajectoryRow row;
    if (sv[0] == '{') {
      try {
        auto j = nlohmann::json::parse(sv);
        row.user_id = j.at("user_id").get<std::string>();
        row.poi_id = j.at("poi_id").get<std::string>();
        const auto& ts = j.at("timestamp");
        row.timestamp = ts.is_number() ? ts.get<int64_t>()
                                       : parse_timestamp(ts.get<std::string>(), opts.utc_offset_minutes);
      } catch (const DataError& e) {
        fail(e.what());
        continue;
      } catch (const std::exception& e) {
        fail(std::string("bad json record: ") + e.what());
        continue;
      }
    } else {
      auto fields = detail::split_csv(sv);
      if (fields.size() != 3) {
        if (lineno == 1) continue;  // ragged first line: header
        fail("expected 3 fields, got " + std::to_string(fields.size()));
        continue;
      }
      try {
        row.timestamp = parse_timestamp(fields[1], opts.utc_offset_minutes);
      } catch (const DataError& e) {
        if (lineno == 1) continue;  // unparseable timestamp on line 1: header
        fail(e.what());
        continue;
      }
      row.user_id = fields[0];
      row.poi_id = fields[2];
    }
    if (row.user_id.empty() || row.poi_id.empty()) {
      fail("empty user_id or poi_id");
      continue;
    }
    rows.push_back(std::move(row));
    if (report) ++report->rows;
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Category catalog
// ---------------------------------------------------------------------------

// PoI -> category chains at up to three levels, conflict-checked: a PoI may
// not map to two different chains, and a finer category may not have two
// different parents.
class Catalog {
public:
  void add_row(CategoryRow row, const std::string& where = "") {
    if (row.poi_id.empty() || row.cat1.empty())
      throw DataError(where + "catalog row needs poi_id and cat1");
    auto it = by_poi_.find(row.poi_id);
    if (it != by_poi_.end()) {
      const CategoryRow& prev = rows_[it->second];
      if (prev.cat1 != row.cat1 || prev.cat2 != row.cat2 || prev.cat3 != row.cat3)
        throw DataError(where + "conflicting catalog rows for poi '" + row.poi_id + "'");
      return;  // exact duplicate
    }
    by_poi_.emplace(row.poi_id, rows_.size());
    if (row.cat2) has_level_[1] = true;
    if (row.cat3) has_level_[2] = true;
    has_level_[0] = true;
    rows_.push_back(std::move(row));
  }

  const CategoryRow* find(const std::string& poi_id) const {
    auto it = by_poi_.find(poi_id);
    return it == by_poi_.end() ? nullptr : &rows_[it->second];
  }

  // Category name at 1-based level, if present.
  static const std::optional<std::string> level_of(const CategoryRow& row, int level) {
    switch (level) {
      case 1: return row.cat1;
      case 2: return row.cat2;
      case 3: return row.cat3;
    }
    return std::nullopt;
  }

  bool has_level(int level) const { return has_level_[level - 1]; }
  size_t size() const { return rows_.size(); }
  const std::vector<CategoryRow>& rows() const { return rows_; }

private:
  std::vector<CategoryRow> rows_;  // first-appearance order
  std::unordered_map<std::string, size_t> by_poi_;
  std::array<bool, 3> has_level_{false, false, false};
};

// Catalog files: UTF-8, comma-separated `poi_id,cat1[,cat2[,cat3]]`.
inline Catalog parse_catalog(const std::string& path, const ParseOptions& opts = {},
                             ParseReport* report = nullptr) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open catalog file '" + path + "'");

  Catalog catalog;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view sv = detail::trim(line);
    if (sv.empty() || sv[0] == '#') continue;
    auto fields = detail::split_csv(sv);
    std::string where = path + ":" + std::to_string(lineno) + ": ";
    if (lineno == 1 && !fields.empty() && fields[0] == "poi_id") continue;  // header
    if (fields.size() < 2 || fields.size() > 4) {
      if (lineno == 1) continue;  // ragged first line: header
      if (!opts.lenient) throw DataError(where + "expected 2-4 fields");
      if (report) report->note(where + "expected 2-4 fields");
      continue;
    }
    CategoryRow row;
    row.poi_id = fields[0];
    row.cat1 = fields[1];
    if (fields.size() > 2 && !fields[2].empty()) row.cat2 = fields[2];
    if (fields.size() > 3 && !fields[3].empty()) row.cat3 = fields[3];
    try {
      catalog.add_row(std::move(row), where);
      if (report) ++report->rows;
    } catch (const DataError& e) {
      if (lineno == 1) continue;
      if (!opts.lenient) throw;
      if (report) report->note(e.what());
    }
  }
  return catalog;
}

// ---------------------------------------------------------------------------
// Filtering and splitting
// ---------------------------------------------------------------------------

// Retains exactly the users with at least min_records records and at least
// min_places distinct PoIs. Keeps file order; idempotent.
inline std::vector<RawTrajectoryRow> filter_users(const std::vector<RawTrajectoryRow>& rows,
                                                  size_t min_records, size_t min_places,
                                                  std::vector<std::string>* dropped = nullptr) {
  std::unordered_map<std::string, size_t> records;
  std::unordered_map<std::string, std::set<std::string>> places;
  for (const auto& r : rows) {
    ++records[r.user_id];
    places[r.user_id].insert(r.poi_id);
  }
  std::unordered_set<std::string> keep;
  for (const auto& [user, n] : records)
    if (n >= min_records && places[user].size() >= min_places) keep.insert(user);

  std::vector<RawTrajectoryRow> out;
  out.reserve(rows.size());
  std::unordered_set<std::string> dropped_seen;
  for (const auto& r : rows) {
    if (keep.count(r.user_id)) {
      out.push_back(r);
    } else if (dropped && dropped_seen.insert(r.user_id).second) {
      dropped->push_back(r.user_id);
    }
  }
  return out;
}

struct SplitRatios {
  double train{0.7};
  double valid{0.1};
  // test takes the remainder
};

// Per-user chronological train/valid/test partition, indexed by user id.
struct SplitDataset {
  std::vector<std::vector<MobilityRecord>> train;
  std::vector<std::vector<MobilityRecord>> valid;
  std::vector<std::vector<MobilityRecord>> test;

  size_t n_users() const { return train.size(); }

  size_t count(const std::vector<std::vector<MobilityRecord>>& part) const {
    size_t n = 0;
    for (const auto& v : part) n += v.size();
    return n;
  }
};

// Splits one user's chronologically sorted records: first floor(train·n) are
// train, next floor(valid·n) are valid, remainder is test.
struct SplitBounds {
  size_t train_end;
  size_t valid_end;
};

inline SplitBounds split_bounds(size_t n, const SplitRatios& ratios) {
  size_t train_n = size_t(double(n) * ratios.train);
  size_t valid_n = size_t(double(n) * ratios.valid);
  return SplitBounds{train_n, train_n + valid_n};
}

// ---------------------------------------------------------------------------
// Predecessor lookup
// ---------------------------------------------------------------------------

// PoI of the latest record strictly before records[target]'s timestamp, or
// nothing. Records sharing the target's timestamp are not predecessors.
inline std::optional<EntityId> most_recent_poi(std::span<const MobilityRecord> records,
                                               size_t target) {
  const int64_t ts = records[target].timestamp;
  for (size_t i = target; i-- > 0;) {
    if (records[i].timestamp < ts) return records[i].poi;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Coverage report
// ---------------------------------------------------------------------------

struct CoverageReport {
  std::vector<std::string> pois_missing_catalog;
  std::vector<std::string> users_dropped_filter;
  std::vector<std::string> users_dropped_split;  // fewer than 3 records
  size_t raw_rows{0};
  size_t retained_records{0};
  size_t parse_skipped{0};

  std::string to_text() const {
    std::ostringstream os;
    os << "rows parsed:        " << raw_rows << "\n";
    os << "records retained:   " << retained_records << "\n";
    os << "lines skipped:      " << parse_skipped << "\n";
    os << "users dropped by filtering: " << users_dropped_filter.size() << "\n";
    for (const auto& u : users_dropped_filter) os << "  " << u << "\n";
    os << "users dropped by split (<3 records): " << users_dropped_split.size() << "\n";
    for (const auto& u : users_dropped_split) os << "  " << u << "\n";
    os << "PoIs without catalog entry: " << pois_missing_catalog.size() << "\n";
    for (const auto& p : pois_missing_catalog) os << "  " << p << "\n";
    return os.str();
  }
};

// ---------------------------------------------------------------------------
// Fact construction
// ---------------------------------------------------------------------------

// One mobility fact per training record. Duplicate tuples are kept so that
// frequent patterns weigh more in the loss. The predecessor of the first
// training record is the sentinel; validation and test records never serve as
// predecessors here.
inline std::vector<StmprFact> build_stmpr_facts(const SplitDataset& split, StmprVariant variant,
                                                const Catalog& catalog, EntityVocab& vocab) {
  auto kind = aux_kind(variant);
  if (kind) {
    int level = int(variant) - 1;  // V2 -> level 1, ...
    if (variant != StmprVariant::V1 && !catalog.has_level(level))
      throw ConfigError(std::string("variant ") + to_string(variant) +
                        " needs catalog level " + std::to_string(level) +
                        " which is absent from the catalog");
  }

  std::vector<StmprFact> facts;
  for (size_t u = 0; u < split.n_users(); ++u) {
    const auto& records = split.train[u];
    for (size_t i = 0; i < records.size(); ++i) {
      StmprFact fact;
      fact.user = records[i].user;
      fact.poi = records[i].poi;
      fact.bin = records[i].bin;
      fact.variant = variant;
      if (kind) {
        std::optional<EntityId> prev = most_recent_poi(records, i);
        EntityId aux = vocab.sentinel();
        if (prev) {
          if (variant == StmprVariant::V1) {
            aux = *prev;
          } else {
            int level = int(variant) - 1;
            const CategoryRow* row = catalog.find(vocab.external_of(*prev));
            auto cat = row ? Catalog::level_of(*row, level) : std::nullopt;
            if (cat) aux = vocab.add(category_kind(level), *cat);
          }
        }
        fact.aux = aux;
        fact.has_aux = true;
      }
      facts.push_back(fact);
    }
  }
  return facts;
}

// One affiliation triple per (PoI in vocab, catalog level present for it).
// PoIs absent from the catalog are recorded in the coverage report.
inline std::array<std::vector<AffiliationFact>, 3> build_affiliation_facts(
    const Catalog& catalog, EntityVocab& vocab, CoverageReport* coverage = nullptr) {
  std::array<std::vector<AffiliationFact>, 3> out;
  const auto& pois = vocab.names(EntityKind::Poi);
  for (uint32_t i = 0; i < pois.size(); ++i) {
    const CategoryRow* row = catalog.find(pois[i]);
    if (!row) {
      if (coverage) coverage->pois_missing_catalog.push_back(pois[i]);
      continue;
    }
    for (int level = 1; level <= 3; ++level) {
      auto cat = Catalog::level_of(*row, level);
      if (!cat) continue;
      AffiliationFact fact;
      fact.subject = EntityId{EntityKind::Poi, i};
      fact.object = vocab.add(category_kind(level), *cat);
      fact.relation = AffiliationRel(level - 1);
      out[level - 1].push_back(fact);
    }
  }
  return out;
}

// Distinct cross-level category pairs (fine->mid, mid->coarse), deduplicated.
// A category with two different parents is a data-consistency error. A
// single-level catalog yields an error unless allow_single_level is set.
inline std::vector<AffiliationFact> build_cat_affiliation_facts(const Catalog& catalog,
                                                                EntityVocab& vocab,
                                                                bool allow_single_level = false) {
  if (!catalog.has_level(2) && !catalog.has_level(3)) {
    if (allow_single_level) return {};
    throw ConfigError("category affiliation requested but the catalog has a single level");
  }

  std::vector<AffiliationFact> facts;
  std::map<std::pair<int, std::string>, std::string> parent;  // (child level, child) -> parent
  std::set<std::pair<std::string, std::string>> seen;
  std::vector<std::string> conflicts;

  auto link = [&](int child_level, const std::string& child, const std::string& par) {
    auto key = std::make_pair(child_level, child);
    auto it = parent.find(key);
    if (it != parent.end()) {
      if (it->second != par)
        conflicts.push_back("'" + child + "' -> '" + it->second + "' vs '" + par + "'");
      return;
    }
    parent.emplace(key, par);
    if (!seen.emplace(child, par).second) return;
    AffiliationFact fact;
    fact.subject = vocab.add(category_kind(child_level), child);
    fact.object = vocab.add(category_kind(child_level + 1), par);
    fact.relation = AffiliationRel::CatCat;
    facts.push_back(fact);
  };

  for (const auto& row : catalog.rows()) {
    if (row.cat2) link(1, row.cat1, *row.cat2);
    if (row.cat2 && row.cat3) link(2, *row.cat2, *row.cat3);
  }
  if (!conflicts.empty()) {
    std::string msg = "conflicting category parents:";
    for (const auto& c : conflicts) msg += " " + c + ";";
    throw DataError(msg);
  }
  return facts;
}

// ---------------------------------------------------------------------------
// End-to-end ingestion
// ---------------------------------------------------------------------------

struct IngestConfig {
  int bin_minutes{30};
  int utc_offset_minutes{0};
  size_t min_records{30};
  size_t min_places{5};
  SplitRatios ratios{};
  bool keep_last_per_bin{false};  // collapse multiple records inside one bin instance
  bool lenient{false};
  Calendar calendar{};
};

struct IngestResult {
  Stkg stkg;
  SplitDataset split;
  CoverageReport coverage;
};

// Full pipeline: parse -> filter -> bin -> sort -> split -> facts. Users are
// numbered in first-appearance order of the retained rows, PoIs in
// first-appearance order across retained records.
inline IngestResult ingest_dataset(const std::vector<RawTrajectoryRow>& all_rows,
                                   const Catalog& catalog, StmprVariant variant,
                                   const IngestConfig& cfg, const GraphParts& parts = {}) {
  IngestResult result;
  CoverageReport& coverage = result.coverage;
  coverage.raw_rows = all_rows.size();

  auto rows = filter_users(all_rows, cfg.min_records, cfg.min_places,
                           &coverage.users_dropped_filter);

  // Group rows per user in file order.
  std::vector<std::string> user_order;
  std::unordered_map<std::string, std::vector<size_t>> by_user;
  for (size_t i = 0; i < rows.size(); ++i) {
    auto [it, fresh] = by_user.try_emplace(rows[i].user_id);
    if (fresh) user_order.push_back(rows[i].user_id);
    it->second.push_back(i);
  }

  const int bins_per_day = bins_per_day_for(cfg.bin_minutes);
  EntityVocab vocab = EntityVocab::with_time_bins(bins_per_day);

  // Per-user sorted record lists (pre-split, post-binning).
  std::vector<std::vector<MobilityRecord>> user_records;
  for (const auto& user_name : user_order) {
    auto idxs = by_user[user_name];
    // Stable sort by timestamp; ties keep file order.
    std::stable_sort(idxs.begin(), idxs.end(), [&](size_t a, size_t b) {
      return rows[a].timestamp < rows[b].timestamp;
    });

    std::vector<MobilityRecord> recs;
    recs.reserve(idxs.size());
    for (size_t i : idxs) {
      MobilityRecord rec;
      rec.timestamp = rows[i].timestamp;
      rec.bin = discretize_timestamp(rows[i].timestamp, cfg.bin_minutes, cfg.calendar,
                                     cfg.utc_offset_minutes);
      rec.user = EntityId{};  // filled after the split decision
      rec.poi = EntityId{};
      recs.push_back(rec);
    }

    if (cfg.keep_last_per_bin) {
      // Keep only the last record of each run inside one (day, slot) instance.
      std::vector<size_t> keep;
      for (size_t i = 0; i < recs.size(); ++i) {
        int64_t local_a = recs[i].timestamp + int64_t(cfg.utc_offset_minutes) * 60;
        bool last_in_bin =
            i + 1 == recs.size() ||
            floor_div(local_a, 86400) !=
                floor_div(recs[i + 1].timestamp + int64_t(cfg.utc_offset_minutes) * 60, 86400) ||
            recs[i].bin.slot != recs[i + 1].bin.slot;
        if (last_in_bin) keep.push_back(i);
      }
      std::vector<MobilityRecord> dedup;
      std::vector<size_t> kept_idxs;
      for (size_t k : keep) {
        dedup.push_back(recs[k]);
        kept_idxs.push_back(idxs[k]);
      }
      recs = std::move(dedup);
      idxs = std::move(kept_idxs);
    }

    if (recs.size() < 3) {
      coverage.users_dropped_split.push_back(user_name);
      continue;
    }

    EntityId user = vocab.add(EntityKind::User, user_name);
    for (size_t k = 0; k < recs.size(); ++k) {
      recs[k].user = user;
      recs[k].poi = vocab.add(EntityKind::Poi, rows[idxs[k]].poi_id);
    }
    user_records.push_back(std::move(recs));
  }

  // Register catalog categories of observed PoIs in vocab index order.
  for (const auto& poi_name : vocab.names(EntityKind::Poi)) {
    const CategoryRow* row = catalog.find(poi_name);
    if (!row) continue;
    for (int level = 1; level <= 3; ++level)
      if (auto cat = Catalog::level_of(*row, level)) vocab.add(category_kind(level), *cat);
  }

  // Chronological split per user.
  SplitDataset& split = result.split;
  split.train.resize(user_records.size());
  split.valid.resize(user_records.size());
  split.test.resize(user_records.size());
  for (size_t u = 0; u < user_records.size(); ++u) {
    const auto& recs = user_records[u];
    SplitBounds b = split_bounds(recs.size(), cfg.ratios);
    split.train[u].assign(recs.begin(), recs.begin() + b.train_end);
    split.valid[u].assign(recs.begin() + b.train_end, recs.begin() + b.valid_end);
    split.test[u].assign(recs.begin() + b.valid_end, recs.end());
    coverage.retained_records += recs.size();
  }

  Stkg& stkg = result.stkg;
  stkg.variant = variant;
  stkg.bin_minutes = cfg.bin_minutes;
  stkg.vocab = std::move(vocab);
  stkg.stmpr_facts = build_stmpr_facts(split, variant, catalog, stkg.vocab);
  stkg.affiliation = build_affiliation_facts(catalog, stkg.vocab, &coverage);
  for (int i = 0; i < 3; ++i)
    if (!parts.affiliation[i]) stkg.affiliation[i].clear();
  if (parts.cat_affiliation)
    stkg.cat_affiliation = build_cat_affiliation_facts(catalog, stkg.vocab);
  return result;
}

}  // namespace stkg
