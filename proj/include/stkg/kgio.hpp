#pragma once
// On-disk layout for a built graph: entity vocabulary, fact lists, the
// per-user chronological split, a coverage report, and a JSON meta file.
// Plain TSV with internal indices; writing what was read reproduces the
// bytes exactly.

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "stkg/core.hpp"
#include "stkg/ingest.hpp"

namespace stkg {

struct StkgBundle {
  Stkg stkg;
  SplitDataset split;
};

namespace detail {

constexpr const char* kKgMetaFile = "kg_meta.json";
constexpr const char* kVocabFile = "vocab.tsv";
constexpr const char* kStmprFile = "stmpr_facts.tsv";
constexpr const char* kAffiliationFile = "affiliation_facts.tsv";
constexpr const char* kSplitFile = "split_records.tsv";
constexpr const char* kCoverageFile = "coverage.txt";
constexpr uint32_t kKgFormatVersion = 1;

// Only these kinds are persisted; time bins and the sentinel are rebuilt
// from bins_per_day on load.
constexpr EntityKind kStoredKinds[] = {EntityKind::User, EntityKind::Poi, EntityKind::Cat1,
                                       EntityKind::Cat2, EntityKind::Cat3};

inline std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write '" + path.string() + "'");
  return os;
}

inline std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open '" + path.string() + "'");
  return is;
}

inline EntityKind kind_from_int(int k, const std::string& where) {
  if (k < 0 || k >= kNumEntityKinds) throw DataError(where + ": bad entity kind " + std::to_string(k));
  return EntityKind(k);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Writing
// ---------------------------------------------------------------------------

inline void write_stkg(const std::filesystem::path& dir, const Stkg& stkg,
                       const SplitDataset& split, const std::string& coverage_text = "") {
  namespace fs = std::filesystem;
  fs::create_directories(dir);

  {
    auto os = detail::open_out(dir / detail::kVocabFile);
    for (EntityKind kind : detail::kStoredKinds)
      for (const auto& name : stkg.vocab.names(kind))
        os << int(kind) << '\t' << name << '\n';
  }

  {
    auto os = detail::open_out(dir / detail::kStmprFile);
    for (const auto& f : stkg.stmpr_facts) {
      os << f.user.index << '\t' << f.poi.index << '\t' << int(f.bin.day_type) << '\t'
         << f.bin.slot << '\t';
      if (f.has_aux)
        os << int(f.aux.kind) << '\t' << f.aux.index << '\n';
      else
        os << -1 << '\t' << 0 << '\n';
    }
  }

  {
    auto os = detail::open_out(dir / detail::kAffiliationFile);
    auto emit = [&](const AffiliationFact& f) {
      os << int(f.relation) << '\t' << int(f.subject.kind) << '\t' << f.subject.index << '\t'
         << int(f.object.kind) << '\t' << f.object.index << '\n';
    };
    for (int level = 0; level < 3; ++level)
      for (const auto& f : stkg.affiliation[size_t(level)]) emit(f);
    for (const auto& f : stkg.cat_affiliation) emit(f);
  }

  {
    auto os = detail::open_out(dir / detail::kSplitFile);
    auto emit_part = [&](int part, const std::vector<std::vector<MobilityRecord>>& records) {
      for (const auto& user_records : records)
        for (const auto& r : user_records)
          os << part << '\t' << r.user.index << '\t' << r.poi.index << '\t' << r.timestamp
             << '\t' << int(r.bin.day_type) << '\t' << r.bin.slot << '\n';
    };
    emit_part(0, split.train);
    emit_part(1, split.valid);
    emit_part(2, split.test);
  }

  {
    auto os = detail::open_out(dir / detail::kCoverageFile);
    os << coverage_text;
  }

  nlohmann::ordered_json meta;
  meta["format"] = "stkg-graph";
  meta["format_version"] = detail::kKgFormatVersion;
  meta["variant"] = to_string(stkg.variant);
  meta["bin_minutes"] = stkg.bin_minutes;
  meta["bins_per_day"] = stkg.vocab.bins_per_day();
  meta["entities"] = {{"users", stkg.vocab.count(EntityKind::User)},
                      {"pois", stkg.vocab.count(EntityKind::Poi)},
                      {"cat1", stkg.vocab.count(EntityKind::Cat1)},
                      {"cat2", stkg.vocab.count(EntityKind::Cat2)},
                      {"cat3", stkg.vocab.count(EntityKind::Cat3)}};
  meta["facts"] = {{"stmpr", stkg.stmpr_facts.size()},
                   {"affiliation_c1", stkg.affiliation[0].size()},
                   {"affiliation_c2", stkg.affiliation[1].size()},
                   {"affiliation_c3", stkg.affiliation[2].size()},
                   {"cat_affiliation", stkg.cat_affiliation.size()}};
  meta["records"] = {{"train", split.count(split.train)},
                     {"valid", split.count(split.valid)},
                     {"test", split.count(split.test)}};
  auto os = detail::open_out(dir / detail::kKgMetaFile);
  os << meta.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Reading
// ---------------------------------------------------------------------------

inline StkgBundle read_stkg(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  StkgBundle out;

  nlohmann::json meta;
  {
    auto is = detail::open_in(dir / detail::kKgMetaFile);
    try {
      is >> meta;
    } catch (const nlohmann::json::exception& e) {
      throw DataError("malformed kg_meta.json in '" + dir.string() + "': " + e.what());
    }
  }
  if (meta.value("format", "") != std::string("stkg-graph"))
    throw DataError("'" + dir.string() + "' is not a graph directory");
  if (meta.value("format_version", 0u) != detail::kKgFormatVersion)
    throw DataError("unsupported graph format version");

  out.stkg.variant = stmpr_variant_from_string(meta.at("variant").get<std::string>());
  out.stkg.bin_minutes = meta.at("bin_minutes").get<int>();
  const int bins_per_day = meta.at("bins_per_day").get<int>();
  if (bins_per_day != bins_per_day_for(out.stkg.bin_minutes))
    throw DataError("bins_per_day disagrees with bin_minutes in kg_meta.json");
  out.stkg.vocab = EntityVocab::with_time_bins(bins_per_day);
  EntityVocab& vocab = out.stkg.vocab;

  {
    auto is = detail::open_in(dir / detail::kVocabFile);
    std::string line;
    size_t lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      const std::string where = "vocab.tsv:" + std::to_string(lineno);
      auto tab = line.find('\t');
      if (tab == std::string::npos) throw DataError(where + ": expected 'kind<TAB>name'");
      EntityKind kind = detail::kind_from_int(std::stoi(line.substr(0, tab)), where);
      vocab.add(kind, line.substr(tab + 1));
    }
  }

  const uint32_t n_users = vocab.count(EntityKind::User);
  const uint32_t n_pois = vocab.count(EntityKind::Poi);
  auto check_index = [](uint32_t idx, uint32_t n, const std::string& where) {
    if (idx >= n) throw DataError(where + ": entity index " + std::to_string(idx) + " out of range");
  };
  auto check_slot = [&](int day, int slot, const std::string& where) {
    if (day < 0 || day > 1 || slot < 0 || slot >= bins_per_day)
      throw DataError(where + ": bad time bin");
  };

  {
    auto is = detail::open_in(dir / detail::kStmprFile);
    std::string line;
    size_t lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      const std::string where = "stmpr_facts.tsv:" + std::to_string(lineno);
      std::istringstream ss(line);
      uint32_t user = 0, poi = 0, aux_index = 0;
      int day = 0, slot = 0, aux_kind = 0;
      if (!(ss >> user >> poi >> day >> slot >> aux_kind >> aux_index))
        throw DataError(where + ": expected 6 fields");
      check_index(user, n_users, where);
      check_index(poi, n_pois, where);
      check_slot(day, slot, where);
      StmprFact fact;
      fact.user = EntityId{EntityKind::User, user};
      fact.poi = EntityId{EntityKind::Poi, poi};
      fact.bin = TimeBin{slot, DayType(day)};
      fact.variant = out.stkg.variant;
      if (aux_kind >= 0) {
        EntityKind kind = detail::kind_from_int(aux_kind, where);
        check_index(aux_index, vocab.count(kind), where);
        fact.aux = EntityId{kind, aux_index};
        fact.has_aux = true;
      }
      out.stkg.stmpr_facts.push_back(fact);
    }
  }

  {
    auto is = detail::open_in(dir / detail::kAffiliationFile);
    std::string line;
    size_t lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      const std::string where = "affiliation_facts.tsv:" + std::to_string(lineno);
      std::istringstream ss(line);
      int relation = 0, subject_kind = 0, object_kind = 0;
      uint32_t subject = 0, object = 0;
      if (!(ss >> relation >> subject_kind >> subject >> object_kind >> object))
        throw DataError(where + ": expected 5 fields");
      if (relation < 0 || relation > 3) throw DataError(where + ": bad relation");
      AffiliationFact fact;
      fact.relation = AffiliationRel(relation);
      fact.subject.kind = detail::kind_from_int(subject_kind, where);
      fact.subject.index = subject;
      fact.object.kind = detail::kind_from_int(object_kind, where);
      fact.object.index = object;
      check_index(subject, vocab.count(fact.subject.kind), where);
      check_index(object, vocab.count(fact.object.kind), where);
      if (relation < 3)
        out.stkg.affiliation[size_t(relation)].push_back(fact);
      else
        out.stkg.cat_affiliation.push_back(fact);
    }
  }

  out.split.train.resize(n_users);
  out.split.valid.resize(n_users);
  out.split.test.resize(n_users);
  {
    auto is = detail::open_in(dir / detail::kSplitFile);
    std::string line;
    size_t lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      const std::string where = "split_records.tsv:" + std::to_string(lineno);
      std::istringstream ss(line);
      int part = 0, day = 0, slot = 0;
      uint32_t user = 0, poi = 0;
      int64_t timestamp = 0;
      if (!(ss >> part >> user >> poi >> timestamp >> day >> slot))
        throw DataError(where + ": expected 6 fields");
      if (part < 0 || part > 2) throw DataError(where + ": bad split part");
      check_index(user, n_users, where);
      check_index(poi, n_pois, where);
      check_slot(day, slot, where);
      MobilityRecord rec;
      rec.user = EntityId{EntityKind::User, user};
      rec.poi = EntityId{EntityKind::Poi, poi};
      rec.timestamp = timestamp;
      rec.bin = TimeBin{slot, DayType(day)};
      auto& parts = part == 0 ? out.split.train : part == 1 ? out.split.valid : out.split.test;
      parts[user].push_back(rec);
    }
  }

  auto expect = [&](const char* group, const char* key, size_t actual) {
    size_t declared = meta.at(group).at(key).get<size_t>();
    if (declared != actual)
      throw DataError(std::string("kg_meta.json declares ") + std::to_string(declared) + " " +
                      group + "." + key + " but files contain " + std::to_string(actual));
  };
  expect("facts", "stmpr", out.stkg.stmpr_facts.size());
  expect("facts", "affiliation_c1", out.stkg.affiliation[0].size());
  expect("facts", "affiliation_c2", out.stkg.affiliation[1].size());
  expect("facts", "affiliation_c3", out.stkg.affiliation[2].size());
  expect("facts", "cat_affiliation", out.stkg.cat_affiliation.size());
  expect("records", "train", out.split.count(out.split.train));
  expect("records", "valid", out.split.count(out.split.valid));
  expect("records", "test", out.split.count(out.split.test));
  return out;
}

}  // namespace stkg
