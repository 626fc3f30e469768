#pragma once
// Core domain vocabulary shared by every other module: entity identifiers,
// time-bin arithmetic, mobility facts and the bidirectional entity numbering.
// Everything here is immutable after construction and safe to share across
// read-only workers.

#include <array>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace stkg {

// ---------------------------------------------------------------------------
// Error taxonomy. The CLI maps these onto distinct exit codes.
// ---------------------------------------------------------------------------

// Bad flags, config keys, or option combinations requested by the user.
class ConfigError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Malformed or internally inconsistent input data.
class DataError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Filesystem and serialization failures.
class IoError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Internal invariant violations surfacing at run time (numerics, bad state).
class RuntimeError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Entities
// ---------------------------------------------------------------------------

enum class EntityKind : uint8_t {
  User = 0,
  Poi = 1,
  TimeBin = 2,
  Cat1 = 3,  // fine-level category
  Cat2 = 4,  // mid-level category
  Cat3 = 5,  // coarse-level category
  Sentinel = 6,  // "no previous visit" placeholder with a trainable embedding
};

inline constexpr int kNumEntityKinds = 7;

inline const char* to_string(EntityKind kind) {
  switch (kind) {
    case EntityKind::User: return "user";
    case EntityKind::Poi: return "poi";
    case EntityKind::TimeBin: return "time_bin";
    case EntityKind::Cat1: return "cat1";
    case EntityKind::Cat2: return "cat2";
    case EntityKind::Cat3: return "cat3";
    case EntityKind::Sentinel: return "sentinel";
  }
  return "?";
}

// Category kind for level 1..3.
inline EntityKind category_kind(int level) {
  switch (level) {
    case 1: return EntityKind::Cat1;
    case 2: return EntityKind::Cat2;
    case 3: return EntityKind::Cat3;
  }
  throw ConfigError("category level must be 1, 2 or 3");
}

struct EntityId {
  EntityKind kind{EntityKind::User};
  uint32_t index{0};

  friend bool operator==(const EntityId&, const EntityId&) = default;
};

struct EntityIdHash {
  size_t operator()(const EntityId& id) const {
    return std::hash<uint64_t>{}((uint64_t(id.kind) << 32) | id.index);
  }
};

// ---------------------------------------------------------------------------
// Time bins
// ---------------------------------------------------------------------------

enum class DayType : uint8_t { Working = 0, NonWorking = 1 };

// Slot within a day crossed with the working/non-working day type. With
// 30-minute bins there are 48 slots per day and 96 bins in total.
struct TimeBin {
  int slot{0};
  DayType day_type{DayType::Working};

  friend bool operator==(const TimeBin&, const TimeBin&) = default;
};

inline int flatten_timebin(const TimeBin& bin, int bins_per_day) {
  return int(bin.day_type) * bins_per_day + bin.slot;
}

inline TimeBin unflatten_timebin(int flat, int bins_per_day) {
  return TimeBin{flat % bins_per_day, DayType(flat / bins_per_day)};
}

// Proleptic Gregorian civil-date arithmetic (Howard Hinnant's algorithms).
inline int64_t days_from_civil(int y, int m, int d) {
  y -= m <= 2;
  const int64_t era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = unsigned(y - era * 400);
  const unsigned doy = (153u * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + int64_t(doe) - 719468;
}

inline void civil_from_days(int64_t z, int& y, int& m, int& d) {
  z += 719468;
  const int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const unsigned doe = unsigned(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const int64_t yy = int64_t(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  d = int(doy - (153 * mp + 2) / 5 + 1);
  m = int(mp + (mp < 10 ? 3 : -9));
  y = int(yy + (m <= 2));
}

// 0 = Monday ... 6 = Sunday.
inline int weekday_from_days(int64_t z) {
  return int(z >= -3 ? (z + 3) % 7 : (z + 4) % 7 + 6);
}

inline int64_t floor_div(int64_t a, int64_t b) {
  int64_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

inline int64_t floor_mod(int64_t a, int64_t b) { return a - floor_div(a, b) * b; }

// Maps a local civil day to its day type. Default rule: Saturday and Sunday
// are non-working; an explicit holiday list can mark extra dates non-working.
class Calendar {
public:
  Calendar() = default;

  void add_holiday(int y, int m, int d) { holidays_.insert(days_from_civil(y, m, d)); }

  // Accepts "YYYY-MM-DD".
  void add_holiday(const std::string& date) {
    int y = 0, m = 0, d = 0;
    if (std::sscanf(date.c_str(), "%d-%d-%d", &y, &m, &d) != 3)
      throw DataError("bad holiday date '" + date + "' (expected YYYY-MM-DD)");
    add_holiday(y, m, d);
  }

  DayType day_type(int64_t local_day) const {
    if (holidays_.count(local_day)) return DayType::NonWorking;
    return weekday_from_days(local_day) >= 5 ? DayType::NonWorking : DayType::Working;
  }

  size_t holiday_count() const { return holidays_.size(); }

private:
  std::unordered_set<int64_t> holidays_;
};

// Discretizes an epoch timestamp into a time bin. Timestamps are interpreted
// in a single configured local time zone (utc_offset_minutes); bin intervals
// are half-open [start, end), so a timestamp exactly on a boundary falls into
// the later bin.
inline TimeBin discretize_timestamp(int64_t ts, int bin_minutes, const Calendar& calendar,
                                    int utc_offset_minutes = 0) {
  if (bin_minutes <= 0 || 1440 % bin_minutes != 0)
    throw ConfigError("bin_minutes must divide 1440, got " + std::to_string(bin_minutes));
  const int64_t local = ts + int64_t(utc_offset_minutes) * 60;
  const int64_t day = floor_div(local, 86400);
  const int minutes = int(floor_mod(local, 86400) / 60);
  return TimeBin{minutes / bin_minutes, calendar.day_type(day)};
}

inline int bins_per_day_for(int bin_minutes) {
  if (bin_minutes <= 0 || 1440 % bin_minutes != 0)
    throw ConfigError("bin_minutes must divide 1440, got " + std::to_string(bin_minutes));
  return 1440 / bin_minutes;
}

// ---------------------------------------------------------------------------
// Facts
// ---------------------------------------------------------------------------

struct MobilityRecord {
  EntityId user;
  EntityId poi;
  int64_t timestamp{0};  // epoch seconds
  TimeBin bin;
};

// Mobility-pattern variants differing in the attached auxiliary entity.
enum class StmprVariant : uint8_t {
  V0 = 0,  // no auxiliary information
  V1 = 1,  // most recently visited PoI
  V2 = 2,  // fine-level category of the most recent PoI
  V3 = 3,  // mid-level category of the most recent PoI
  V4 = 4,  // coarse-level category of the most recent PoI
};

inline const char* to_string(StmprVariant v) {
  static const char* names[] = {"V0", "V1", "V2", "V3", "V4"};
  return names[int(v)];
}

inline StmprVariant stmpr_variant_from_string(const std::string& s) {
  for (int i = 0; i <= 4; ++i)
    if (s == "V" + std::to_string(i) || s == "v" + std::to_string(i)) return StmprVariant(i);
  throw ConfigError("unknown variant '" + s + "' (expected V0..V4)");
}

// Entity kind populating the aux slot for a variant; empty for V0.
inline std::optional<EntityKind> aux_kind(StmprVariant v) {
  switch (v) {
    case StmprVariant::V0: return std::nullopt;
    case StmprVariant::V1: return EntityKind::Poi;
    case StmprVariant::V2: return EntityKind::Cat1;
    case StmprVariant::V3: return EntityKind::Cat2;
    case StmprVariant::V4: return EntityKind::Cat3;
  }
  return std::nullopt;
}

// One mobility-pattern fact: user visited poi during bin under auxiliary
// context aux. All defined variants carry at most one aux entity; the scoring
// layer nevertheless accepts arbitrary spans.
struct StmprFact {
  EntityId user;
  EntityId poi;
  TimeBin bin;
  EntityId aux{};  // valid iff has_aux
  bool has_aux{false};
  StmprVariant variant{StmprVariant::V0};

  std::span<const EntityId> aux_span() const {
    return has_aux ? std::span<const EntityId>(&aux, 1) : std::span<const EntityId>();
  }
};

enum class AffiliationRel : uint8_t {
  C1 = 0,      // poi -> fine category
  C2 = 1,      // poi -> mid category
  C3 = 2,      // poi -> coarse category
  CatCat = 3,  // finer category -> coarser category
};

inline const char* to_string(AffiliationRel r) {
  static const char* names[] = {"C1", "C2", "C3", "CatCat"};
  return names[int(r)];
}

struct AffiliationFact {
  EntityId subject;  // poi, or the finer category for CatCat
  EntityId object;   // category
  AffiliationRel relation{AffiliationRel::C1};

  friend bool operator==(const AffiliationFact&, const AffiliationFact&) = default;
};

// ---------------------------------------------------------------------------
// Vocabulary
// ---------------------------------------------------------------------------

// Bidirectional numbering of external string identifiers per entity kind.
// Time bins and the sentinel are registered up front; users, PoIs and
// categories are numbered in first-appearance order during ingestion.
class EntityVocab {
public:
  EntityVocab() = default;

  static EntityVocab with_time_bins(int bins_per_day) {
    EntityVocab v;
    v.bins_per_day_ = bins_per_day;
    for (int day = 0; day < 2; ++day)
      for (int slot = 0; slot < bins_per_day; ++slot)
        v.add(EntityKind::TimeBin, (day == 0 ? "W" : "N") + std::to_string(slot));
    v.add(EntityKind::Sentinel, "<none>");
    return v;
  }

  // Get-or-insert; insertion order defines the internal index.
  EntityId add(EntityKind kind, const std::string& external) {
    auto& idx = index_[int(kind)];
    auto it = idx.find(external);
    if (it != idx.end()) return EntityId{kind, it->second};
    uint32_t i = uint32_t(names_[int(kind)].size());
    names_[int(kind)].push_back(external);
    idx.emplace(external, i);
    return EntityId{kind, i};
  }

  std::optional<EntityId> find(EntityKind kind, const std::string& external) const {
    const auto& idx = index_[int(kind)];
    auto it = idx.find(external);
    if (it == idx.end()) return std::nullopt;
    return EntityId{kind, it->second};
  }

  const std::string& external_of(EntityId id) const {
    const auto& v = names_[int(id.kind)];
    if (id.index >= v.size())
      throw DataError(std::string("entity index out of range for kind ") + to_string(id.kind));
    return v[id.index];
  }

  uint32_t count(EntityKind kind) const { return uint32_t(names_[int(kind)].size()); }

  const std::vector<std::string>& names(EntityKind kind) const { return names_[int(kind)]; }

  int bins_per_day() const { return bins_per_day_; }

  EntityId sentinel() const { return EntityId{EntityKind::Sentinel, 0}; }

  EntityId time_bin_id(const TimeBin& bin) const {
    return EntityId{EntityKind::TimeBin, uint32_t(flatten_timebin(bin, bins_per_day_))};
  }

private:
  std::array<std::vector<std::string>, kNumEntityKinds> names_;
  std::array<std::unordered_map<std::string, uint32_t>, kNumEntityKinds> index_;
  int bins_per_day_{0};
};

// ---------------------------------------------------------------------------
// The graph
// ---------------------------------------------------------------------------

// Selectable sub-graphs for training. Mobility facts, per-level affiliation
// facts, and the optional category-to-category affiliation facts.
struct GraphParts {
  bool mobility{true};
  std::array<bool, 3> affiliation{true, true, true};
  bool cat_affiliation{false};

  friend bool operator==(const GraphParts&, const GraphParts&) = default;
};

struct Stkg {
  EntityVocab vocab;
  std::vector<StmprFact> stmpr_facts;                       // kept with duplicates
  std::array<std::vector<AffiliationFact>, 3> affiliation;  // per level, deduplicated
  std::vector<AffiliationFact> cat_affiliation;             // deduplicated
  StmprVariant variant{StmprVariant::V0};
  int bin_minutes{30};

  size_t total_facts(const GraphParts& parts) const {
    size_t n = parts.mobility ? stmpr_facts.size() : 0;
    for (int i = 0; i < 3; ++i)
      if (parts.affiliation[i]) n += affiliation[i].size();
    if (parts.cat_affiliation) n += cat_affiliation.size();
    return n;
  }
};

}  // namespace stkg
