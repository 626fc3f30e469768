#pragma once
// Binary checkpoint persistence for embedding tables: a fixed header, the
// entity vocabularies, then every table's raw values in declaration order.
// Round-trips are bit-exact; a JSON manifest sits next to the payload.

#include <cstring>
#include <fstream>
#include <string>
#include <variant>

#include <json.hpp>

#include "stkg/digest.hpp"
#include "stkg/embedding.hpp"

namespace stkg {

namespace detail {

constexpr char kCheckpointMagic[8] = {'S', 'T', 'K', 'G', 'E', 'M', 'B', '\0'};
constexpr uint32_t kCheckpointVersion = 1;

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw IoError("truncated checkpoint");
  return v;
}

inline void write_string(std::ostream& os, const std::string& s) {
  write_pod(os, uint32_t(s.size()));
  os.write(s.data(), std::streamsize(s.size()));
}

inline std::string read_string(std::istream& is) {
  uint32_t n = read_pod<uint32_t>(is);
  std::string s(n, '\0');
  is.read(s.data(), std::streamsize(n));
  if (!is) throw IoError("truncated checkpoint string");
  return s;
}

}  // namespace detail

struct CheckpointMeta {
  int dim{0};
  int temporal_dim{0};
  int precision_bytes{8};
  uint64_t seed{0};
  StmprVariant variant{StmprVariant::V0};
  int bin_minutes{30};
};

template <typename S>
void save_checkpoint(const std::string& path, const EmbeddingTableT<S>& table,
                     const EntityVocab& vocab, const CheckpointMeta& meta_in) {
  using Table = typename EmbeddingTableT<S>::Table;
  CheckpointMeta meta = meta_in;
  meta.dim = table.dim();
  meta.temporal_dim = table.temporal_dim();
  meta.precision_bytes = int(sizeof(S));

  {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write checkpoint '" + path + "'");
    os.write(detail::kCheckpointMagic, sizeof(detail::kCheckpointMagic));
    detail::write_pod(os, detail::kCheckpointVersion);
    detail::write_pod(os, uint32_t(meta.dim));
    detail::write_pod(os, uint32_t(meta.temporal_dim));
    detail::write_pod(os, uint8_t(meta.precision_bytes));
    detail::write_pod(os, meta.seed);
    detail::write_pod(os, uint8_t(meta.variant));
    detail::write_pod(os, uint32_t(meta.bin_minutes));
    detail::write_pod(os, uint32_t(vocab.bins_per_day()));

    for (int k = 0; k < kNumEntityKinds; ++k) {
      const auto& names = vocab.names(EntityKind(k));
      detail::write_pod(os, uint64_t(names.size()));
      for (const auto& name : names) detail::write_string(os, name);
    }

    for (int t = 0; t < EmbeddingTableT<S>::kNumTables; ++t) {
      const auto& raw = table.raw(Table(t));
      detail::write_pod(os, uint64_t(table.rows(Table(t))));
      detail::write_pod(os, uint64_t(table.dim_of(Table(t))));
      os.write(reinterpret_cast<const char*>(raw.data()),
               std::streamsize(raw.size() * sizeof(S)));
    }
    if (!os) throw IoError("short write on checkpoint '" + path + "'");
  }

  nlohmann::json manifest;
  manifest["format"] = "stkg-checkpoint";
  manifest["format_version"] = detail::kCheckpointVersion;
  manifest["dim"] = meta.dim;
  manifest["temporal_dim"] = meta.temporal_dim;
  manifest["precision_bytes"] = meta.precision_bytes;
  manifest["seed"] = meta.seed;
  manifest["variant"] = to_string(meta.variant);
  manifest["bin_minutes"] = meta.bin_minutes;
  manifest["entities"] = {{"users", vocab.count(EntityKind::User)},
                          {"pois", vocab.count(EntityKind::Poi)},
                          {"time_bins", vocab.count(EntityKind::TimeBin)},
                          {"cat1", vocab.count(EntityKind::Cat1)},
                          {"cat2", vocab.count(EntityKind::Cat2)},
                          {"cat3", vocab.count(EntityKind::Cat3)}};
  manifest["parameters"] = table.parameter_count();
  manifest["sha256"] = sha256_file(path);
  std::ofstream mf(path + ".json", std::ios::trunc);
  mf << manifest.dump(2) << "\n";
}

template <typename S>
struct LoadedCheckpoint {
  EmbeddingTableT<S> table;
  EntityVocab vocab;
  CheckpointMeta meta;
};

// Reads the header only, so callers can pick the right precision first.
inline CheckpointMeta peek_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint '" + path + "'");
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, detail::kCheckpointMagic, sizeof(magic)) != 0)
    throw DataError("'" + path + "' is not a checkpoint");
  uint32_t version = detail::read_pod<uint32_t>(is);
  if (version != detail::kCheckpointVersion)
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  CheckpointMeta meta;
  meta.dim = int(detail::read_pod<uint32_t>(is));
  meta.temporal_dim = int(detail::read_pod<uint32_t>(is));
  meta.precision_bytes = int(detail::read_pod<uint8_t>(is));
  meta.seed = detail::read_pod<uint64_t>(is);
  meta.variant = StmprVariant(detail::read_pod<uint8_t>(is));
  meta.bin_minutes = int(detail::read_pod<uint32_t>(is));
  return meta;
}

template <typename S>
LoadedCheckpoint<S> load_checkpoint(const std::string& path) {
  using Table = typename EmbeddingTableT<S>::Table;
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint '" + path + "'");
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, detail::kCheckpointMagic, sizeof(magic)) != 0)
    throw DataError("'" + path + "' is not a checkpoint");
  uint32_t version = detail::read_pod<uint32_t>(is);
  if (version != detail::kCheckpointVersion)
    throw DataError("unsupported checkpoint version " + std::to_string(version));

  LoadedCheckpoint<S> out;
  CheckpointMeta& meta = out.meta;
  meta.dim = int(detail::read_pod<uint32_t>(is));
  meta.temporal_dim = int(detail::read_pod<uint32_t>(is));
  meta.precision_bytes = int(detail::read_pod<uint8_t>(is));
  meta.seed = detail::read_pod<uint64_t>(is);
  meta.variant = StmprVariant(detail::read_pod<uint8_t>(is));
  meta.bin_minutes = int(detail::read_pod<uint32_t>(is));
  if (meta.precision_bytes != int(sizeof(S)))
    throw ConfigError("checkpoint stores " + std::to_string(meta.precision_bytes * 8) +
                      "-bit values; load with the matching precision");

  uint32_t bins_per_day = detail::read_pod<uint32_t>(is);
  out.vocab = EntityVocab::with_time_bins(int(bins_per_day));
  for (int k = 0; k < kNumEntityKinds; ++k) {
    uint64_t n = detail::read_pod<uint64_t>(is);
    for (uint64_t i = 0; i < n; ++i) {
      std::string name = detail::read_string(is);
      EntityId id = out.vocab.add(EntityKind(k), name);
      if (id.index != i)
        throw DataError("checkpoint vocabulary out of order for kind " +
                        std::string(to_string(EntityKind(k))));
    }
  }

  out.table = EmbeddingTableT<S>(out.vocab, meta.dim, meta.temporal_dim);
  for (int t = 0; t < EmbeddingTableT<S>::kNumTables; ++t) {
    uint64_t rows = detail::read_pod<uint64_t>(is);
    uint64_t dim = detail::read_pod<uint64_t>(is);
    if (rows != out.table.rows(Table(t)) || dim != out.table.dim_of(Table(t)))
      throw DataError("checkpoint table shape mismatch");
    auto& raw = out.table.raw(Table(t));
    is.read(reinterpret_cast<char*>(raw.data()), std::streamsize(raw.size() * sizeof(S)));
    if (!is) throw IoError("truncated checkpoint payload");
  }
  return out;
}

}  // namespace stkg
