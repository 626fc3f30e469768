#include <catch2/catch_amalgamated.hpp>

#include <cstring>
#include <filesystem>

#include "oracles.hpp"
#include "stkg/checkpoint.hpp"
#include "stkg/embedding.hpp"

using namespace stkg;

namespace {

// A small vocabulary with a handful of each entity kind.
EntityVocab small_vocab(int users = 3, int pois = 5, int cats = 2, int bins_per_day = 4) {
  EntityVocab v = EntityVocab::with_time_bins(bins_per_day);
  for (int i = 0; i < users; ++i) v.add(EntityKind::User, "u" + std::to_string(i));
  for (int i = 0; i < pois; ++i) v.add(EntityKind::Poi, "p" + std::to_string(i));
  for (int level = 1; level <= 3; ++level)
    for (int i = 0; i < cats; ++i)
      v.add(category_kind(level), "c" + std::to_string(level) + "_" + std::to_string(i));
  return v;
}

template <typename S>
void set_row(EmbeddingTableT<S>& table, typename EmbeddingTableT<S>::Table t, size_t row,
             const std::vector<Cd>& values) {
  S* p = table.row(t, row);
  for (size_t i = 0; i < values.size(); ++i) {
    p[2 * i] = S(values[i].re);
    p[2 * i + 1] = S(values[i].im);
  }
}

template <typename S>
void fill_ones(EmbeddingTableT<S>& table) {
  using Table = typename EmbeddingTableT<S>::Table;
  for (int t = 0; t < EmbeddingTableT<S>::kNumTables; ++t) {
    auto& raw = table.raw(Table(t));
    for (size_t i = 0; i < raw.size(); i += 2) {
      raw[i] = S(1);
      raw[i + 1] = S(0);
    }
  }
}

}  // namespace

TEST_CASE("temporal_dim rounds half up") {
  REQUIRE(temporal_dim(100, 0.5) == 50);
  REQUIRE(temporal_dim(4, 0.5) == 2);
  REQUIRE(temporal_dim(5, 0.5) == 3);  // 2.5 rounds up
  REQUIRE(temporal_dim(10, 0.0) == 0);
  REQUIRE(temporal_dim(10, 1.0) == 10);
  REQUIRE(temporal_dim(3, 0.33) == 1);
  REQUIRE_THROWS_AS(temporal_dim(0, 0.5), ConfigError);
  REQUIRE_THROWS_AS(temporal_dim(10, -0.1), ConfigError);
  REQUIRE_THROWS_AS(temporal_dim(10, 1.1), ConfigError);
}

TEST_CASE("aux_embedding multiplies member embeddings element-wise") {
  EntityVocab vocab = small_vocab();
  EmbeddingTable table(vocab, 1, 0);

  EntityId e1{EntityKind::Poi, 0};
  EntityId e2{EntityKind::Poi, 1};
  set_row(table, EmbeddingTable::Table::Pois, 0, {{1.0, 1.0}});   // 1+i
  set_row(table, EmbeddingTable::Table::Pois, 1, {{2.0, 0.0}});   // 2

  SECTION("empty set gives the multiplicative identity") {
    auto v = aux_embedding(table, {});
    REQUIRE(v[0].re == 1.0);
    REQUIRE(v[0].im == 0.0);
  }

  SECTION("a single member passes through unchanged") {
    std::vector<EntityId> aux = {e1};
    auto v = aux_embedding(table, aux);
    REQUIRE(v[0].re == 1.0);
    REQUIRE(v[0].im == 1.0);
  }

  SECTION("(1+i)(2+0i) = 2+2i") {
    std::vector<EntityId> aux = {e1, e2};
    auto v = aux_embedding(table, aux);
    REQUIRE(v[0].re == 2.0);
    REQUIRE(v[0].im == 2.0);
  }
}

TEST_CASE("relation_embedding concatenates the modulated and static blocks") {
  EntityVocab vocab = small_vocab();

  SECTION("d=2, half temporal: [0-1i, 1+0i] from the worked example") {
    EmbeddingTable table(vocab, 2, 1);
    set_row(table, EmbeddingTable::Table::RelV, 0, {{1.0, 0.0}, {1.0, 0.0}});
    // every time bin = i so any bin works
    for (size_t b = 0; b < table.rows(EmbeddingTable::Table::TimeBins); ++b)
      set_row(table, EmbeddingTable::Table::TimeBins, b, {{0.0, 1.0}});
    auto r = relation_embedding(table, vocab, TimeBin{0, DayType::Working}, {});
    REQUIRE(r[0].re == 0.0);
    REQUIRE(r[0].im == -1.0);  // conj(i) = -i
    REQUIRE(r[1].re == 1.0);
    REQUIRE(r[1].im == 0.0);
  }

  SECTION("zero temporal share means no time dependence") {
    EmbeddingTable table = init_table<double>(vocab, 4, 0, 7, 0.5);
    auto a = relation_embedding(table, vocab, TimeBin{0, DayType::Working}, {});
    auto b = relation_embedding(table, vocab, TimeBin{3, DayType::NonWorking}, {});
    for (int i = 0; i < 4; ++i) {
      REQUIRE(a[i].re == b[i].re);
      REQUIRE(a[i].im == b[i].im);
    }
  }

  SECTION("full temporal share with no aux is rel' * conj(t)") {
    EmbeddingTable table = init_table<double>(vocab, 3, 3, 7, 0.5);
    TimeBin bin{1, DayType::Working};
    auto r = relation_embedding(table, vocab, bin, {});
    auto rel = oracle::load_row(table, EmbeddingTable::Table::RelV, 0);
    auto t = oracle::load_row(table, EmbeddingTable::Table::TimeBins,
                              vocab.time_bin_id(bin).index);
    for (int i = 0; i < 3; ++i) {
      auto want = rel[size_t(i)] * std::conj(t[size_t(i)]);
      REQUIRE_THAT(r[i].re, Catch::Matchers::WithinRel(want.real(), 1e-12));
      REQUIRE_THAT(r[i].im, Catch::Matchers::WithinRel(want.imag(), 1e-12));
    }
  }
}

TEST_CASE("score_stmpr matches hand arithmetic") {
  EntityVocab vocab = small_vocab();

  SECTION("all-ones embeddings score d") {
    for (int d : {1, 3, 7}) {
      EmbeddingTable table(vocab, d, d / 2);
      fill_ones(table);
      std::vector<EntityId> aux = {EntityId{EntityKind::Poi, 2}};
      double s = score_stmpr(table, vocab, EntityId{EntityKind::User, 0},
                             EntityId{EntityKind::Poi, 0}, TimeBin{2, DayType::Working}, aux);
      REQUIRE(s == double(d));
    }
  }

  SECTION("d=1: Re((1+i)(1-i)conj(i)) = 0") {
    EmbeddingTable table(vocab, 1, 0);
    set_row(table, EmbeddingTable::Table::Users, 0, {{1.0, 1.0}});
    set_row(table, EmbeddingTable::Table::RelV, 0, {{1.0, -1.0}});
    set_row(table, EmbeddingTable::Table::Pois, 0, {{0.0, 1.0}});
    double s = score_stmpr(table, vocab, EntityId{EntityKind::User, 0},
                           EntityId{EntityKind::Poi, 0}, TimeBin{0, DayType::Working}, {});
    REQUIRE(s == 0.0);
  }

  SECTION("random instances agree with the naive oracle to 1e-10") {
    int cases = 0;
    for (int d : {1, 2, 4, 8}) {
      for (uint64_t seed = 0; seed < 50; ++seed) {
        int d1 = temporal_dim(d, 0.5);
        EmbeddingTable table = init_table<double>(vocab, d, d1, seed, 1.0);
        std::mt19937 pick(uint32_t(seed * 31 + d));
        EntityId u{EntityKind::User, uint32_t(pick() % 3)};
        EntityId p{EntityKind::Poi, uint32_t(pick() % 5)};
        TimeBin bin{int(pick() % 4), DayType(pick() % 2)};
        std::vector<EntityId> aux;
        if (pick() % 2) aux.push_back(EntityId{EntityKind::Cat2, uint32_t(pick() % 2)});
        double got = score_stmpr(table, vocab, u, p, bin, aux);
        double want = oracle::score_stmpr_naive(table, vocab, u, p, bin, aux);
        REQUIRE(oracle::close(got, want, 1e-10));
        ++cases;
      }
    }
    REQUIRE(cases == 200);
  }
}

TEST_CASE("score_affiliation matches hand arithmetic") {
  EntityVocab vocab = small_vocab();

  SECTION("all-ones embeddings score d") {
    EmbeddingTable table(vocab, 4, 2);
    fill_ones(table);
    double s = score_affiliation(table, EntityId{EntityKind::Poi, 1},
                                 EntityId{EntityKind::Cat1, 0}, AffiliationRel::C1);
    REQUIRE(s == 4.0);
  }

  SECTION("d=1: Re(2 * i * conj(i)) = 2") {
    EmbeddingTable table(vocab, 1, 0);
    set_row(table, EmbeddingTable::Table::Pois, 0, {{2.0, 0.0}});
    set_row(table, EmbeddingTable::Table::RelC2, 0, {{0.0, 1.0}});
    set_row(table, EmbeddingTable::Table::Cat2, 0, {{0.0, 1.0}});
    double s = score_affiliation(table, EntityId{EntityKind::Poi, 0},
                                 EntityId{EntityKind::Cat2, 0}, AffiliationRel::C2);
    REQUIRE(s == 2.0);
  }

  SECTION("random instances agree with the naive oracle") {
    for (uint64_t seed = 0; seed < 50; ++seed) {
      EmbeddingTable table = init_table<double>(vocab, 4, 2, seed, 1.0);
      for (AffiliationRel rel :
           {AffiliationRel::C1, AffiliationRel::C2, AffiliationRel::C3, AffiliationRel::CatCat}) {
        EntityId subject = rel == AffiliationRel::CatCat ? EntityId{EntityKind::Cat1, 0}
                                                         : EntityId{EntityKind::Poi, 2};
        EntityId object{rel == AffiliationRel::C1   ? EntityKind::Cat1
                        : rel == AffiliationRel::C2 ? EntityKind::Cat2
                                                    : EntityKind::Cat3,
                        1};
        double got = score_affiliation(table, subject, object, rel);
        double want = oracle::score_affiliation_naive(table, subject, object, rel);
        REQUIRE(oracle::close(got, want, 1e-10));
      }
    }
  }
}

TEMPLATE_TEST_CASE("batch scoring is bitwise equal to scalar scoring", "", float, double) {
  using S = TestType;
  EntityVocab vocab = small_vocab(3, 100, 2, 4);
  EmbeddingTableT<S> table = init_table<S>(vocab, 8, 4, 99, 0.3);

  EntityId u{EntityKind::User, 1};
  TimeBin bin{3, DayType::NonWorking};
  std::vector<EntityId> aux = {EntityId{EntityKind::Poi, 17}};

  std::vector<uint32_t> candidates(100);
  for (uint32_t i = 0; i < 100; ++i) candidates[i] = i;

  auto batch = score_stmpr_batch(table, vocab, u, bin, aux, candidates);
  REQUIRE(batch.size() == 100);
  for (uint32_t i = 0; i < 100; ++i) {
    double scalar = score_stmpr(table, vocab, u, EntityId{EntityKind::Poi, i}, bin, aux);
    REQUIRE(std::memcmp(&batch[i], &scalar, sizeof(double)) == 0);
  }

  SECTION("singleton batch matches the scalar call") {
    std::vector<uint32_t> one = {42};
    auto s = score_stmpr_batch(table, vocab, u, bin, aux, one);
    REQUIRE(s[0] == score_stmpr(table, vocab, u, EntityId{EntityKind::Poi, 42}, bin, aux));
  }

  SECTION("all-ones table scores d for every candidate") {
    fill_ones(table);
    std::vector<uint32_t> five = {0, 1, 2, 3, 4};
    auto s = score_stmpr_batch(table, vocab, u, bin, {}, five);
    for (double v : s) REQUIRE(v == 8.0);
  }
}

TEST_CASE("scoring is linear in the user embedding") {
  EntityVocab vocab = small_vocab();
  EmbeddingTable table = init_table<double>(vocab, 6, 3, 5, 0.7);
  EntityId u{EntityKind::User, 0};
  EntityId p{EntityKind::Poi, 3};
  TimeBin bin{1, DayType::Working};

  double base = score_stmpr(table, vocab, u, p, bin, {});
  double* row = table.entity_row(u);
  for (int i = 0; i < 12; ++i) row[i] *= 3.0;
  double scaled = score_stmpr(table, vocab, u, p, bin, {});
  REQUIRE_THAT(scaled, Catch::Matchers::WithinRel(3.0 * base, 1e-12));
}

TEST_CASE("an imaginary relation captures antisymmetry") {
  EntityVocab vocab = small_vocab();
  EmbeddingTable table(vocab, 1, 0);
  set_row(table, EmbeddingTable::Table::RelV, 0, {{0.0, 1.0}});

  Cd a{0.8, -0.3}, b{0.4, 0.9};
  EntityId u{EntityKind::User, 0};
  EntityId p{EntityKind::Poi, 0};

  set_row(table, EmbeddingTable::Table::Users, 0, {a});
  set_row(table, EmbeddingTable::Table::Pois, 0, {b});
  double forward = score_stmpr(table, vocab, u, p, TimeBin{0, DayType::Working}, {});

  set_row(table, EmbeddingTable::Table::Users, 0, {b});
  set_row(table, EmbeddingTable::Table::Pois, 0, {a});
  double backward = score_stmpr(table, vocab, u, p, TimeBin{0, DayType::Working}, {});

  REQUIRE_THAT(forward, Catch::Matchers::WithinAbs(-backward, 1e-15));
  REQUIRE(forward != 0.0);
}

TEST_CASE("zero temporal share makes scores time-invariant") {
  EntityVocab vocab = small_vocab();
  EmbeddingTable table = init_table<double>(vocab, 5, 0, 11, 0.5);
  EntityId u{EntityKind::User, 2};
  EntityId p{EntityKind::Poi, 4};
  double first = score_stmpr(table, vocab, u, p, TimeBin{0, DayType::Working}, {});
  for (int slot = 0; slot < 4; ++slot)
    for (int day = 0; day < 2; ++day)
      REQUIRE(score_stmpr(table, vocab, u, p, TimeBin{slot, DayType(day)}, {}) == first);
}

TEST_CASE("init_table is deterministic and scale-aware") {
  EntityVocab vocab = small_vocab();

  SECTION("same seed gives identical tables, different seed differs") {
    auto a = init_table<double>(vocab, 4, 2, 123, 0.1);
    auto b = init_table<double>(vocab, 4, 2, 123, 0.1);
    auto c = init_table<double>(vocab, 4, 2, 124, 0.1);
    bool any_diff = false;
    for (int t = 0; t < EmbeddingTable::kNumTables; ++t) {
      REQUIRE(a.raw(EmbeddingTable::Table(t)) == b.raw(EmbeddingTable::Table(t)));
      if (a.raw(EmbeddingTable::Table(t)) != c.raw(EmbeddingTable::Table(t))) any_diff = true;
    }
    REQUIRE(any_diff);
  }

  SECTION("zero scale zeroes every parameter") {
    auto z = init_table<double>(vocab, 4, 2, 1, 0.0);
    for (int t = 0; t < EmbeddingTable::kNumTables; ++t)
      for (double x : z.raw(EmbeddingTable::Table(t))) REQUIRE(x == 0.0);
  }

  SECTION("default dimensioning: 100 with half temporal share") {
    int d = 100;
    int d1 = temporal_dim(d, 0.5);
    auto table = init_table<double>(vocab, d, d1, 3, 0.1);
    REQUIRE(table.dim() == 100);
    REQUIRE(table.dim_of(EmbeddingTable::Table::Users) == 100);
    REQUIRE(table.dim_of(EmbeddingTable::Table::TimeBins) == 50);
    REQUIRE(table.rows(EmbeddingTable::Table::TimeBins) == 8);  // 2 day types x 4 slots
    REQUIRE(table.rows(EmbeddingTable::Table::RelV) == 1);
    REQUIRE(table.all_finite());
  }

  SECTION("draws look like the requested gaussian") {
    EntityVocab big = small_vocab(200, 200, 2, 4);
    auto table = init_table<double>(big, 16, 8, 77, 0.5);
    const auto& raw = table.raw(EmbeddingTable::Table::Pois);
    double sum = 0, sumsq = 0;
    for (double x : raw) {
      sum += x;
      sumsq += x * x;
    }
    double n = double(raw.size());
    double mean = sum / n;
    double var = sumsq / n - mean * mean;
    REQUIRE(std::abs(mean) < 0.02);
    REQUIRE_THAT(std::sqrt(var), Catch::Matchers::WithinAbs(0.5, 0.02));
  }
}

TEMPLATE_TEST_CASE("checkpoints round-trip bit-exactly", "", float, double) {
  using S = TestType;
  namespace fs = std::filesystem;
  EntityVocab vocab = small_vocab(4, 9, 3, 6);
  EmbeddingTableT<S> table = init_table<S>(vocab, 10, 5, 2024, 0.2);

  CheckpointMeta meta;
  meta.seed = 2024;
  meta.variant = StmprVariant::V4;
  meta.bin_minutes = 240;

  auto path = (fs::temp_directory_path() / "ckpt_test.bin").string();
  save_checkpoint(path, table, vocab, meta);

  SECTION("load restores tables, vocab, and metadata exactly") {
    auto loaded = load_checkpoint<S>(path);
    REQUIRE(loaded.meta.dim == 10);
    REQUIRE(loaded.meta.temporal_dim == 5);
    REQUIRE(loaded.meta.seed == 2024);
    REQUIRE(loaded.meta.variant == StmprVariant::V4);
    REQUIRE(loaded.meta.bin_minutes == 240);
    REQUIRE(loaded.meta.precision_bytes == int(sizeof(S)));
    for (int t = 0; t < EmbeddingTableT<S>::kNumTables; ++t) {
      using Table = typename EmbeddingTableT<S>::Table;
      REQUIRE(loaded.table.raw(Table(t)) == table.raw(Table(t)));
    }
    for (int k = 0; k < kNumEntityKinds; ++k)
      REQUIRE(loaded.vocab.names(EntityKind(k)) == vocab.names(EntityKind(k)));
    REQUIRE(loaded.vocab.bins_per_day() == 6);
  }

  SECTION("save-load-save produces byte-identical files") {
    auto loaded = load_checkpoint<S>(path);
    auto path2 = (fs::temp_directory_path() / "ckpt_test2.bin").string();
    save_checkpoint(path2, loaded.table, loaded.vocab, loaded.meta);
    REQUIRE(sha256_file(path) == sha256_file(path2));
  }

  SECTION("the manifest records shape and payload digest") {
    std::ifstream mf(path + ".json");
    REQUIRE(mf.good());
    auto manifest = nlohmann::json::parse(mf);
    REQUIRE(manifest["dim"] == 10);
    REQUIRE(manifest["sha256"] == sha256_file(path));
    REQUIRE(manifest["entities"]["pois"] == 9);
  }

  SECTION("peeking reads the header without the payload") {
    CheckpointMeta peeked = peek_checkpoint(path);
    REQUIRE(peeked.dim == 10);
    REQUIRE(peeked.precision_bytes == int(sizeof(S)));
  }

  SECTION("loading with the wrong precision is rejected") {
    using Other = std::conditional_t<std::is_same_v<S, float>, double, float>;
    REQUIRE_THROWS_AS(load_checkpoint<Other>(path), ConfigError);
  }

  SECTION("garbage files are rejected") {
    auto bad = (fs::temp_directory_path() / "ckpt_bad.bin").string();
    std::ofstream(bad) << "not a checkpoint";
    REQUIRE_THROWS_AS(load_checkpoint<S>(bad), DataError);
  }
}
