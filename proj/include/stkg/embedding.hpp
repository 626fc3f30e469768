#pragma once
// Complex-valued embedding tables and the multilinear scoring functions:
// mobility facts are scored as Re(<u, r(t,A), conj(p)>) where the relation
// vector is time-modulated on its first d1 dimensions and gated by the
// element-wise product of the auxiliary entity embeddings; affiliation facts
// are scored as Re(<subject, r, conj(object)>).

#include <bit>
#include <cmath>
#include <random>
#include <type_traits>
#include <vector>

#include "stkg/core.hpp"

namespace stkg {

static_assert(std::endian::native == std::endian::little,
              "embedding storage assumes a little-endian host");

// Share of dimensions modulated by time: d1 = round-half-up(alpha * d).
inline int temporal_dim(int d, double alpha) {
  if (d < 1) throw ConfigError("embedding dimension must be >= 1");
  if (alpha < 0.0 || alpha > 1.0) throw ConfigError("temporal ratio must lie in [0, 1]");
  return int(std::floor(alpha * d + 0.5));
}

// Working-precision complex value; scores always accumulate in double.
struct Cd {
  double re{0.0};
  double im{0.0};
};

inline Cd cmul(Cd a, Cd b) { return {a.re * b.re - a.im * b.im, a.re * b.im + a.im * b.re}; }
inline Cd cconj(Cd a) { return {a.re, -a.im}; }
inline Cd cadd(Cd a, Cd b) { return {a.re + b.re, a.im + b.im}; }
inline double cabs(Cd a) { return std::sqrt(a.re * a.re + a.im * a.im); }

// ---------------------------------------------------------------------------
// Embedding storage
// ---------------------------------------------------------------------------

// Parameter tables, in checkpoint order.
enum class ParamTable : int {
  Users = 0,
  Pois,
  TimeBins,
  Cat1,
  Cat2,
  Cat3,
  Sentinel,
  RelV,     // mobility relation: first d1 entries time-modulated, rest static
  RelC1,
  RelC2,
  RelC3,
  RelCatCat,
};
constexpr int kNumParamTables = 12;

inline ParamTable param_table_of(EntityKind kind) {
  switch (kind) {
    case EntityKind::User: return ParamTable::Users;
    case EntityKind::Poi: return ParamTable::Pois;
    case EntityKind::TimeBin: return ParamTable::TimeBins;
    case EntityKind::Cat1: return ParamTable::Cat1;
    case EntityKind::Cat2: return ParamTable::Cat2;
    case EntityKind::Cat3: return ParamTable::Cat3;
    case EntityKind::Sentinel: return ParamTable::Sentinel;
  }
  throw ConfigError("unmapped entity kind");
}

inline ParamTable rel_param_table(AffiliationRel rel) {
  switch (rel) {
    case AffiliationRel::C1: return ParamTable::RelC1;
    case AffiliationRel::C2: return ParamTable::RelC2;
    case AffiliationRel::C3: return ParamTable::RelC3;
    case AffiliationRel::CatCat: return ParamTable::RelCatCat;
  }
  throw ConfigError("unmapped affiliation relation");
}

// All learned parameters, stored row-major with interleaved (re, im) pairs.
// Tables appear in checkpoints in ParamTable order. Time-bin rows have d1
// complex dimensions; every other table has d.
template <typename S>
class EmbeddingTableT {
  static_assert(std::is_floating_point_v<S>);

public:
  using Table = ParamTable;
  static constexpr int kNumTables = kNumParamTables;

  EmbeddingTableT() = default;

  EmbeddingTableT(const EntityVocab& vocab, int d, int d1) : d_(d), d1_(d1) {
    if (d1 < 0 || d1 > d) throw ConfigError("temporal dimension out of range");
    set_shape(Table::Users, vocab.count(EntityKind::User), d);
    set_shape(Table::Pois, vocab.count(EntityKind::Poi), d);
    set_shape(Table::TimeBins, vocab.count(EntityKind::TimeBin), d1);
    set_shape(Table::Cat1, vocab.count(EntityKind::Cat1), d);
    set_shape(Table::Cat2, vocab.count(EntityKind::Cat2), d);
    set_shape(Table::Cat3, vocab.count(EntityKind::Cat3), d);
    set_shape(Table::Sentinel, vocab.count(EntityKind::Sentinel), d);
    for (Table t : {Table::RelV, Table::RelC1, Table::RelC2, Table::RelC3, Table::RelCatCat})
      set_shape(t, 1, d);
  }

  int dim() const { return d_; }
  int temporal_dim() const { return d1_; }

  size_t rows(Table t) const { return rows_[int(t)]; }
  size_t dim_of(Table t) const { return dims_[int(t)]; }

  S* row(Table t, size_t i) { return data_[int(t)].data() + i * 2 * dims_[int(t)]; }
  const S* row(Table t, size_t i) const { return data_[int(t)].data() + i * 2 * dims_[int(t)]; }

  std::vector<S>& raw(Table t) { return data_[int(t)]; }
  const std::vector<S>& raw(Table t) const { return data_[int(t)]; }

  static Table table_of(EntityKind kind) { return param_table_of(kind); }
  static Table rel_table(AffiliationRel rel) { return rel_param_table(rel); }

  S* entity_row(EntityId id) { return row(table_of(id.kind), id.index); }
  const S* entity_row(EntityId id) const { return row(table_of(id.kind), id.index); }

  size_t parameter_count() const {
    size_t n = 0;
    for (const auto& v : data_) n += v.size();
    return n;
  }

  bool all_finite() const {
    for (const auto& v : data_)
      for (S x : v)
        if (!std::isfinite(double(x))) return false;
    return true;
  }

private:
  void set_shape(Table t, size_t rows, size_t dim) {
    rows_[int(t)] = rows;
    dims_[int(t)] = dim;
    data_[int(t)].assign(rows * dim * 2, S(0));
  }

  int d_{0};
  int d1_{0};
  std::array<std::vector<S>, kNumTables> data_;
  std::array<size_t, kNumTables> rows_{};
  std::array<size_t, kNumTables> dims_{};
};

using EmbeddingTable = EmbeddingTableT<double>;

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

// Deterministic standard-normal generator: Box-Muller over raw mt19937 draws.
// Avoids std::normal_distribution, whose output is implementation-defined.
class GaussianRng {
public:
  explicit GaussianRng(uint64_t seed) : rng_(uint32_t(seed)), rng_hi_(uint32_t(seed >> 32) ^ 0x9e3779b9u) {}

  double next() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = (double(rng_()) + 0.5) / 4294967296.0;  // in (0, 1)
    double u2 = (double(rng_()) + 0.5) / 4294967296.0;
    double radius = std::sqrt(-2.0 * std::log(u1));
    double angle = 2.0 * kPi * u2;
    spare_ = radius * std::sin(angle);
    have_spare_ = true;
    return radius * std::cos(angle);
  }

  uint32_t next_raw() { return rng_(); }

private:
  static constexpr double kPi = 3.14159265358979323846;
  std::mt19937 rng_;
  uint32_t rng_hi_;  // reserved so 64-bit seeds differing in high bits stay distinct
  bool have_spare_{false};
  double spare_{0.0};
};

// Fills every table with i.i.d. Gaussian(0, init_scale^2) draws on both the
// real and imaginary parts, in declaration order; deterministic under seed.
template <typename S>
EmbeddingTableT<S> init_table(const EntityVocab& vocab, int d, int d1, uint64_t seed,
                              double init_scale) {
  EmbeddingTableT<S> table(vocab, d, d1);
  GaussianRng rng(seed ^ 0x517cc1b727220a95ULL);
  using Table = typename EmbeddingTableT<S>::Table;
  for (int t = 0; t < EmbeddingTableT<S>::kNumTables; ++t)
    for (S& x : table.raw(Table(t))) x = S(init_scale * rng.next());
  return table;
}

// ---------------------------------------------------------------------------
// Scoring
// ---------------------------------------------------------------------------

namespace detail {

template <typename S>
inline Cd load_c(const S* p, size_t i) {
  return Cd{double(p[2 * i]), double(p[2 * i + 1])};
}

template <typename S>
inline void store_c(S* p, size_t i, Cd v) {
  p[2 * i] = S(v.re);
  p[2 * i + 1] = S(v.im);
}

}  // namespace detail

// Element-wise complex product of the auxiliary entity embeddings; the empty
// set yields the multiplicative identity (all ones).
template <typename S>
std::vector<Cd> aux_embedding(const EmbeddingTableT<S>& table, std::span<const EntityId> aux) {
  std::vector<Cd> out(size_t(table.dim()), Cd{1.0, 0.0});
  for (EntityId id : aux) {
    const S* e = table.entity_row(id);
    for (int i = 0; i < table.dim(); ++i) out[i] = cmul(out[i], detail::load_c(e, i));
  }
  return out;
}

// Relation vector for a mobility fact: first d1 entries are the trainable
// relation block times the conjugated time-bin embedding, the remainder is the
// static block; the whole vector is gated by the auxiliary product.
template <typename S>
std::vector<Cd> relation_embedding(const EmbeddingTableT<S>& table, const EntityVocab& vocab,
                                   const TimeBin& bin, std::span<const EntityId> aux) {
  using Table = typename EmbeddingTableT<S>::Table;
  const int d = table.dim(), d1 = table.temporal_dim();
  std::vector<Cd> out = aux_embedding(table, aux);
  const S* rel = table.row(Table::RelV, 0);
  if (d1 > 0) {
    const S* t = table.row(Table::TimeBins, vocab.time_bin_id(bin).index);
    for (int i = 0; i < d1; ++i)
      out[i] = cmul(cmul(detail::load_c(rel, i), cconj(detail::load_c(t, i))), out[i]);
  }
  for (int i = d1; i < d; ++i) out[i] = cmul(detail::load_c(rel, i), out[i]);
  return out;
}

// Candidate-independent part of the mobility score: q_i = u_i * r_i(t, A).
// Scoring any PoI p is then sum_i Re(q_i * conj(p_i)).
template <typename S>
std::vector<Cd> stmpr_query_vector(const EmbeddingTableT<S>& table, const EntityVocab& vocab,
                                   EntityId user, const TimeBin& bin,
                                   std::span<const EntityId> aux) {
  std::vector<Cd> q = relation_embedding(table, vocab, bin, aux);
  const S* u = table.entity_row(user);
  for (int i = 0; i < table.dim(); ++i) q[i] = cmul(detail::load_c(u, i), q[i]);
  return q;
}

// Re(sum_i q_i * conj(p_i)) accumulated in ascending index order.
template <typename S>
double score_against(const std::vector<Cd>& q, const S* poi_row) {
  double acc = 0.0;
  for (size_t i = 0; i < q.size(); ++i) {
    Cd p = detail::load_c(poi_row, i);
    acc += q[i].re * p.re + q[i].im * p.im;
  }
  return acc;
}

template <typename S>
double score_stmpr(const EmbeddingTableT<S>& table, const EntityVocab& vocab, EntityId user,
                   EntityId poi, const TimeBin& bin, std::span<const EntityId> aux) {
  std::vector<Cd> q = stmpr_query_vector(table, vocab, user, bin, aux);
  return score_against(q, table.entity_row(poi));
}

// Scores one query against many candidate PoIs. Reuses the exact query vector
// a scalar call would compute, so results are bitwise equal to scalar calls.
template <typename S>
std::vector<double> score_stmpr_batch(const EmbeddingTableT<S>& table, const EntityVocab& vocab,
                                      EntityId user, const TimeBin& bin,
                                      std::span<const EntityId> aux,
                                      std::span<const uint32_t> candidates) {
  using Table = typename EmbeddingTableT<S>::Table;
  std::vector<Cd> q = stmpr_query_vector(table, vocab, user, bin, aux);
  std::vector<double> scores(candidates.size());
  for (size_t j = 0; j < candidates.size(); ++j)
    scores[j] = score_against(q, table.row(Table::Pois, candidates[j]));
  return scores;
}

// Affiliation score Re(<subject, r, conj(object)>) for PoI->category and
// category->category triples.
template <typename S>
double score_affiliation(const EmbeddingTableT<S>& table, EntityId subject, EntityId object,
                         AffiliationRel rel) {
  const S* s = table.entity_row(subject);
  const S* r = table.row(EmbeddingTableT<S>::rel_table(rel), 0);
  const S* o = table.entity_row(object);
  double acc = 0.0;
  for (int i = 0; i < table.dim(); ++i) {
    Cd q = cmul(detail::load_c(s, i), detail::load_c(r, i));
    Cd c = detail::load_c(o, i);
    acc += q.re * c.re + q.im * c.im;
  }
  return acc;
}

// As above but with the object-independent part factored out, bitwise equal to
// the scalar call; used to score a subject against every category of a level.
template <typename S>
std::vector<Cd> affiliation_query_vector(const EmbeddingTableT<S>& table, EntityId subject,
                                         AffiliationRel rel) {
  const S* s = table.entity_row(subject);
  const S* r = table.row(EmbeddingTableT<S>::rel_table(rel), 0);
  std::vector<Cd> q(size_t(table.dim()));
  for (int i = 0; i < table.dim(); ++i) q[i] = cmul(detail::load_c(s, i), detail::load_c(r, i));
  return q;
}

}  // namespace stkg
