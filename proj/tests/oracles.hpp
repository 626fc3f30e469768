#pragma once
// Independent reference implementations used only by tests. Everything here
// is written against std::complex with naive formulas and no shared helpers,
// so agreement with the production scoring path is meaningful evidence.

#include <complex>
#include <vector>

#include "stkg/embedding.hpp"

namespace stkg::oracle {

using C = std::complex<double>;

template <typename S>
std::vector<C> load_row(const EmbeddingTableT<S>& table,
                        typename EmbeddingTableT<S>::Table t, size_t row) {
  const S* p = table.row(t, row);
  std::vector<C> v(table.dim_of(t));
  for (size_t i = 0; i < v.size(); ++i) v[i] = C(double(p[2 * i]), double(p[2 * i + 1]));
  return v;
}

template <typename S>
std::vector<C> load_entity(const EmbeddingTableT<S>& table, EntityId id) {
  return load_row(table, EmbeddingTableT<S>::table_of(id.kind), id.index);
}

// Element-wise product over the auxiliary entities, identity when empty.
template <typename S>
std::vector<C> aux_product(const EmbeddingTableT<S>& table, std::span<const EntityId> aux) {
  std::vector<C> acc(size_t(table.dim()), C(1.0, 0.0));
  for (EntityId id : aux) {
    auto e = load_entity(table, id);
    for (size_t i = 0; i < acc.size(); ++i) acc[i] *= e[i];
  }
  return acc;
}

// relation vector = concat(rel' * conj(t), rel'') * auxproduct
template <typename S>
std::vector<C> relation_vector(const EmbeddingTableT<S>& table, const EntityVocab& vocab,
                               const TimeBin& bin, std::span<const EntityId> aux) {
  using Table = typename EmbeddingTableT<S>::Table;
  const size_t d = size_t(table.dim());
  const size_t d1 = size_t(table.temporal_dim());
  auto rel = load_row(table, Table::RelV, 0);
  auto a = aux_product(table, aux);
  std::vector<C> out(d);
  std::vector<C> t;
  if (d1 > 0) t = load_row(table, Table::TimeBins, vocab.time_bin_id(bin).index);
  for (size_t i = 0; i < d; ++i) {
    C base = (i < d1) ? rel[i] * std::conj(t[i]) : rel[i];
    out[i] = base * a[i];
  }
  return out;
}

template <typename S>
double score_stmpr_naive(const EmbeddingTableT<S>& table, const EntityVocab& vocab, EntityId user,
                         EntityId poi, const TimeBin& bin, std::span<const EntityId> aux) {
  auto u = load_entity(table, user);
  auto r = relation_vector(table, vocab, bin, aux);
  auto p = load_entity(table, poi);
  C sum(0.0, 0.0);
  for (size_t i = 0; i < u.size(); ++i) sum += u[i] * r[i] * std::conj(p[i]);
  return sum.real();
}

template <typename S>
double score_affiliation_naive(const EmbeddingTableT<S>& table, EntityId subject, EntityId object,
                               AffiliationRel rel) {
  auto s = load_entity(table, subject);
  auto r = load_row(table, EmbeddingTableT<S>::rel_table(rel), 0);
  auto o = load_entity(table, object);
  C sum(0.0, 0.0);
  for (size_t i = 0; i < s.size(); ++i) sum += s[i] * r[i] * std::conj(o[i]);
  return sum.real();
}

// Mixed absolute/relative agreement check.
inline bool close(double a, double b, double tol) {
  double scale = std::max({std::abs(a), std::abs(b), 1.0});
  return std::abs(a - b) <= tol * scale;
}

}  // namespace stkg::oracle
