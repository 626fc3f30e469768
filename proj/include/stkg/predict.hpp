#pragma once
// Next-PoI prediction and evaluation: full-catalog scoring with top-k
// selection, rank-based metrics (MRR, Acc@k) with per-user averaging, the
// sequential query protocol, and a counting baseline.

#include <algorithm>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>

#include "stkg/embedding.hpp"
#include "stkg/ingest.hpp"

namespace stkg {

// ---------------------------------------------------------------------------
// Queries
// ---------------------------------------------------------------------------

struct Query {
  EntityId user;
  TimeBin bin;
  std::vector<EntityId> aux;       // empty or one entity, per the trained variant
  std::optional<EntityId> truth;   // required for evaluation
};

struct RankedPrediction {
  std::vector<std::pair<uint32_t, double>> candidates;  // (PoI index, score), best first
  std::optional<uint32_t> truth_rank;                   // 1-based
};

// Maps a predecessor PoI to the auxiliary entity a query needs under the
// trained variant, using the graph's affiliation facts for category lookup.
class AuxResolver {
public:
  AuxResolver() = default;

  static AuxResolver from(const Stkg& stkg) {
    AuxResolver r;
    r.variant_ = stkg.variant;
    r.sentinel_ = stkg.vocab.sentinel();
    for (int level = 0; level < 3; ++level) {
      r.poi_cat_[level].assign(stkg.vocab.count(EntityKind::Poi), std::nullopt);
      for (const auto& fact : stkg.affiliation[level])
        r.poi_cat_[level][fact.subject.index] = fact.object;
    }
    return r;
  }

  std::vector<EntityId> aux_for(std::optional<EntityId> prev_poi) const {
    if (variant_ == StmprVariant::V0) return {};
    if (!prev_poi) return {sentinel_};
    if (variant_ == StmprVariant::V1) return {*prev_poi};
    const auto& cat = poi_cat_[int(variant_) - 2][prev_poi->index];
    return {cat ? *cat : sentinel_};
  }

  StmprVariant variant() const { return variant_; }

private:
  StmprVariant variant_{StmprVariant::V0};
  EntityId sentinel_{EntityKind::Sentinel, 0};
  std::array<std::vector<std::optional<EntityId>>, 3> poi_cat_;
};

enum class SplitPart { Valid, Test };

// Builds evaluation queries for one split part. The predecessor of a query is
// the latest record strictly before its timestamp anywhere in the user's
// history — earlier records of the same part included, later parts excluded
// by chronology.
inline std::vector<Query> build_queries(const SplitDataset& split, const AuxResolver& resolver,
                                        SplitPart part) {
  std::vector<Query> queries;
  for (size_t u = 0; u < split.n_users(); ++u) {
    std::vector<MobilityRecord> history;
    history.insert(history.end(), split.train[u].begin(), split.train[u].end());
    history.insert(history.end(), split.valid[u].begin(), split.valid[u].end());
    size_t begin = history.size();
    if (part == SplitPart::Test) {
      history.insert(history.end(), split.test[u].begin(), split.test[u].end());
    } else {
      begin = split.train[u].size();
    }
    size_t end = part == SplitPart::Test ? history.size() : split.train[u].size() + split.valid[u].size();
    for (size_t j = begin; j < end; ++j) {
      Query q;
      q.user = history[j].user;
      q.bin = history[j].bin;
      q.truth = history[j].poi;
      q.aux = resolver.aux_for(most_recent_poi(history, j));
      queries.push_back(std::move(q));
    }
  }
  return queries;
}

// ---------------------------------------------------------------------------
// Prediction
// ---------------------------------------------------------------------------

// Turns a full score vector into a top-k list and the truth's rank. The rank
// counts only strictly better scores (rank 1 when everything ties); equal
// scores in the emitted ordering are broken by ascending PoI index.
inline RankedPrediction rank_candidates(std::span<const double> scores,
                                        std::optional<uint32_t> truth, size_t k) {
  const size_t n = scores.size();
  k = std::min(k, n);
  std::vector<uint32_t> order(n);
  std::iota(order.begin(), order.end(), 0u);
  std::partial_sort(order.begin(), order.begin() + std::ptrdiff_t(k), order.end(),
                    [&](uint32_t a, uint32_t b) {
                      if (scores[a] != scores[b]) return scores[a] > scores[b];
                      return a < b;
                    });

  RankedPrediction out;
  out.candidates.reserve(k);
  for (size_t j = 0; j < k; ++j) out.candidates.emplace_back(order[j], scores[order[j]]);
  if (truth) {
    double truth_score = scores[*truth];
    uint32_t better = 0;
    for (double s : scores)
      if (s > truth_score) ++better;
    out.truth_rank = better + 1;
  }
  return out;
}

// Scores every PoI for one query and ranks the catalog.
template <typename S>
RankedPrediction predict_topk(const EmbeddingTableT<S>& table, const EntityVocab& vocab,
                              const Query& query, size_t k) {
  const uint32_t n = vocab.count(EntityKind::Poi);
  if (k > n) {
    std::cerr << "warning: k=" << k << " clamped to the catalog size " << n << "\n";
    k = n;
  }
  std::vector<uint32_t> all(n);
  std::iota(all.begin(), all.end(), 0u);
  std::vector<double> scores = score_stmpr_batch(table, vocab, query.user, query.bin,
                                                 query.aux, all);
  std::optional<uint32_t> truth;
  if (query.truth) truth = query.truth->index;
  return rank_candidates(scores, truth, k);
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

struct MetricsReport {
  std::vector<size_t> ks;          // the k values reported, ascending
  double mrr{0.0};
  std::vector<double> acc;         // one entry per k
  size_t users_evaluated{0};
  size_t users_skipped{0};         // users with zero queries
  size_t queries{0};
  bool micro{false};
  std::map<uint32_t, double> per_user_mrr;  // by user index

  double acc_at(size_t k) const {
    for (size_t i = 0; i < ks.size(); ++i)
      if (ks[i] == k) return acc[i];
    throw ConfigError("k=" + std::to_string(k) + " was not evaluated");
  }
};

struct RankedQuery {
  uint32_t user_index;
  uint32_t rank;  // 1-based
};

// Aggregates ranks into MRR and Acc@k. Macro mode averages per user first;
// micro averages over all queries. Sanity invariants (metrics in [0,1], Acc@k
// non-decreasing in k, MRR >= Acc@1) are checked on every call.
inline MetricsReport aggregate_metrics(std::span<const RankedQuery> ranks, std::vector<size_t> ks,
                                       size_t total_users, bool micro = false) {
  std::sort(ks.begin(), ks.end());
  MetricsReport report;
  report.ks = ks;
  report.micro = micro;
  report.acc.assign(ks.size(), 0.0);
  report.queries = ranks.size();

  std::map<uint32_t, std::vector<uint32_t>> by_user;
  for (const auto& r : ranks) by_user[r.user_index].push_back(r.rank);
  report.users_evaluated = by_user.size();
  report.users_skipped = total_users > by_user.size() ? total_users - by_user.size() : 0;

  if (micro) {
    for (const auto& r : ranks) {
      report.mrr += 1.0 / r.rank;
      for (size_t i = 0; i < ks.size(); ++i)
        if (r.rank <= ks[i]) report.acc[i] += 1.0;
    }
    if (!ranks.empty()) {
      report.mrr /= double(ranks.size());
      for (double& a : report.acc) a /= double(ranks.size());
    }
  } else {
    for (const auto& [user, user_ranks] : by_user) {
      double mrr = 0.0;
      std::vector<double> acc(ks.size(), 0.0);
      for (uint32_t rank : user_ranks) {
        mrr += 1.0 / rank;
        for (size_t i = 0; i < ks.size(); ++i)
          if (rank <= ks[i]) acc[i] += 1.0;
      }
      mrr /= double(user_ranks.size());
      report.per_user_mrr[user] = mrr;
      report.mrr += mrr;
      for (size_t i = 0; i < ks.size(); ++i) report.acc[i] += acc[i] / double(user_ranks.size());
    }
    if (!by_user.empty()) {
      report.mrr /= double(by_user.size());
      for (double& a : report.acc) a /= double(by_user.size());
    }
  }

  auto in_unit = [](double x) { return x >= 0.0 && x <= 1.0 + 1e-12; };
  if (!in_unit(report.mrr)) throw RuntimeError("MRR outside [0,1]");
  for (size_t i = 0; i < report.acc.size(); ++i) {
    if (!in_unit(report.acc[i])) throw RuntimeError("Acc@k outside [0,1]");
    if (i > 0 && report.acc[i] + 1e-12 < report.acc[i - 1])
      throw RuntimeError("Acc@k decreased with larger k");
  }
  if (!ks.empty() && ks[0] == 1 && report.mrr + 1e-12 < report.acc[0])
    throw RuntimeError("MRR fell below Acc@1");
  return report;
}

// Ranks every query with the embedding scorer and aggregates. Queries must
// carry ground truth.
template <typename S>
MetricsReport evaluate(const EmbeddingTableT<S>& table, const EntityVocab& vocab,
                       std::span<const Query> queries, std::vector<size_t> ks = {1, 5, 10},
                       bool micro = false, int threads = 1) {
  for (const Query& q : queries)
    if (!q.truth) throw DataError("evaluation query without ground truth");
  std::vector<RankedQuery> ranks(queries.size());
#pragma omp parallel for schedule(static) num_threads(threads > 0 ? threads : 1) \
    if (threads > 1)
  for (std::ptrdiff_t i = 0; i < std::ptrdiff_t(queries.size()); ++i) {
    const Query& q = queries[size_t(i)];
    RankedPrediction pred = predict_topk(table, vocab, q, 1);
    ranks[size_t(i)] = RankedQuery{q.user.index, *pred.truth_rank};
  }
  return aggregate_metrics(ranks, std::move(ks), vocab.count(EntityKind::User), micro);
}

// ---------------------------------------------------------------------------
// Counting baseline
// ---------------------------------------------------------------------------

// Ranks candidates by layered visit counts: the user's count in the query's
// time bin, then the user's overall count, then global popularity. Fallback
// through the layers happens naturally when finer counts tie at zero.
class FrequencyBaseline {
public:
  FrequencyBaseline(const SplitDataset& split, const EntityVocab& vocab)
      : n_pois_(vocab.count(EntityKind::Poi)), bins_per_day_(vocab.bins_per_day()) {
    global_.assign(n_pois_, 0);
    user_.resize(split.n_users());
    user_bin_.resize(split.n_users());
    for (size_t u = 0; u < split.n_users(); ++u) {
      user_[u].assign(n_pois_, 0);
      for (const auto& r : split.train[u]) {
        ++global_[r.poi.index];
        ++user_[u][r.poi.index];
        ++user_bin_[u][{flatten_timebin(r.bin, bins_per_day_), r.poi.index}];
      }
    }
  }

  // Visit-count key for one candidate under a query; higher is better.
  std::array<uint64_t, 3> key(const Query& q, uint32_t poi) const {
    uint64_t bin_count = 0, user_count = 0;
    if (q.user.index < user_.size()) {
      const auto& ub = user_bin_[q.user.index];
      auto it = ub.find({flatten_timebin(q.bin, bins_per_day_), poi});
      if (it != ub.end()) bin_count = it->second;
      user_count = user_[q.user.index][poi];
    }
    return {bin_count, user_count, global_[poi]};
  }

  uint32_t rank_of_truth(const Query& q) const {
    auto truth_key = key(q, q.truth->index);
    uint32_t better = 0;
    for (uint32_t p = 0; p < n_pois_; ++p)
      if (key(q, p) > truth_key) ++better;
    return better + 1;
  }

  std::vector<uint32_t> topk(const Query& q, size_t k) const {
    std::vector<uint32_t> order(n_pois_);
    std::iota(order.begin(), order.end(), 0u);
    k = std::min(k, order.size());
    std::partial_sort(order.begin(), order.begin() + std::ptrdiff_t(k), order.end(),
                      [&](uint32_t a, uint32_t b) {
                        auto ka = key(q, a), kb = key(q, b);
                        if (ka != kb) return ka > kb;
                        return a < b;
                      });
    order.resize(k);
    return order;
  }

  MetricsReport evaluate(std::span<const Query> queries, std::vector<size_t> ks = {1, 5, 10},
                         size_t total_users = 0, bool micro = false) const {
    std::vector<RankedQuery> ranks;
    ranks.reserve(queries.size());
    for (const Query& q : queries) {
      if (!q.truth) throw DataError("evaluation query without ground truth");
      ranks.push_back(RankedQuery{q.user.index, rank_of_truth(q)});
    }
    return aggregate_metrics(ranks, std::move(ks),
                             total_users ? total_users : user_.size(), micro);
  }

  uint64_t user_visit_count(uint32_t user, uint32_t poi) const {
    return user < user_.size() ? user_[user][poi] : 0;
  }

private:
  uint32_t n_pois_;
  int bins_per_day_;
  std::vector<uint64_t> global_;
  std::vector<std::vector<uint64_t>> user_;
  std::vector<std::map<std::pair<int, uint32_t>, uint64_t>> user_bin_;
};

// Splits queries into buckets by how often the user visited the true PoI in
// training. Bucket b collects counts in [edges[b-1], edges[b]): a query whose
// truth was never visited lands in bucket 0 whenever all edges are positive.
template <typename S>
std::vector<MetricsReport> group_by_frequency(const EmbeddingTableT<S>& table,
                                              const EntityVocab& vocab,
                                              std::span<const Query> queries,
                                              const FrequencyBaseline& counts,
                                              const std::vector<uint64_t>& edges,
                                              std::vector<size_t> ks = {1, 5, 10}) {
  for (size_t i = 1; i < edges.size(); ++i)
    if (edges[i] <= edges[i - 1]) throw ConfigError("frequency bucket edges must ascend");

  std::vector<std::vector<RankedQuery>> buckets(edges.size() + 1);
  for (const Query& q : queries) {
    if (!q.truth) throw DataError("evaluation query without ground truth");
    uint64_t count = counts.user_visit_count(q.user.index, q.truth->index);
    size_t b = 0;
    while (b < edges.size() && count >= edges[b]) ++b;
    RankedPrediction pred = predict_topk(table, vocab, q, 1);
    buckets[b].push_back(RankedQuery{q.user.index, *pred.truth_rank});
  }

  std::vector<MetricsReport> out;
  out.reserve(buckets.size());
  for (const auto& bucket : buckets)
    out.push_back(aggregate_metrics(bucket, ks, vocab.count(EntityKind::User)));
  return out;
}

}  // namespace stkg
