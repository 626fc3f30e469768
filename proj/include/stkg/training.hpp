#pragma once
// Training: negative-sampling and full-softmax losses with analytic gradients,
// affiliation losses, N3/L2 and temporal-smoothness regularization, lazy
// sparse Adam (or SGD), and the epoch/mini-batch driver.

#include <chrono>
#include <map>
#include <random>

#include "stkg/embedding.hpp"
#include "stkg/predict.hpp"

namespace stkg {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

enum class NoiseDist { Uniform, Unigram };       // unigram uses count^power
enum class LossMode { NegSampling, FullSoftmax };
enum class OptimizerKind { Adam, Sgd };
enum class EmbRegForm { N3, L2 };
enum class TimeRegForm { SmoothDiff, L2 };
enum class BatchMix { Mixed, Homogeneous };

struct TrainConfig {
  int dim{100};
  double temporal_ratio{0.5};        // share of time-modulated dimensions
  double affiliation_weight{20.0};   // weight of the affiliation losses
  double learning_rate{0.05};
  int num_negatives{50};
  int epochs{50};
  int batch_size{512};
  double emb_reg{0.01};
  double time_reg{0.01};
  NoiseDist noise{NoiseDist::Uniform};
  double unigram_power{0.75};
  LossMode loss_mode{LossMode::NegSampling};
  uint64_t seed{1};
  StmprVariant variant{StmprVariant::V0};
  GraphParts parts{};
  OptimizerKind optimizer{OptimizerKind::Adam};
  EmbRegForm emb_reg_form{EmbRegForm::N3};
  TimeRegForm time_reg_form{TimeRegForm::SmoothDiff};
  BatchMix batch_mix{BatchMix::Mixed};
  int patience{0};                   // epochs without validation gain; 0 disables
  double init_scale{0.1};
  int precision_bits{64};
  int threads{1};                    // evaluation-side parallelism only

  void validate() const {
    if (dim < 1) throw ConfigError("dim must be >= 1");
    if (temporal_ratio < 0.0 || temporal_ratio > 1.0)
      throw ConfigError("temporal_ratio must lie in [0, 1]");
    if (affiliation_weight < 0.0) throw ConfigError("affiliation_weight must be >= 0");
    if (learning_rate <= 0.0) throw ConfigError("learning_rate must be > 0");
    if (num_negatives < 0) throw ConfigError("num_negatives must be >= 0");
    if (epochs < 0) throw ConfigError("epochs must be >= 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (emb_reg < 0.0 || time_reg < 0.0) throw ConfigError("regularization must be >= 0");
    if (unigram_power < 0.0) throw ConfigError("unigram_power must be >= 0");
    if (patience < 0) throw ConfigError("patience must be >= 0");
    if (init_scale < 0.0) throw ConfigError("init_scale must be >= 0");
    if (precision_bits != 32 && precision_bits != 64)
      throw ConfigError("precision_bits must be 32 or 64");
    if (threads < 1) throw ConfigError("threads must be >= 1");
  }
};

// ---------------------------------------------------------------------------
// Numerics and deterministic randomness
// ---------------------------------------------------------------------------

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

inline double log_sigmoid(double x) {
  // log(1/(1+e^-x)) computed without overflow on either tail
  if (x >= 0.0) return -std::log1p(std::exp(-x));
  return x - std::log1p(std::exp(x));
}

// Unbiased bounded draw from raw mt19937 output; the sequence is pinned by
// the standard, so results are identical across platforms.
inline uint32_t bounded_uniform(std::mt19937& rng, uint32_t n) {
  uint64_t threshold = (uint64_t(1) << 32) - ((uint64_t(1) << 32) % n);
  while (true) {
    uint64_t x = rng();
    if (x < threshold) return uint32_t(x % n);
  }
}

inline double uniform_double(std::mt19937& rng) { return (double(rng()) + 0.5) / 4294967296.0; }

// Fisher-Yates with the bounded draw above: std::shuffle's draw sequence is
// implementation-defined and would break cross-platform determinism.
template <typename T>
void deterministic_shuffle(std::vector<T>& v, std::mt19937& rng) {
  for (size_t i = v.size(); i > 1; --i) {
    size_t j = bounded_uniform(rng, uint32_t(i));
    std::swap(v[i - 1], v[j]);
  }
}

// ---------------------------------------------------------------------------
// Negative sampling
// ---------------------------------------------------------------------------

// Draws candidate PoIs from a noise distribution, excluding the positive by
// rejection with bounded retries, then by renormalized sampling.
class NegativeSampler {
public:
  NegativeSampler(NoiseDist dist, double power, std::span<const uint64_t> counts, uint32_t n_pois)
      : n_(n_pois) {
    if (n_ < 2)
      throw ConfigError("negative sampling needs at least 2 PoIs, got " + std::to_string(n_));
    if (dist == NoiseDist::Unigram) {
      cdf_.resize(n_);
      double acc = 0.0;
      for (uint32_t i = 0; i < n_; ++i) {
        double c = i < counts.size() ? double(counts[i]) : 0.0;
        acc += std::pow(c, power) + 1e-12;  // floor keeps unvisited PoIs reachable
        cdf_[i] = acc;
      }
    }
  }

  void sample(uint32_t positive, int n, std::mt19937& rng, std::vector<uint32_t>& out) const {
    out.clear();
    out.reserve(size_t(n));
    for (int j = 0; j < n; ++j) {
      uint32_t draw = 0;
      bool accepted = false;
      for (int attempt = 0; attempt < 32; ++attempt) {
        draw = draw_once(rng);
        if (draw != positive) {
          accepted = true;
          break;
        }
      }
      if (!accepted) draw = draw_excluding(positive, rng);
      out.push_back(draw);
    }
  }

private:
  uint32_t draw_once(std::mt19937& rng) const {
    if (cdf_.empty()) return bounded_uniform(rng, n_);
    double u = uniform_double(rng) * cdf_.back();
    return uint32_t(std::upper_bound(cdf_.begin(), cdf_.end(), u) - cdf_.begin());
  }

  uint32_t draw_excluding(uint32_t positive, std::mt19937& rng) const {
    if (cdf_.empty()) {
      uint32_t r = bounded_uniform(rng, n_ - 1);
      return r + (r >= positive ? 1 : 0);
    }
    double before = positive > 0 ? cdf_[positive - 1] : 0.0;
    double weight = cdf_[positive] - before;
    double u = uniform_double(rng) * (cdf_.back() - weight);
    if (u >= before) u += weight;
    uint32_t r = uint32_t(std::upper_bound(cdf_.begin(), cdf_.end(), u) - cdf_.begin());
    if (r == positive) r = r + 1 < n_ ? r + 1 : r - 1;  // float-boundary guard
    return std::min(r, n_ - 1);
  }

  uint32_t n_;
  std::vector<double> cdf_;
};

// ---------------------------------------------------------------------------
// Gradient accumulation and the optimizer
// ---------------------------------------------------------------------------

// Dense per-row gradients for the sparse set of rows a batch touches. Rows
// iterate in (table, row) order, which keeps updates deterministic.
class GradAccum {
public:
  using Key = std::pair<int, uint32_t>;

  std::vector<double>& row(ParamTable t, uint32_t r, size_t complex_dim) {
    auto& v = rows_[{int(t), r}];
    if (v.empty()) v.assign(2 * complex_dim, 0.0);
    return v;
  }

  bool contains(ParamTable t, uint32_t r) const { return rows_.count({int(t), r}) > 0; }
  size_t size() const { return rows_.size(); }
  void clear() { rows_.clear(); }

  auto begin() const { return rows_.begin(); }
  auto end() const { return rows_.end(); }
  auto begin() { return rows_.begin(); }
  auto end() { return rows_.end(); }

private:
  std::map<Key, std::vector<double>> rows_;
};

// Adam moments and per-row step counts, allocated to match one table's
// shapes. Rows untouched by a batch keep their state; bias correction uses
// the row's own step count.
struct OptimizerState {
  std::array<std::vector<double>, kNumParamTables> m, v;
  std::array<std::vector<uint64_t>, kNumParamTables> row_steps;
  std::array<size_t, kNumParamTables> stride{};
  double beta1{0.9}, beta2{0.999}, eps{1e-8};

  template <typename S>
  static OptimizerState for_table(const EmbeddingTableT<S>& table) {
    OptimizerState s;
    for (int t = 0; t < kNumParamTables; ++t) {
      ParamTable pt = ParamTable(t);
      s.stride[t] = 2 * table.dim_of(pt);
      s.m[t].assign(table.raw(pt).size(), 0.0);
      s.v[t].assign(table.raw(pt).size(), 0.0);
      s.row_steps[t].assign(table.rows(pt), 0);
    }
    return s;
  }
};

// Applies accumulated gradients. Only rows present in the accumulator are
// modified; everything else is bitwise untouched.
template <typename S>
void apply_update(const GradAccum& grads, EmbeddingTableT<S>& table, OptimizerState& state,
                  const TrainConfig& cfg) {
  for (const auto& [key, g] : grads) {
    ParamTable pt = ParamTable(key.first);
    uint32_t r = key.second;
    for (double x : g)
      if (!std::isfinite(x))
        throw RuntimeError("non-finite gradient on table " + std::to_string(key.first) +
                           " row " + std::to_string(r));
    S* x = table.row(pt, r);
    if (cfg.optimizer == OptimizerKind::Sgd) {
      for (size_t j = 0; j < g.size(); ++j) x[j] = S(double(x[j]) - cfg.learning_rate * g[j]);
      continue;
    }
    double* m = state.m[key.first].data() + size_t(r) * state.stride[key.first];
    double* v = state.v[key.first].data() + size_t(r) * state.stride[key.first];
    uint64_t t = ++state.row_steps[key.first][r];
    double bc1 = 1.0 - std::pow(state.beta1, double(t));
    double bc2 = 1.0 - std::pow(state.beta2, double(t));
    for (size_t j = 0; j < g.size(); ++j) {
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
      double update = cfg.learning_rate * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + state.eps);
      x[j] = S(double(x[j]) - update);
    }
  }
}

// ---------------------------------------------------------------------------
// Batches
// ---------------------------------------------------------------------------

struct BatchItem {
  enum class Kind : uint8_t { Stmpr, Affiliation };
  Kind kind{Kind::Stmpr};
  int level{-1};    // affiliation: 0..2 for PoI->category, 3 for category->category
  uint32_t index{0};
};

struct Batch {
  std::vector<BatchItem> items;
  std::vector<std::vector<uint32_t>> negatives;  // parallel to items; empty when unused
};

// Candidate index lists for softmax denominators.
struct TrainContext {
  std::vector<uint32_t> pois;
  std::array<std::vector<uint32_t>, 3> cats;

  static TrainContext from(const EntityVocab& vocab) {
    TrainContext ctx;
    ctx.pois.resize(vocab.count(EntityKind::Poi));
    std::iota(ctx.pois.begin(), ctx.pois.end(), 0u);
    for (int level = 1; level <= 3; ++level) {
      auto& c = ctx.cats[level - 1];
      c.resize(vocab.count(category_kind(level)));
      std::iota(c.begin(), c.end(), 0u);
    }
    return ctx;
  }

  const std::vector<uint32_t>& candidates_of(EntityKind kind) const {
    switch (kind) {
      case EntityKind::Poi: return pois;
      case EntityKind::Cat1: return cats[0];
      case EntityKind::Cat2: return cats[1];
      case EntityKind::Cat3: return cats[2];
      default: throw ConfigError("no candidate set for this entity kind");
    }
  }
};

struct LossBreakdown {
  double stmpr{0.0};
  std::array<double, 4> affiliation{};  // unweighted sums per level, [3] = cat-cat
  double reg_emb{0.0};
  double reg_time{0.0};
  double total{0.0};
  size_t stmpr_count{0};
  size_t affiliation_count{0};

  double affiliation_sum() const {
    return affiliation[0] + affiliation[1] + affiliation[2] + affiliation[3];
  }
};

inline const AffiliationFact& affiliation_fact(const Stkg& stkg, const BatchItem& item) {
  return item.level < 3 ? stkg.affiliation[item.level][item.index]
                        : stkg.cat_affiliation[item.index];
}

// ---------------------------------------------------------------------------
// Standalone losses (pure; used for reporting and testing)
// ---------------------------------------------------------------------------

template <typename S>
double loss_stmpr_ns(const EmbeddingTableT<S>& table, const EntityVocab& vocab,
                     const StmprFact& fact, std::span<const uint32_t> negatives) {
  std::vector<Cd> q = stmpr_query_vector(table, vocab, fact.user, fact.bin, fact.aux_span());
  double loss = -log_sigmoid(score_against(q, table.entity_row(fact.poi)));
  for (uint32_t neg : negatives)
    loss -= log_sigmoid(-score_against(q, table.row(ParamTable::Pois, neg)));
  return loss;
}

template <typename S>
double loss_stmpr_full(const EmbeddingTableT<S>& table, const EntityVocab& vocab,
                       const StmprFact& fact) {
  std::vector<Cd> q = stmpr_query_vector(table, vocab, fact.user, fact.bin, fact.aux_span());
  const size_t n = table.rows(ParamTable::Pois);
  double f_pos = 0.0, max_score = -std::numeric_limits<double>::infinity();
  std::vector<double> scores(n);
  for (size_t c = 0; c < n; ++c) {
    scores[c] = score_against(q, table.row(ParamTable::Pois, uint32_t(c)));
    max_score = std::max(max_score, scores[c]);
    if (uint32_t(c) == fact.poi.index) f_pos = scores[c];
  }
  double z = 0.0;
  for (double s : scores) z += std::exp(s - max_score);
  return -f_pos + max_score + std::log(z);
}

template <typename S>
double loss_affiliation(const EmbeddingTableT<S>& table, const AffiliationFact& fact,
                        std::span<const uint32_t> candidates) {
  std::vector<Cd> q = affiliation_query_vector(table, fact.subject, fact.relation);
  ParamTable object_table = param_table_of(fact.object.kind);
  double f_pos = 0.0, max_score = -std::numeric_limits<double>::infinity();
  std::vector<double> scores(candidates.size());
  for (size_t c = 0; c < candidates.size(); ++c) {
    scores[c] = score_against(q, table.row(object_table, candidates[c]));
    max_score = std::max(max_score, scores[c]);
    if (candidates[c] == fact.object.index) f_pos = scores[c];
  }
  double z = 0.0;
  for (double s : scores) z += std::exp(s - max_score);
  return -f_pos + max_score + std::log(z);
}

// ---------------------------------------------------------------------------
// Gradient accumulation over one batch
// ---------------------------------------------------------------------------

namespace detail {

inline void add_c(std::vector<double>& row, size_t i, Cd g) {
  row[2 * i] += g.re;
  row[2 * i + 1] += g.im;
}

inline std::string describe_fact(const Stkg& stkg, const BatchItem& item) {
  if (item.kind == BatchItem::Kind::Stmpr) {
    const StmprFact& f = stkg.stmpr_facts[item.index];
    return "mobility fact (" + stkg.vocab.external_of(f.user) + ", " +
           stkg.vocab.external_of(f.poi) + ")";
  }
  const AffiliationFact& f = affiliation_fact(stkg, item);
  return "affiliation fact (" + stkg.vocab.external_of(f.subject) + ", " +
         stkg.vocab.external_of(f.object) + ")";
}

}  // namespace detail

// Computes the batch objective (losses + regularization of touched rows) and
// accumulates its gradient. Pure with respect to the table.
//
// Row "touch" rules: every entity and relation participating in a batch item
// is touched even when its gradient is zero (an affiliation fact under a zero
// affiliation weight still gets its rows regularized). When time_reg > 0 the
// temporal-smoothness term couples all time-bin rows, so those all update on
// every step; with time_reg = 0 untouched time bins stay bitwise unchanged
// like any other row.
template <typename S>
LossBreakdown accumulate_batch(const Stkg& stkg, const TrainContext& ctx, const Batch& batch,
                               const EmbeddingTableT<S>& table, const TrainConfig& cfg,
                               GradAccum& grads) {
  const EntityVocab& vocab = stkg.vocab;
  const int d = table.dim();
  const int d1 = table.temporal_dim();
  const size_t dd = size_t(d);
  LossBreakdown out;

  std::vector<Cd> q(dd), cand_sum(dd), hbar(dd);

  for (size_t bi = 0; bi < batch.items.size(); ++bi) {
    const BatchItem& item = batch.items[bi];

    if (item.kind == BatchItem::Kind::Stmpr) {
      const StmprFact& fact = stkg.stmpr_facts[item.index];
      auto aux_ids = fact.aux_span();

      // Factor rows.
      const S* u = table.entity_row(fact.user);
      const S* rel = table.row(ParamTable::RelV, 0);
      uint32_t bin_row = vocab.time_bin_id(fact.bin).index;
      const S* t = d1 > 0 ? table.row(ParamTable::TimeBins, bin_row) : nullptr;
      std::vector<Cd> a = aux_embedding(table, aux_ids);

      // q_i = u_i * r_i(t, A), assembled with the scoring path's op order.
      for (int i = 0; i < d; ++i) {
        Cd base = detail::load_c(rel, size_t(i));
        Cd r = i < d1 ? cmul(cmul(base, cconj(detail::load_c(t, size_t(i)))), a[size_t(i)])
                      : cmul(base, a[size_t(i)]);
        q[size_t(i)] = cmul(detail::load_c(u, size_t(i)), r);
      }

      std::fill(cand_sum.begin(), cand_sum.end(), Cd{});
      double loss = 0.0;

      auto add_candidate = [&](uint32_t poi, double w) {
        const S* p = table.row(ParamTable::Pois, poi);
        auto& gp = grads.row(ParamTable::Pois, poi, dd);
        for (size_t i = 0; i < dd; ++i) {
          detail::add_c(gp, i, Cd{w * q[i].re, w * q[i].im});
          Cd pc = detail::load_c(p, i);
          cand_sum[i] = cadd(cand_sum[i], Cd{w * pc.re, w * pc.im});
        }
      };

      if (cfg.loss_mode == LossMode::NegSampling) {
        const auto& negs = batch.negatives[bi];
        double f_pos = score_against(q, table.entity_row(fact.poi));
        if (!std::isfinite(f_pos))
          throw RuntimeError("non-finite score for " + detail::describe_fact(stkg, item));
        loss = -log_sigmoid(f_pos);
        add_candidate(fact.poi.index, sigmoid(f_pos) - 1.0);
        for (uint32_t neg : negs) {
          double f = score_against(q, table.row(ParamTable::Pois, neg));
          loss -= log_sigmoid(-f);
          add_candidate(neg, sigmoid(f));
        }
      } else {
        const auto& cands = ctx.pois;
        std::vector<double> scores(cands.size());
        double max_score = -std::numeric_limits<double>::infinity();
        for (size_t c = 0; c < cands.size(); ++c) {
          scores[c] = score_against(q, table.row(ParamTable::Pois, cands[c]));
          max_score = std::max(max_score, scores[c]);
        }
        if (!std::isfinite(max_score))
          throw RuntimeError("non-finite score for " + detail::describe_fact(stkg, item));
        double z = 0.0;
        for (double s : scores) z += std::exp(s - max_score);
        loss = -scores[fact.poi.index] + max_score + std::log(z);
        for (size_t c = 0; c < cands.size(); ++c) {
          double w = std::exp(scores[c] - max_score) / z - (cands[c] == fact.poi.index ? 1.0 : 0.0);
          add_candidate(cands[c], w);
        }
      }

      out.stmpr += loss;
      ++out.stmpr_count;

      // Fold the weighted candidate sum into the factor gradients. With
      // sum = Σ_c w_c p_c:  g_u = conj(R) ⊙ sum, and with
      // hbar = conj(u) ⊙ sum the relation/time/aux gradients follow by
      // multiplying hbar (or its conjugate) with the remaining factors.
      auto& gu = grads.row(ParamTable::Users, fact.user.index, dd);
      for (size_t i = 0; i < dd; ++i) {
        Cd ui = detail::load_c(u, i);
        hbar[i] = cmul(cconj(ui), cand_sum[i]);
        Cd base = detail::load_c(rel, i);
        Cd r = int(i) < d1 ? cmul(cmul(base, cconj(detail::load_c(t, i))), a[i])
                           : cmul(base, a[i]);
        detail::add_c(gu, i, cmul(cconj(r), cand_sum[i]));
      }

      auto& grel = grads.row(ParamTable::RelV, 0, dd);
      std::vector<Cd> g_aux(dd);
      if (d1 > 0) {
        auto& gt = grads.row(ParamTable::TimeBins, bin_row, size_t(d1));
        for (int i = 0; i < d1; ++i) {
          Cd ti = detail::load_c(t, size_t(i));
          Cd ri = detail::load_c(rel, size_t(i));
          Cd ai = a[size_t(i)];
          detail::add_c(grel, size_t(i), cmul(cmul(hbar[size_t(i)], ti), cconj(ai)));
          g_aux[size_t(i)] = cmul(cmul(hbar[size_t(i)], cconj(ri)), ti);
          detail::add_c(gt, size_t(i), cmul(cmul(cconj(hbar[size_t(i)]), ri), ai));
        }
      }
      for (int i = d1; i < d; ++i) {
        Cd ri = detail::load_c(rel, size_t(i));
        Cd ai = a[size_t(i)];
        detail::add_c(grel, size_t(i), cmul(hbar[size_t(i)], cconj(ai)));
        g_aux[size_t(i)] = cmul(hbar[size_t(i)], cconj(ri));
      }

      // Distribute the aux-product gradient to members: each member receives
      // the gradient times the conjugated product of the other members.
      const size_t n_aux = aux_ids.size();
      if (n_aux == 1) {
        EntityId id = aux_ids[0];
        auto& ga = grads.row(param_table_of(id.kind), id.index, dd);
        for (size_t i = 0; i < dd; ++i) detail::add_c(ga, i, g_aux[i]);
      } else if (n_aux > 1) {
        for (size_t k = 0; k < n_aux; ++k) {
          std::vector<Cd> others(dd, Cd{1.0, 0.0});
          for (size_t j = 0; j < n_aux; ++j) {
            if (j == k) continue;
            const S* e = table.entity_row(aux_ids[j]);
            for (size_t i = 0; i < dd; ++i) others[i] = cmul(others[i], detail::load_c(e, i));
          }
          auto& ga = grads.row(param_table_of(aux_ids[k].kind), aux_ids[k].index, dd);
          for (size_t i = 0; i < dd; ++i) detail::add_c(ga, i, cmul(g_aux[i], cconj(others[i])));
        }
      }
    } else {
      // Affiliation fact: full softmax over the object kind's entities.
      const AffiliationFact& fact = affiliation_fact(stkg, item);
      const auto& cands = ctx.candidates_of(fact.object.kind);
      ParamTable object_table = param_table_of(fact.object.kind);
      ParamTable rel_table = rel_param_table(fact.relation);
      const S* s = table.entity_row(fact.subject);
      const S* r = table.row(rel_table, 0);

      for (size_t i = 0; i < dd; ++i)
        q[i] = cmul(detail::load_c(s, i), detail::load_c(r, i));

      std::vector<double> scores(cands.size());
      double max_score = -std::numeric_limits<double>::infinity();
      for (size_t c = 0; c < cands.size(); ++c) {
        scores[c] = score_against(q, table.row(object_table, cands[c]));
        max_score = std::max(max_score, scores[c]);
      }
      if (!std::isfinite(max_score))
        throw RuntimeError("non-finite score for " + detail::describe_fact(stkg, item));
      double z = 0.0;
      for (double sc : scores) z += std::exp(sc - max_score);
      double loss = -scores[fact.object.index] + max_score + std::log(z);
      out.affiliation[size_t(item.level)] += loss;
      ++out.affiliation_count;

      const double beta = cfg.affiliation_weight;
      // Touch the fact's own rows so they are regularized even when beta = 0.
      grads.row(param_table_of(fact.subject.kind), fact.subject.index, dd);
      grads.row(rel_table, 0, dd);
      grads.row(object_table, fact.object.index, dd);
      if (beta > 0.0) {
        std::fill(cand_sum.begin(), cand_sum.end(), Cd{});
        for (size_t c = 0; c < cands.size(); ++c) {
          double w = beta * (std::exp(scores[c] - max_score) / z -
                             (cands[c] == fact.object.index ? 1.0 : 0.0));
          const S* e = table.row(object_table, cands[c]);
          auto& ge = grads.row(object_table, cands[c], dd);
          for (size_t i = 0; i < dd; ++i) {
            detail::add_c(ge, i, Cd{w * q[i].re, w * q[i].im});
            Cd ec = detail::load_c(e, i);
            cand_sum[i] = cadd(cand_sum[i], Cd{w * ec.re, w * ec.im});
          }
        }
        auto& gs = grads.row(param_table_of(fact.subject.kind), fact.subject.index, dd);
        auto& gr = grads.row(rel_table, 0, dd);
        for (size_t i = 0; i < dd; ++i) {
          Cd si = detail::load_c(s, i);
          Cd ri = detail::load_c(r, i);
          detail::add_c(gs, i, cmul(cconj(ri), cand_sum[i]));
          detail::add_c(gr, i, cmul(cconj(si), cand_sum[i]));
        }
      }
    }
  }

  // Embedding regularization over every touched row.
  if (cfg.emb_reg > 0.0) {
    const double lambda = cfg.emb_reg;
    for (auto& [key, g] : grads) {
      const S* x = table.row(ParamTable(key.first), key.second);
      const size_t cd = g.size() / 2;
      for (size_t i = 0; i < cd; ++i) {
        double re = double(x[2 * i]), im = double(x[2 * i + 1]);
        if (cfg.emb_reg_form == EmbRegForm::N3) {
          double mag = std::sqrt(re * re + im * im);
          out.reg_emb += lambda * mag * mag * mag;
          g[2 * i] += lambda * 3.0 * mag * re;
          g[2 * i + 1] += lambda * 3.0 * mag * im;
        } else {
          out.reg_emb += lambda * (re * re + im * im);
          g[2 * i] += lambda * 2.0 * re;
          g[2 * i + 1] += lambda * 2.0 * im;
        }
      }
    }
  }

  // Temporal smoothness between consecutive bins within each day type.
  if (cfg.time_reg > 0.0 && d1 > 0) {
    const double lambda = cfg.time_reg;
    const int bins_per_day = vocab.bins_per_day();
    const size_t cd1 = size_t(d1);
    if (cfg.time_reg_form == TimeRegForm::SmoothDiff) {
      for (int day = 0; day < 2; ++day) {
        for (int slot = 0; slot + 1 < bins_per_day; ++slot) {
          uint32_t row_a = uint32_t(day * bins_per_day + slot);
          uint32_t row_b = row_a + 1;
          const S* ta = table.row(ParamTable::TimeBins, row_a);
          const S* tb = table.row(ParamTable::TimeBins, row_b);
          auto& ga = grads.row(ParamTable::TimeBins, row_a, cd1);
          auto& gb = grads.row(ParamTable::TimeBins, row_b, cd1);
          for (size_t i = 0; i < cd1; ++i) {
            double dre = double(tb[2 * i]) - double(ta[2 * i]);
            double dim = double(tb[2 * i + 1]) - double(ta[2 * i + 1]);
            out.reg_time += lambda * (dre * dre + dim * dim);
            gb[2 * i] += lambda * 2.0 * dre;
            gb[2 * i + 1] += lambda * 2.0 * dim;
            ga[2 * i] -= lambda * 2.0 * dre;
            ga[2 * i + 1] -= lambda * 2.0 * dim;
          }
        }
      }
    } else {
      for (uint32_t row = 0; row < uint32_t(2 * bins_per_day); ++row) {
        const S* t = table.row(ParamTable::TimeBins, row);
        auto& g = grads.row(ParamTable::TimeBins, row, cd1);
        for (size_t i = 0; i < 2 * cd1; ++i) {
          out.reg_time += lambda * double(t[i]) * double(t[i]);
          g[i] += lambda * 2.0 * double(t[i]);
        }
      }
    }
  }

  out.total = out.stmpr + cfg.affiliation_weight * out.affiliation_sum() + out.reg_emb +
              out.reg_time;
  return out;
}

// The batch objective's value without touching any state.
template <typename S>
LossBreakdown total_loss(const Stkg& stkg, const TrainContext& ctx, const Batch& batch,
                         const EmbeddingTableT<S>& table, const TrainConfig& cfg) {
  GradAccum scratch;
  return accumulate_batch(stkg, ctx, batch, table, cfg, scratch);
}

// One optimization step: accumulate the batch gradient, then apply it.
template <typename S>
LossBreakdown grad_step(const Stkg& stkg, const TrainContext& ctx, const Batch& batch,
                        EmbeddingTableT<S>& table, OptimizerState& state,
                        const TrainConfig& cfg) {
  GradAccum grads;
  LossBreakdown breakdown = accumulate_batch(stkg, ctx, batch, table, cfg, grads);
  apply_update(grads, table, state, cfg);
  return breakdown;
}

// ---------------------------------------------------------------------------
// The training driver
// ---------------------------------------------------------------------------

struct EpochStats {
  double total{0.0};
  double stmpr{0.0};
  std::array<double, 4> affiliation{};
  double reg_emb{0.0};
  double reg_time{0.0};
  double valid_mrr{-1.0};  // negative when there are no validation queries
  double seconds{0.0};
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  int best_epoch{-1};           // epoch whose table was kept; -1 = final
  double best_valid_mrr{-1.0};
  size_t facts_per_epoch{0};
};

template <typename S>
struct TrainResult {
  EmbeddingTableT<S> table;
  TrainReport report;
};

template <typename S>
TrainResult<S> train(const Stkg& stkg, const SplitDataset& split, const TrainConfig& cfg) {
  cfg.validate();
  const EntityVocab& vocab = stkg.vocab;

  // Assemble the fact pool from the selected graph parts.
  std::vector<BatchItem> pool;
  if (cfg.parts.mobility)
    for (uint32_t i = 0; i < stkg.stmpr_facts.size(); ++i)
      pool.push_back(BatchItem{BatchItem::Kind::Stmpr, -1, i});
  for (int level = 0; level < 3; ++level)
    if (cfg.parts.affiliation[size_t(level)])
      for (uint32_t i = 0; i < stkg.affiliation[size_t(level)].size(); ++i)
        pool.push_back(BatchItem{BatchItem::Kind::Affiliation, level, i});
  if (cfg.parts.cat_affiliation)
    for (uint32_t i = 0; i < stkg.cat_affiliation.size(); ++i)
      pool.push_back(BatchItem{BatchItem::Kind::Affiliation, 3, i});
  if (pool.empty()) throw DataError("no training facts in the selected graph parts");

  const int d1 = temporal_dim(cfg.dim, cfg.temporal_ratio);
  TrainResult<S> result;
  result.table = init_table<S>(vocab, cfg.dim, d1, cfg.seed, cfg.init_scale);
  OptimizerState state = OptimizerState::for_table(result.table);
  TrainContext ctx = TrainContext::from(vocab);
  result.report.facts_per_epoch = pool.size();

  std::optional<NegativeSampler> sampler;
  bool need_negatives = cfg.loss_mode == LossMode::NegSampling && cfg.parts.mobility &&
                        !stkg.stmpr_facts.empty() && cfg.num_negatives > 0;
  if (need_negatives) {
    std::vector<uint64_t> counts(vocab.count(EntityKind::Poi), 0);
    for (const auto& fact : stkg.stmpr_facts) ++counts[fact.poi.index];
    sampler.emplace(cfg.noise, cfg.unigram_power, counts, vocab.count(EntityKind::Poi));
  }

  AuxResolver resolver = AuxResolver::from(stkg);
  std::vector<Query> valid_queries = build_queries(split, resolver, SplitPart::Valid);

  std::mt19937 rng(uint32_t(cfg.seed ^ (cfg.seed >> 32) ^ 0x2545f491u));

  EmbeddingTableT<S> best_table;
  double best_mrr = -1.0;
  int best_epoch = -1;
  int stale = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto t0 = std::chrono::steady_clock::now();

    if (cfg.batch_mix == BatchMix::Mixed) {
      deterministic_shuffle(pool, rng);
    } else {
      // Homogeneous batches: shuffle within type, then concatenate groups.
      std::stable_sort(pool.begin(), pool.end(), [](const BatchItem& a, const BatchItem& b) {
        if (a.kind != b.kind) return a.kind < b.kind;
        return a.level < b.level;
      });
      size_t start = 0;
      while (start < pool.size()) {
        size_t stop = start;
        while (stop < pool.size() && pool[stop].kind == pool[start].kind &&
               pool[stop].level == pool[start].level)
          ++stop;
        std::vector<BatchItem> group(pool.begin() + std::ptrdiff_t(start),
                                     pool.begin() + std::ptrdiff_t(stop));
        deterministic_shuffle(group, rng);
        std::copy(group.begin(), group.end(), pool.begin() + std::ptrdiff_t(start));
        start = stop;
      }
    }

    EpochStats stats;
    for (size_t start = 0; start < pool.size(); start += size_t(cfg.batch_size)) {
      size_t stop = std::min(pool.size(), start + size_t(cfg.batch_size));
      Batch batch;
      batch.items.assign(pool.begin() + std::ptrdiff_t(start),
                         pool.begin() + std::ptrdiff_t(stop));
      batch.negatives.resize(batch.items.size());
      if (sampler) {
        for (size_t i = 0; i < batch.items.size(); ++i) {
          const BatchItem& item = batch.items[i];
          if (item.kind != BatchItem::Kind::Stmpr) continue;
          sampler->sample(stkg.stmpr_facts[item.index].poi.index, cfg.num_negatives, rng,
                          batch.negatives[i]);
        }
      }
      LossBreakdown b = grad_step(stkg, ctx, batch, result.table, state, cfg);
      stats.total += b.total;
      stats.stmpr += b.stmpr;
      for (int level = 0; level < 4; ++level)
        stats.affiliation[size_t(level)] += b.affiliation[size_t(level)];
      stats.reg_emb += b.reg_emb;
      stats.reg_time += b.reg_time;
    }

    if (!valid_queries.empty()) {
      stats.valid_mrr =
          evaluate(result.table, vocab, valid_queries, {1}, false, cfg.threads).mrr;
      if (stats.valid_mrr > best_mrr) {
        best_mrr = stats.valid_mrr;
        best_epoch = epoch;
        best_table = result.table;
        stale = 0;
      } else {
        ++stale;
      }
    }

    stats.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.report.epochs.push_back(stats);

    if (cfg.patience > 0 && stale >= cfg.patience) break;
  }

  if (best_epoch >= 0) {
    result.table = std::move(best_table);
    result.report.best_epoch = best_epoch;
    result.report.best_valid_mrr = best_mrr;
  }
  return result;
}

}  // namespace stkg
