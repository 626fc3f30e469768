#pragma once
// Flat key=value run configuration: file parsing plus the bidirectional
// mapping between config keys and the training/ingestion structs. Every
// field has a key, unknown keys are errors, and a snapshot of the effective
// configuration can be rebuilt for the run manifest.

#include <charconv>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "stkg/ingest.hpp"
#include "stkg/training.hpp"

namespace stkg {

// ---------------------------------------------------------------------------
// Enum spellings
// ---------------------------------------------------------------------------

inline const char* to_string(NoiseDist d) {
  return d == NoiseDist::Uniform ? "uniform" : "unigram";
}

inline NoiseDist noise_dist_from(const std::string& s) {
  if (s == "uniform") return NoiseDist::Uniform;
  if (s == "unigram") return NoiseDist::Unigram;
  throw ConfigError("unknown noise distribution '" + s + "' (uniform|unigram)");
}

inline const char* to_string(LossMode m) {
  return m == LossMode::NegSampling ? "neg-sampling" : "full-softmax";
}

inline LossMode loss_mode_from(const std::string& s) {
  if (s == "neg-sampling") return LossMode::NegSampling;
  if (s == "full-softmax") return LossMode::FullSoftmax;
  throw ConfigError("unknown loss mode '" + s + "' (neg-sampling|full-softmax)");
}

inline const char* to_string(OptimizerKind o) {
  return o == OptimizerKind::Adam ? "adam" : "sgd";
}

inline OptimizerKind optimizer_from(const std::string& s) {
  if (s == "adam") return OptimizerKind::Adam;
  if (s == "sgd") return OptimizerKind::Sgd;
  throw ConfigError("unknown optimizer '" + s + "' (adam|sgd)");
}

inline const char* to_string(EmbRegForm f) { return f == EmbRegForm::N3 ? "n3" : "l2"; }

inline EmbRegForm emb_reg_form_from(const std::string& s) {
  if (s == "n3") return EmbRegForm::N3;
  if (s == "l2") return EmbRegForm::L2;
  throw ConfigError("unknown embedding regularizer '" + s + "' (n3|l2)");
}

inline const char* to_string(TimeRegForm f) {
  return f == TimeRegForm::SmoothDiff ? "smooth-diff" : "l2";
}

inline TimeRegForm time_reg_form_from(const std::string& s) {
  if (s == "smooth-diff") return TimeRegForm::SmoothDiff;
  if (s == "l2") return TimeRegForm::L2;
  throw ConfigError("unknown time regularizer '" + s + "' (smooth-diff|l2)");
}

inline const char* to_string(BatchMix m) {
  return m == BatchMix::Mixed ? "mixed" : "homogeneous";
}

inline BatchMix batch_mix_from(const std::string& s) {
  if (s == "mixed") return BatchMix::Mixed;
  if (s == "homogeneous") return BatchMix::Homogeneous;
  throw ConfigError("unknown batch mix '" + s + "' (mixed|homogeneous)");
}

// Graph-part selections are written as a comma list over
// {mobility, c1, c2, c3, cat-cat}; the shorthand labels G_0..G_3 name
// mobility alone or mobility plus a single category level, G_all selects
// mobility plus all three levels, and "all" additionally turns on the
// category-to-category facts.
inline std::string to_string(const GraphParts& parts) {
  std::string out;
  auto append = [&](const char* tok) {
    if (!out.empty()) out += ',';
    out += tok;
  };
  if (parts.mobility) append("mobility");
  for (int i = 0; i < 3; ++i)
    if (parts.affiliation[size_t(i)]) append(("c" + std::to_string(i + 1)).c_str());
  if (parts.cat_affiliation) append("cat-cat");
  if (out.empty()) out = "none";
  return out;
}

inline GraphParts graph_parts_from(const std::string& s) {
  GraphParts parts;
  parts.mobility = false;
  parts.affiliation = {false, false, false};
  parts.cat_affiliation = false;

  if (s == "G_0") {
    parts.mobility = true;
    return parts;
  }
  if (s == "G_1" || s == "G_2" || s == "G_3") {
    parts.mobility = true;
    parts.affiliation[size_t(s[2] - '1')] = true;
    return parts;
  }
  if (s == "G_all") {
    parts.mobility = true;
    parts.affiliation = {true, true, true};
    return parts;
  }
  if (s == "all") {
    parts.mobility = true;
    parts.affiliation = {true, true, true};
    parts.cat_affiliation = true;
    return parts;
  }

  std::stringstream ss(s);
  std::string tok;
  bool any = false;
  while (std::getline(ss, tok, ',')) {
    std::string t(detail::trim(tok));
    if (t.empty()) continue;
    any = true;
    if (t == "mobility") parts.mobility = true;
    else if (t == "c1") parts.affiliation[0] = true;
    else if (t == "c2") parts.affiliation[1] = true;
    else if (t == "c3") parts.affiliation[2] = true;
    else if (t == "cat-cat") parts.cat_affiliation = true;
    else if (t == "none") any = true;  // explicit empty selection
    else
      throw ConfigError("unknown graph part '" + t +
                        "' (mobility|c1|c2|c3|cat-cat|none or G_0..G_3|G_all|all)");
  }
  if (!any) throw ConfigError("empty graph part selection '" + s + "'");
  return parts;
}

// ---------------------------------------------------------------------------
// key = value files
// ---------------------------------------------------------------------------

using KvMap = std::map<std::string, std::string>;

// One `key = value` pair per line; blank lines and `#` comments are skipped.
// Values keep interior spaces, so `holidays = 2024-01-01, 2024-05-01` works.
inline KvMap parse_kv_text(const std::string& text, const std::string& where = "<config>") {
  KvMap kv;
  std::stringstream ss(text);
  std::string line;
  size_t lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::string_view sv = detail::trim(line);
    if (sv.empty()) continue;
    auto eq = sv.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError(where + ":" + std::to_string(lineno) +
                        ": expected 'key = value', got '" + std::string(sv) + "'");
    std::string key(detail::trim(sv.substr(0, eq)));
    std::string value(detail::trim(sv.substr(eq + 1)));
    if (key.empty())
      throw ConfigError(where + ":" + std::to_string(lineno) + ": empty key");
    if (!kv.emplace(key, value).second)
      throw ConfigError(where + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
  }
  return kv;
}

inline KvMap load_kv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file '" + path + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_kv_text(buffer.str(), path);
}

namespace detail {

inline long long parse_ll(const std::string& key, const std::string& value) {
  long long out = 0;
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size())
    throw ConfigError("key '" + key + "' needs an integer, got '" + value + "'");
  return out;
}

inline int parse_int(const std::string& key, const std::string& value) {
  long long v = parse_ll(key, value);
  if (v < INT32_MIN || v > INT32_MAX)
    throw ConfigError("key '" + key + "' value out of range: " + value);
  return int(v);
}

inline uint64_t parse_u64(const std::string& key, const std::string& value) {
  uint64_t out = 0;
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size())
    throw ConfigError("key '" + key + "' needs a non-negative integer, got '" + value + "'");
  return out;
}

inline double parse_double(const std::string& key, const std::string& value) {
  double out = 0.0;
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size())
    throw ConfigError("key '" + key + "' needs a number, got '" + value + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
  if (value == "false" || value == "0" || value == "no" || value == "off") return false;
  throw ConfigError("key '" + key + "' needs a boolean, got '" + value + "'");
}

inline std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Training keys
// ---------------------------------------------------------------------------

// The affiliation weight accepts three named presets besides plain numbers.
inline double affiliation_weight_from(const std::string& value) {
  if (value == "high") return 20.0;
  if (value == "mid") return 10.0;
  if (value == "low") return 5.0;
  return detail::parse_double("affiliation_weight", value);
}

inline void apply_train_key(TrainConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "dim") cfg.dim = detail::parse_int(key, value);
  else if (key == "temporal_ratio") cfg.temporal_ratio = detail::parse_double(key, value);
  else if (key == "affiliation_weight") cfg.affiliation_weight = affiliation_weight_from(value);
  else if (key == "learning_rate") cfg.learning_rate = detail::parse_double(key, value);
  else if (key == "num_negatives") cfg.num_negatives = detail::parse_int(key, value);
  else if (key == "epochs") cfg.epochs = detail::parse_int(key, value);
  else if (key == "batch_size") cfg.batch_size = detail::parse_int(key, value);
  else if (key == "emb_reg") cfg.emb_reg = detail::parse_double(key, value);
  else if (key == "time_reg") cfg.time_reg = detail::parse_double(key, value);
  else if (key == "noise") cfg.noise = noise_dist_from(value);
  else if (key == "unigram_power") cfg.unigram_power = detail::parse_double(key, value);
  else if (key == "loss_mode") cfg.loss_mode = loss_mode_from(value);
  else if (key == "seed") cfg.seed = detail::parse_u64(key, value);
  else if (key == "variant") cfg.variant = stmpr_variant_from_string(value);
  else if (key == "parts") cfg.parts = graph_parts_from(value);
  else if (key == "optimizer") cfg.optimizer = optimizer_from(value);
  else if (key == "emb_reg_form") cfg.emb_reg_form = emb_reg_form_from(value);
  else if (key == "time_reg_form") cfg.time_reg_form = time_reg_form_from(value);
  else if (key == "batch_mix") cfg.batch_mix = batch_mix_from(value);
  else if (key == "patience") cfg.patience = detail::parse_int(key, value);
  else if (key == "init_scale") cfg.init_scale = detail::parse_double(key, value);
  else if (key == "precision_bits") cfg.precision_bits = detail::parse_int(key, value);
  else if (key == "threads") cfg.threads = detail::parse_int(key, value);
  else
    throw ConfigError("unknown training config key '" + key + "'");
}

inline void apply_train_config(TrainConfig& cfg, const KvMap& kv) {
  for (const auto& [key, value] : kv) apply_train_key(cfg, key, value);
}

// Every field, so a manifest snapshot alone can reproduce the run.
inline KvMap train_config_snapshot(const TrainConfig& cfg) {
  KvMap kv;
  kv["dim"] = std::to_string(cfg.dim);
  kv["temporal_ratio"] = detail::format_double(cfg.temporal_ratio);
  kv["affiliation_weight"] = detail::format_double(cfg.affiliation_weight);
  kv["learning_rate"] = detail::format_double(cfg.learning_rate);
  kv["num_negatives"] = std::to_string(cfg.num_negatives);
  kv["epochs"] = std::to_string(cfg.epochs);
  kv["batch_size"] = std::to_string(cfg.batch_size);
  kv["emb_reg"] = detail::format_double(cfg.emb_reg);
  kv["time_reg"] = detail::format_double(cfg.time_reg);
  kv["noise"] = to_string(cfg.noise);
  kv["unigram_power"] = detail::format_double(cfg.unigram_power);
  kv["loss_mode"] = to_string(cfg.loss_mode);
  kv["seed"] = std::to_string(cfg.seed);
  kv["variant"] = to_string(cfg.variant);
  kv["parts"] = to_string(cfg.parts);
  kv["optimizer"] = to_string(cfg.optimizer);
  kv["emb_reg_form"] = to_string(cfg.emb_reg_form);
  kv["time_reg_form"] = to_string(cfg.time_reg_form);
  kv["batch_mix"] = to_string(cfg.batch_mix);
  kv["patience"] = std::to_string(cfg.patience);
  kv["init_scale"] = detail::format_double(cfg.init_scale);
  kv["precision_bits"] = std::to_string(cfg.precision_bits);
  kv["threads"] = std::to_string(cfg.threads);
  return kv;
}

// ---------------------------------------------------------------------------
// Ingestion keys
// ---------------------------------------------------------------------------

inline void apply_ingest_key(IngestConfig& cfg, const std::string& key,
                             const std::string& value) {
  if (key == "bin_minutes") {
    cfg.bin_minutes = detail::parse_int(key, value);
    bins_per_day_for(cfg.bin_minutes);  // validates divisibility
  } else if (key == "utc_offset_minutes") {
    cfg.utc_offset_minutes = detail::parse_int(key, value);
  } else if (key == "min_records") {
    cfg.min_records = size_t(detail::parse_u64(key, value));
  } else if (key == "min_places") {
    cfg.min_places = size_t(detail::parse_u64(key, value));
  } else if (key == "train_ratio") {
    cfg.ratios.train = detail::parse_double(key, value);
  } else if (key == "valid_ratio") {
    cfg.ratios.valid = detail::parse_double(key, value);
  } else if (key == "keep_last_per_bin") {
    cfg.keep_last_per_bin = detail::parse_bool(key, value);
  } else if (key == "lenient") {
    cfg.lenient = detail::parse_bool(key, value);
  } else if (key == "holidays") {
    std::stringstream ss(value);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      std::string t(detail::trim(tok));
      if (!t.empty()) cfg.calendar.add_holiday(t);
    }
  } else {
    throw ConfigError("unknown ingest config key '" + key + "'");
  }
}

inline void apply_ingest_config(IngestConfig& cfg, const KvMap& kv) {
  for (const auto& [key, value] : kv) apply_ingest_key(cfg, key, value);
  // train_ratio may be exactly 1 for graph-construction-only runs; training
  // then has no validation or test queries.
  if (cfg.ratios.train <= 0.0 || cfg.ratios.train > 1.0)
    throw ConfigError("train_ratio must lie in (0, 1]");
  if (cfg.ratios.valid < 0.0 || cfg.ratios.train + cfg.ratios.valid > 1.0)
    throw ConfigError("train_ratio + valid_ratio must not exceed 1");
}

inline KvMap ingest_config_snapshot(const IngestConfig& cfg,
                                    const std::string& holidays = "") {
  KvMap kv;
  kv["bin_minutes"] = std::to_string(cfg.bin_minutes);
  kv["utc_offset_minutes"] = std::to_string(cfg.utc_offset_minutes);
  kv["min_records"] = std::to_string(cfg.min_records);
  kv["min_places"] = std::to_string(cfg.min_places);
  kv["train_ratio"] = detail::format_double(cfg.ratios.train);
  kv["valid_ratio"] = detail::format_double(cfg.ratios.valid);
  kv["keep_last_per_bin"] = cfg.keep_last_per_bin ? "true" : "false";
  kv["lenient"] = cfg.lenient ? "true" : "false";
  if (!holidays.empty()) kv["holidays"] = holidays;
  return kv;
}

}  // namespace stkg
