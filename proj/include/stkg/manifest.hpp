#pragma once
// Run manifests: every command records its effective configuration, input
// digests, output paths, per-phase wall-clock timings, tool version and seed,
// which is enough to replay the run and check the artifacts afterwards.

#include <chrono>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "stkg/config.hpp"
#include "stkg/digest.hpp"

namespace stkg {

inline constexpr const char* kToolName = "stkg";
inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr uint32_t kManifestVersion = 1;

struct RunManifest {
  std::string command;
  KvMap config;                                            // effective key=value view
  std::vector<std::pair<std::string, std::string>> inputs; // (path, sha256 at write time)
  std::map<std::string, std::string> outputs;              // label -> path
  std::map<std::string, double> timings_seconds;
  uint64_t seed{0};

  void add_input(const std::string& path) { inputs.emplace_back(path, sha256_file(path)); }

  // Digests every regular file in the directory, sorted by name, so a graph
  // or dataset directory enters the manifest as one file list. The directory's
  // own run manifest is skipped: it carries timings, which vary between
  // otherwise identical runs, and it is not data.
  void add_input_dir(const std::filesystem::path& dir) {
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir))
      if (entry.is_regular_file() && entry.path().filename() != "manifest.json")
        files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) add_input(f.string());
  }
};

// Wall-clock phase timing: start() then stop("phase") accumulates seconds.
class PhaseClock {
public:
  explicit PhaseClock(RunManifest& manifest) : manifest_(manifest) { start(); }

  void start() { t0_ = std::chrono::steady_clock::now(); }

  void stop(const std::string& phase) {
    auto t1 = std::chrono::steady_clock::now();
    manifest_.timings_seconds[phase] += std::chrono::duration<double>(t1 - t0_).count();
    t0_ = t1;
  }

private:
  RunManifest& manifest_;
  std::chrono::steady_clock::time_point t0_;
};

inline void write_manifest(const std::filesystem::path& path, const RunManifest& manifest) {
  nlohmann::ordered_json j;
  j["format"] = "stkg-run-manifest";
  j["format_version"] = kManifestVersion;
  j["tool"] = {{"name", kToolName}, {"version", kToolVersion}};
  j["command"] = manifest.command;
  j["seed"] = manifest.seed;
  j["config"] = manifest.config;
  j["inputs"] = nlohmann::ordered_json::array();
  for (const auto& [p, digest] : manifest.inputs)
    j["inputs"].push_back({{"path", p}, {"sha256", digest}});
  j["outputs"] = manifest.outputs;
  j["timings_seconds"] = manifest.timings_seconds;

  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write manifest '" + path.string() + "'");
  os << j.dump(2) << '\n';
}

inline RunManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open manifest '" + path.string() + "'");
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed manifest '" + path.string() + "': " + e.what());
  }
  if (j.value("format", "") != std::string("stkg-run-manifest"))
    throw DataError("'" + path.string() + "' is not a run manifest");

  RunManifest manifest;
  manifest.command = j.at("command").get<std::string>();
  manifest.seed = j.at("seed").get<uint64_t>();
  for (const auto& [key, value] : j.at("config").items())
    manifest.config[key] = value.get<std::string>();
  for (const auto& input : j.at("inputs"))
    manifest.inputs.emplace_back(input.at("path").get<std::string>(),
                                 input.at("sha256").get<std::string>());
  for (const auto& [label, value] : j.at("outputs").items())
    manifest.outputs[label] = value.get<std::string>();
  for (const auto& [phase, value] : j.at("timings_seconds").items())
    manifest.timings_seconds[phase] = value.get<double>();
  return manifest;
}

// True when every recorded input still hashes to its manifest digest.
inline bool manifest_inputs_match(const RunManifest& manifest) {
  for (const auto& [path, digest] : manifest.inputs)
    if (!std::filesystem::exists(path) || sha256_file(path) != digest) return false;
  return true;
}

}  // namespace stkg
