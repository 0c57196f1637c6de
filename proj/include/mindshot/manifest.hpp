#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

namespace mindshot {

inline constexpr char kToolVersion[] = "0.1.0";

// One pipeline stage's footprint: which files it read and wrote (paths
// relative to the run directory, with FNV-1a 64 content checksums) and the
// headline numbers it produced.
struct StageRecord {
  std::string stage;
  std::map<std::string, std::string> inputs;
  std::map<std::string, std::string> outputs;
  std::map<std::string, double> metrics;
};

// The run's ledger. Everything in it is a pure function of the config, so
// two runs from the same config produce byte-identical manifests; wall time
// goes to the timing.json sidecar instead.
struct RunManifest {
  std::string tool_version = kToolVersion;
  nlohmann::json config_echo;
  std::vector<StageRecord> stages;  // insertion order; reruns replace in place

  const StageRecord* find(const std::string& stage) const;
  void upsert(StageRecord rec);

  static RunManifest load(const std::filesystem::path& run_dir);
  void save(const std::filesystem::path& run_dir) const;  // atomic tmp + rename
};

std::string file_checksum_hex(const std::filesystem::path& path);

// Per-stage wall time in seconds, merged into timing.json. Deliberately kept
// out of the manifest.
void record_timing(const std::filesystem::path& run_dir, const std::string& stage,
                   double seconds);

}  // namespace mindshot
