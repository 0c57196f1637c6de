#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "mindshot/config.hpp"
#include "mindshot/eval.hpp"
#include "mindshot/manifest.hpp"

namespace mindshot {

// Dataset serialization: meta.json for scalars and identifiers, MSARR1
// arrays for everything numeric. Round-trips bit-exactly.
void save_dataset(const Dataset& data, const DatasetConfig& cfg,
                  const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

struct StageOptions {
  bool force = false;  // run even when an input disagrees with the manifest
};

// One adaptation run. Empty string / zero fields fall back to the config.
struct AdaptVariant {
  std::string tag = "default";
  std::string supervision;
  int shots = 0;
  bool use_selection = false;
  std::string selection_strategy;
  std::optional<AdapterConfig> adapter;
};

void run_gen_data(const ExperimentConfig& cfg, const StageOptions& opt);
void run_pretrain(const ExperimentConfig& cfg, const StageOptions& opt);
void run_adapt(const ExperimentConfig& cfg, const AdaptVariant& variant, const StageOptions& opt);
void run_select(const ExperimentConfig& cfg, SelectionStrategy strategy, const StageOptions& opt);
EvalReport run_eval(const ExperimentConfig& cfg, const std::string& tag, const StageOptions& opt);
void run_report(const ExperimentConfig& cfg, const StageOptions& opt);

// Sweeps one axis ("supervision", "adapter_depth", "shots" or "selection")
// with shared seeds, skipping stages that are already up to date, and writes
// one comparison table.
void run_ablate(const ExperimentConfig& cfg, const std::string& axis, const StageOptions& opt);

// Checks every manifest entry against the files on disk and flags artifacts
// the manifest does not account for.
void verify_run_dir(const ExperimentConfig& cfg);

}  // namespace mindshot
