#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "mindshot/models.hpp"
#include "mindshot/select.hpp"
#include "mindshot/synthgen.hpp"
#include "mindshot/train.hpp"

namespace mindshot {

// Everything one run needs, parsed from a single JSON file. The schema is
// strict: unknown keys anywhere are a ConfigError naming the key. Training
// defaults are the full-scale hyperparameters; configs/desk.json carries
// the small-scale overrides used by CI.
struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::string output_dir;

  DatasetConfig dataset;  // dataset.seed mirrors the top-level seed
  Index hidden_dim = 128;
  Index proj_hidden = 128;
  AdapterConfig adapter;

  TrainConfig pretrain;  // supervision is ignored here
  TrainConfig adapt;     // adapt.loss.supervision picks the cross-subject term

  ProjectionMethod selection_method = ProjectionMethod::pca;
  SelectionStrategy selection_strategy = SelectionStrategy::kda_max;

  int shots = 1;
  bool use_selection = false;

  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const std::string& path);
  nlohmann::json to_json() const;  // full echo, every field present
  void validate() const;

  EncoderConfig encoder_config() const;
  // Subjects s0..s{n-2} pretrain; the last subject is adapted.
  std::vector<std::string> pretrain_subjects() const;
  std::string adapt_subject() const;
};

}  // namespace mindshot
