#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mindshot/models.hpp"
#include "mindshot/synthgen.hpp"

namespace mindshot {

// One-cycle triangular schedule: lr_max/25 at step 0, lr_max at
// round(0.3 * (total_steps - 1)), lr_max/100 at the last step, linear
// in between.
double cyclical_lr(int step, int total_steps, double lr_max);

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-2;  // decoupled
};

// AdamW with bias correction; state is laid out per tensor and must be used
// with the same tensor list it was built from.
class AdamW {
 public:
  explicit AdamW(const std::vector<TensorRef>& params, AdamWConfig config = {});
  void step(const std::vector<TensorRef>& params, const std::vector<TensorRef>& grads, double lr);
  std::int64_t steps_taken() const { return step_count_; }

 private:
  AdamWConfig config_;
  std::vector<Vector> m_, v_;
  std::int64_t step_count_ = 0;
};

struct TrainConfig {
  int epochs = 100;
  int batch_size = 64;
  double lr_max = 3e-4;
  AdamWConfig adamw;
  LossSpec loss;
  std::uint64_t seed = 0;

  void validate() const;
};

struct LogRow {
  int epoch = 0;
  int step = 0;  // global step
  double lr = 0.0;
  double total = 0.0;
  std::map<std::string, double> components;
};

struct TrainLog {
  std::vector<LogRow> rows;
  // Fixed columns: epoch,step,lr,total,softclip,prior,amp,pha,mse
  // (absent components print as 0).
  void write_csv(const std::string& path) const;
};

struct PretrainResult {
  Encoder encoder;
  TrainLog log;
};

// Trains a fresh encoder on the train-split samples of the named subjects.
// Voxels are max-pooled to the encoder input length; targets are the
// stimulus embeddings. Batches with fewer than two samples are dropped with
// a warning. Throws NumericError if the loss goes non-finite.
PretrainResult pretrain(const Dataset& data, const std::vector<std::string>& subject_ids,
                        const EncoderConfig& enc_cfg, const TrainConfig& cfg);

struct AdaptResult {
  Adapter adapter;
  TrainLog log;
};

// Trains an adapter for `subject_id` with the encoder frozen. Anchors are
// that subject's train-split samples in `data` (apply few_shot_subset
// first for the k-shot setting). When the loss spec asks for cross-subject
// supervision, every anchor is paired with a same-class train sample of a
// source subject, redrawn each epoch.
AdaptResult adapt(const Dataset& data, const std::string& subject_id,
                  const std::vector<std::string>& source_subject_ids, const Encoder& encoder,
                  const AdapterConfig& ad_cfg, const TrainConfig& cfg);

// Checkpoints: every trainable tensor flattened into one float64 array, in
// traversal order. Loading requires the exact total size.
void save_params(const std::string& path, const std::vector<TensorRef>& tensors);
void load_params(const std::string& path, const std::vector<TensorRef>& tensors);

}  // namespace mindshot
