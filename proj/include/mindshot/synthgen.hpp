#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mindshot/rng.hpp"
#include "mindshot/types.hpp"

namespace mindshot {

// Double-gamma hemodynamic response parameters (seconds, except the ratio).
struct HRFParams {
  double peak_delay = 6.0;
  double undershoot_delay = 16.0;
  double peak_dispersion = 1.0;
  double undershoot_dispersion = 1.0;
  double undershoot_ratio = 1.0 / 6.0;

  void validate() const;
};

// Generative parameters of one synthetic subject. The subject transform is
// affine per canonical position: x[v] = gain*(1+gain_profile[v])*r[v] + bias[v],
// followed by piecewise-constant upsampling to raw_len and i.i.d. noise.
struct SubjectProfile {
  std::string subject_id;
  Index raw_len = 0;  // raw_multiple * canonical_len
  int raw_multiple = 0;
  double gain = 1.0;
  Vector gain_profile;  // length L, entries in [-0.2, 0.2]
  Vector bias;          // length L
  HRFParams hrf;
  double noise_sigma = 0.0;
};

struct Stimulus {
  std::string id;
  int class_id = -1;
  Vector embedding;  // unit norm, length D
};

struct StimulusSet {
  int n_classes = 0;
  Matrix prototypes;  // n_classes x D, unit-norm rows
  std::vector<Stimulus> stimuli;
};

struct VoxelSeries {
  std::string subject_id;
  std::string stimulus_id;
  int class_id = -1;
  Vector values;  // length raw_len of the owning subject
};

enum class Split { train, test };

struct DatasetSample {
  int subject_index = -1;
  int stimulus_index = -1;  // row into the stimulus list; target embedding lives there
  Split split = Split::train;
  VoxelSeries voxels;
};

struct Dataset {
  std::vector<SubjectProfile> subjects;
  StimulusSet stimulus_set;
  Matrix tuning;  // L x D, shared across subjects
  std::vector<DatasetSample> samples;

  std::vector<int> sample_indices(int subject_index, Split split) const;
  int subject_index_of(const std::string& subject_id) const;
};

struct DatasetConfig {
  int n_classes = 10;
  int train_per_class = 20;
  int test_per_class = 10;
  int n_subjects = 4;
  Index canonical_len = 96;   // L
  int embedding_dim = 64;     // D
  int raw_multiple_min = 2;
  int raw_multiple_max = 8;
  double stimulus_jitter = 0.15;  // sigma_stim
  double noise_sigma = 0.1;
  double tuning_scale = 1.0;
  double subject_nonlinearity = 0.0;  // 0 = off; >0: x -> a*tanh(x/a)
  std::uint64_t seed = 0;

  void validate() const;
};

// h(t) = g(t; peak) - ratio * g(t; undershoot); g is a gamma-density-shaped
// kernel with mode at the delay, normalized to unit peak of the positive lobe.
double double_gamma_hrf(double t, const HRFParams& p);

// Peak of the discrete convolution of a duration-long boxcar with h(t),
// sampled at dt = 0.1 s over [0, 40 s].
double bold_gain(const HRFParams& p, double stimulus_duration);

// HRF parameters jittered around the canonical values (this is where the
// clipping rules live; make_subject draws from it).
HRFParams sample_hrf_params(Rng& rng);

SubjectProfile make_subject(std::uint64_t seed, Index canonical_len, int raw_multiple,
                            double noise_sigma = 0.0);

VoxelSeries synthesize_sample(const SubjectProfile& subject, const Stimulus& stimulus,
                              const Matrix& tuning, std::uint64_t noise_seed,
                              double nonlinearity = 0.0);

Dataset build_dataset(const DatasetConfig& cfg);

// Keeps, for the named subject, only the lexicographically first k train
// stimuli of every class; all other samples pass through untouched.
Dataset few_shot_subset(const Dataset& dataset, const std::string& subject_id, int k);

// Same reduction, but the single kept stimulus per class is dictated by a
// selection result (class_id -> stimulus_id).
Dataset selection_subset(const Dataset& dataset, const std::string& subject_id,
                         const std::vector<std::pair<int, std::string>>& chosen);

}  // namespace mindshot
