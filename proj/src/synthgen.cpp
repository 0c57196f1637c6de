#include "mindshot/synthgen.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <future>
#include <map>
#include <set>
#include <thread>

namespace mindshot {

void HRFParams::validate() const {
  if (!(peak_delay > 0 && undershoot_delay > 0 && peak_dispersion > 0 &&
        undershoot_dispersion > 0 && undershoot_ratio > 0))
    throw std::invalid_argument("HRFParams: all fields must be strictly positive");
  if (!(peak_delay < undershoot_delay))
    throw std::invalid_argument("HRFParams: peak_delay must precede undershoot_delay");
  if (!(undershoot_ratio < 1.0))
    throw std::invalid_argument("HRFParams: undershoot_ratio must be in (0, 1)");
}

namespace {

// Gamma-density-shaped lobe with mode at `delay`, unit peak:
// shape k = 1 + delay/dispersion, scale = dispersion, divided by its modal value.
double gamma_lobe(double t, double delay, double dispersion) {
  if (t <= 0.0) return 0.0;
  const double k = 1.0 + delay / dispersion;
  // (t/mode)^(k-1) * exp(-(t-mode)/dispersion), mode = (k-1)*dispersion = delay
  return std::pow(t / delay, k - 1.0) * std::exp(-(t - delay) / dispersion);
}

}  // namespace

double double_gamma_hrf(double t, const HRFParams& p) {
  if (!std::isfinite(t)) throw std::invalid_argument("double_gamma_hrf: non-finite t");
  if (t < 0.0) throw std::invalid_argument("double_gamma_hrf: t must be >= 0");
  return gamma_lobe(t, p.peak_delay, p.peak_dispersion) -
         p.undershoot_ratio * gamma_lobe(t, p.undershoot_delay, p.undershoot_dispersion);
}

double bold_gain(const HRFParams& p, double stimulus_duration) {
  if (!(stimulus_duration > 0.0))
    throw std::invalid_argument("bold_gain: stimulus duration must be positive");
  constexpr double dt = 0.1;
  constexpr int n = 401;  // [0, 40 s]
  double h[n];
  for (int i = 0; i < n; ++i) h[i] = double_gamma_hrf(i * dt, p);
  const int taps = std::max<int>(1, static_cast<int>(std::llround(stimulus_duration / dt)));
  double peak = 0.0;
  for (int t = 0; t < n; ++t) {
    double acc = 0.0;
    for (int j = 0; j < taps && j <= t; ++j) acc += h[t - j] * dt;
    peak = std::max(peak, acc);
  }
  return peak;
}

HRFParams sample_hrf_params(Rng& rng) {
  HRFParams p;
  p.peak_delay = std::clamp(rng.normal(6.0, 0.5), 4.5, 7.5);
  p.undershoot_delay = rng.normal(16.0, 1.0);
  p.undershoot_ratio = std::clamp(rng.normal(1.0 / 6.0, 0.02), 1e-6, 0.999);
  return p;
}

SubjectProfile make_subject(std::uint64_t seed, Index canonical_len, int raw_multiple,
                            double noise_sigma) {
  if (canonical_len < 1) throw std::invalid_argument("make_subject: canonical_len must be >= 1");
  if (raw_multiple < 2 || raw_multiple > 8)
    throw std::invalid_argument("make_subject: raw_multiple must be in [2, 8]");
  Rng rng(seed);
  SubjectProfile s;
  s.subject_id = "subj-" + std::to_string(seed);
  s.raw_multiple = raw_multiple;
  s.raw_len = canonical_len * raw_multiple;
  s.hrf = sample_hrf_params(rng);
  s.hrf.validate();
  s.gain = bold_gain(s.hrf, 1.0);
  s.gain_profile.resize(canonical_len);
  for (Index v = 0; v < canonical_len; ++v)
    s.gain_profile[v] = std::clamp(rng.normal(0.0, 0.1), -0.2, 0.2);
  s.bias.resize(canonical_len);
  for (Index v = 0; v < canonical_len; ++v) s.bias[v] = rng.normal(0.0, 0.3);
  s.noise_sigma = noise_sigma;
  return s;
}

VoxelSeries synthesize_sample(const SubjectProfile& subject, const Stimulus& stimulus,
                              const Matrix& tuning, std::uint64_t noise_seed,
                              double nonlinearity) {
  if (tuning.cols() != stimulus.embedding.size())
    throw std::invalid_argument("synthesize_sample: tuning/embedding dimension mismatch");
  if (tuning.rows() * subject.raw_multiple != subject.raw_len)
    throw std::invalid_argument("synthesize_sample: tuning rows inconsistent with subject");
  const Index canonical_len = tuning.rows();
  const Vector canonical = tuning * stimulus.embedding;
  Vector x(canonical_len);
  for (Index v = 0; v < canonical_len; ++v) {
    double value = subject.gain * (1.0 + subject.gain_profile[v]) * canonical[v] + subject.bias[v];
    if (nonlinearity > 0.0) value = nonlinearity * std::tanh(value / nonlinearity);
    x[v] = value;
  }
  VoxelSeries out;
  out.subject_id = subject.subject_id;
  out.stimulus_id = stimulus.id;
  out.class_id = stimulus.class_id;
  out.values.resize(subject.raw_len);
  Rng noise(noise_seed);
  for (Index v = 0; v < canonical_len; ++v)
    for (int j = 0; j < subject.raw_multiple; ++j) {
      const Index r = v * subject.raw_multiple + j;
      out.values[r] = x[v] + (subject.noise_sigma > 0.0 ? noise.normal(0.0, subject.noise_sigma) : 0.0);
    }
  return out;
}

void DatasetConfig::validate() const {
  if (n_classes < 2) throw ConfigError("dataset.n_classes must be >= 2");
  if (train_per_class < 1) throw ConfigError("dataset.train_per_class must be >= 1");
  if (test_per_class < 1) throw ConfigError("dataset.test_per_class must be >= 1");
  if (n_subjects < 2) throw ConfigError("dataset.n_subjects must be >= 2");
  if (canonical_len < 2) throw ConfigError("dataset.canonical_len must be >= 2");
  if (embedding_dim < 2) throw ConfigError("dataset.embedding_dim must be >= 2");
  if (raw_multiple_min < 2 || raw_multiple_max > 8 || raw_multiple_min > raw_multiple_max)
    throw ConfigError("dataset.raw_multiple range must lie within [2, 8]");
  if (stimulus_jitter < 0) throw ConfigError("dataset.stimulus_jitter must be >= 0");
  if (noise_sigma < 0) throw ConfigError("dataset.noise_sigma must be >= 0");
  if (tuning_scale <= 0) throw ConfigError("dataset.tuning_scale must be > 0");
  if (subject_nonlinearity < 0) throw ConfigError("dataset.subject_nonlinearity must be >= 0");
}

namespace {

int worker_cap() {
  if (const char* env = std::getenv("MINDSHOT_THREADS")) {
    const int v = std::atoi(env);
    if (v >= 1) return v;
  }
  const unsigned hc = std::thread::hardware_concurrency();
  return hc > 0 ? static_cast<int>(hc) : 1;
}

}  // namespace

Dataset build_dataset(const DatasetConfig& cfg) {
  cfg.validate();
  Dataset ds;
  Rng master(mix_seed(cfg.seed, 0x5717));

  // Class prototypes: unit-norm Gaussian directions.
  const int D = cfg.embedding_dim;
  ds.stimulus_set.n_classes = cfg.n_classes;
  ds.stimulus_set.prototypes.resize(cfg.n_classes, D);
  for (int c = 0; c < cfg.n_classes; ++c) {
    Vector p(D);
    for (int d = 0; d < D; ++d) p[d] = master.normal();
    ds.stimulus_set.prototypes.row(c) = p.normalized();
  }

  // Stimuli: per class, train then test, jittered around the prototype.
  // Zero-padded ids make lexicographic order equal construction order.
  const int per_class = cfg.train_per_class + cfg.test_per_class;
  char idbuf[32];
  for (int c = 0; c < cfg.n_classes; ++c)
    for (int j = 0; j < per_class; ++j) {
      Stimulus st;
      std::snprintf(idbuf, sizeof(idbuf), "stim_c%03d_i%03d", c, j);
      st.id = idbuf;
      st.class_id = c;
      Vector z = ds.stimulus_set.prototypes.row(c).transpose();
      for (int d = 0; d < D; ++d) z[d] += cfg.stimulus_jitter * master.normal();
      st.embedding = z.normalized();
      ds.stimulus_set.stimuli.push_back(std::move(st));
    }

  // Shared tuning map from embedding space to the canonical voxel response.
  ds.tuning.resize(cfg.canonical_len, D);
  for (Index v = 0; v < cfg.canonical_len; ++v)
    for (int d = 0; d < D; ++d) ds.tuning(v, d) = cfg.tuning_scale * master.normal();

  for (int i = 0; i < cfg.n_subjects; ++i) {
    const int rm = static_cast<int>(master.uniform_int(cfg.raw_multiple_min, cfg.raw_multiple_max));
    SubjectProfile s =
        make_subject(mix_seed(cfg.seed, 0x50b1, static_cast<std::uint64_t>(i)),
                     cfg.canonical_len, rm, cfg.noise_sigma);
    s.subject_id = "s" + std::to_string(i);
    ds.subjects.push_back(std::move(s));
  }

  // Every subject sees every stimulus; noise seeds are derived per
  // (subject, stimulus) so the per-subject blocks are order-independent and
  // may be synthesized in parallel.
  const int n_stimuli = static_cast<int>(ds.stimulus_set.stimuli.size());
  ds.samples.resize(static_cast<std::size_t>(cfg.n_subjects) * n_stimuli);
  auto synth_subject = [&](int i) {
    for (int j = 0; j < n_stimuli; ++j) {
      const Stimulus& st = ds.stimulus_set.stimuli[static_cast<std::size_t>(j)];
      DatasetSample sample;
      sample.subject_index = i;
      sample.stimulus_index = j;
      sample.split = (j % per_class) < cfg.train_per_class ? Split::train : Split::test;
      sample.voxels = synthesize_sample(
          ds.subjects[static_cast<std::size_t>(i)], st, ds.tuning,
          mix_seed(cfg.seed, static_cast<std::uint64_t>(i) + 0xa500,
                   static_cast<std::uint64_t>(j)),
          cfg.subject_nonlinearity);
      ds.samples[static_cast<std::size_t>(i) * n_stimuli + j] = std::move(sample);
    }
  };
  const int workers = std::min(worker_cap(), cfg.n_subjects);
  if (workers <= 1) {
    for (int i = 0; i < cfg.n_subjects; ++i) synth_subject(i);
  } else {
    std::vector<std::future<void>> futures;
    std::atomic<int> next{0};
    for (int w = 0; w < workers; ++w)
      futures.push_back(std::async(std::launch::async, [&] {
        for (int i = next.fetch_add(1); i < cfg.n_subjects; i = next.fetch_add(1))
          synth_subject(i);
      }));
    for (auto& f : futures) f.get();
  }
  return ds;
}

std::vector<int> Dataset::sample_indices(int subject_index, Split split) const {
  std::vector<int> out;
  for (int i = 0; i < static_cast<int>(samples.size()); ++i)
    if (samples[static_cast<std::size_t>(i)].subject_index == subject_index &&
        samples[static_cast<std::size_t>(i)].split == split)
      out.push_back(i);
  return out;
}

int Dataset::subject_index_of(const std::string& subject_id) const {
  for (int i = 0; i < static_cast<int>(subjects.size()); ++i)
    if (subjects[static_cast<std::size_t>(i)].subject_id == subject_id) return i;
  throw std::invalid_argument("unknown subject_id: " + subject_id);
}

Dataset few_shot_subset(const Dataset& dataset, const std::string& subject_id, int k) {
  const int subject = dataset.subject_index_of(subject_id);
  // Collect the subject's train stimuli per class, ordered lexicographically.
  std::map<int, std::vector<std::pair<std::string, int>>> per_class;  // id -> sample index
  for (int i = 0; i < static_cast<int>(dataset.samples.size()); ++i) {
    const DatasetSample& s = dataset.samples[static_cast<std::size_t>(i)];
    if (s.subject_index == subject && s.split == Split::train)
      per_class[s.voxels.class_id].emplace_back(s.voxels.stimulus_id, i);
  }
  std::set<int> keep;
  for (auto& [class_id, entries] : per_class) {
    if (k < 1 || k > static_cast<int>(entries.size()))
      throw std::invalid_argument("few_shot_subset: k out of range for class " +
                                  std::to_string(class_id));
    std::sort(entries.begin(), entries.end());
    for (int j = 0; j < k; ++j) keep.insert(entries[static_cast<std::size_t>(j)].second);
  }
  Dataset out;
  out.subjects = dataset.subjects;
  out.stimulus_set = dataset.stimulus_set;
  out.tuning = dataset.tuning;
  for (int i = 0; i < static_cast<int>(dataset.samples.size()); ++i) {
    const DatasetSample& s = dataset.samples[static_cast<std::size_t>(i)];
    const bool drop = s.subject_index == subject && s.split == Split::train && !keep.count(i);
    if (!drop) out.samples.push_back(s);
  }
  return out;
}

Dataset selection_subset(const Dataset& dataset, const std::string& subject_id,
                         const std::vector<std::pair<int, std::string>>& chosen) {
  const int subject = dataset.subject_index_of(subject_id);
  std::map<int, std::string> chosen_map(chosen.begin(), chosen.end());
  Dataset out;
  out.subjects = dataset.subjects;
  out.stimulus_set = dataset.stimulus_set;
  out.tuning = dataset.tuning;
  for (const DatasetSample& s : dataset.samples) {
    if (s.subject_index == subject && s.split == Split::train) {
      auto it = chosen_map.find(s.voxels.class_id);
      if (it == chosen_map.end())
        throw std::invalid_argument("selection_subset: no chosen stimulus for class " +
                                    std::to_string(s.voxels.class_id));
      if (it->second != s.voxels.stimulus_id) continue;
    }
    out.samples.push_back(s);
  }
  return out;
}

}  // namespace mindshot
