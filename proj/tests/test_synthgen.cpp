#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <set>
#include <stdexcept>

#include <mindshot/hash.hpp>
#include <mindshot/rng.hpp>
#include <mindshot/spectral.hpp>
#include <mindshot/synthgen.hpp>
#include <mindshot/types.hpp>

using namespace mindshot;

namespace {

// Independent lobe oracle: gamma density with shape 1 + delay/dispersion and
// scale dispersion, normalized by its own value at the mode.
double lobe_oracle(double t, double delay, double dispersion) {
  if (t <= 0.0) return 0.0;
  const double k = 1.0 + delay / dispersion;
  auto log_density = [&](double u) {
    return (k - 1.0) * std::log(u) - u / dispersion - std::lgamma(k) - k * std::log(dispersion);
  };
  return std::exp(log_density(t) - log_density(delay));
}

double hrf_oracle(double t, const HRFParams& p) {
  return lobe_oracle(t, p.peak_delay, p.peak_dispersion) -
         p.undershoot_ratio * lobe_oracle(t, p.undershoot_delay, p.undershoot_dispersion);
}

// Full boxcar convolution via an explicit cumulative formulation.
double bold_gain_oracle(const HRFParams& p, double duration) {
  const double dt = 0.1;
  const int n = 401;
  const int taps = std::max(1, static_cast<int>(std::llround(duration / dt)));
  double peak = 0.0;
  for (int t = 0; t < n; ++t) {
    double acc = 0.0;
    for (int u = t; u > t - taps && u >= 0; --u) acc += double_gamma_hrf(u * dt, p) * dt;
    peak = std::max(peak, acc);
  }
  return peak;
}

std::uint64_t dataset_fingerprint(const Dataset& ds) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const DatasetSample& s : ds.samples) {
    h = fnv1a64(&s.subject_index, sizeof(s.subject_index), h);
    h = fnv1a64(&s.stimulus_index, sizeof(s.stimulus_index), h);
    h = fnv1a64(s.voxels.values.data(),
                static_cast<std::size_t>(s.voxels.values.size()) * sizeof(double), h);
  }
  h = fnv1a64(ds.tuning.data(), static_cast<std::size_t>(ds.tuning.size()) * sizeof(double), h);
  return h;
}

}  // namespace

TEST_CASE("double_gamma_hrf matches the gamma-density oracle") {
  HRFParams p;  // canonical defaults (6, 16, 1, 1, 1/6)
  for (double t : {0.0, 0.5, 1.0, 3.0, 6.0, 9.0, 16.0, 25.0, 40.0}) {
    CHECK(double_gamma_hrf(t, p) == doctest::Approx(hrf_oracle(t, p)).epsilon(1e-12));
  }
  CHECK(double_gamma_hrf(0.0, p) == 0.0);
  // positive lobe has unit peak at the delay, minus the undershoot's tail
  CHECK(double_gamma_hrf(6.0, p) ==
        doctest::Approx(1.0 - p.undershoot_ratio * lobe_oracle(6.0, 16.0, 1.0)).epsilon(1e-12));
  // grid argmax sits at the peak delay
  double best_t = 0.0, best = -1.0;
  for (double t = 0.0; t <= 40.0; t += 0.01) {
    const double v = double_gamma_hrf(t, p);
    if (v > best) { best = v; best_t = t; }
  }
  CHECK(best_t == doctest::Approx(6.0).epsilon(0.01));
  // late undershoot dips below zero
  CHECK(double_gamma_hrf(16.0, p) < 0.1);
  CHECK(double_gamma_hrf(20.0, p) < 0.0);
}

TEST_CASE("double_gamma_hrf rejects bad arguments") {
  HRFParams p;
  CHECK_THROWS_AS(double_gamma_hrf(-1.0, p), std::invalid_argument);
  CHECK_THROWS_AS(double_gamma_hrf(std::numeric_limits<double>::quiet_NaN(), p),
                  std::invalid_argument);
  HRFParams bad;
  bad.peak_delay = 20.0;  // must precede the undershoot
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  HRFParams ratio;
  ratio.undershoot_ratio = 1.5;
  CHECK_THROWS_AS(ratio.validate(), std::invalid_argument);
}

TEST_CASE("bold_gain matches the convolution oracle and its properties") {
  HRFParams p;
  for (double dur : {0.5, 1.0, 4.0}) {
    CHECK(bold_gain(p, dur) == doctest::Approx(bold_gain_oracle(p, dur)).epsilon(1e-12));
    CHECK(bold_gain(p, dur) > 0.0);
  }
  // longer stimulation accumulates more response
  CHECK(bold_gain(p, 4.0) > bold_gain(p, 1.0));
  CHECK(bold_gain(p, 1.0) > bold_gain(p, 0.2));
  CHECK_THROWS_AS(bold_gain(p, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(bold_gain(p, -1.0), std::invalid_argument);
}

TEST_CASE("sample_hrf_params respects the clipping rules") {
  Rng rng(41);
  double sum_delay = 0.0;
  const int n = 4000;
  for (int i = 0; i < n; ++i) {
    HRFParams p = sample_hrf_params(rng);
    p.validate();
    CHECK(p.peak_delay >= 4.5);
    CHECK(p.peak_delay <= 7.5);
    CHECK(p.undershoot_ratio > 0.0);
    CHECK(p.undershoot_ratio < 1.0);
    sum_delay += p.peak_delay;
  }
  CHECK(sum_delay / n == doctest::Approx(6.0).epsilon(0.01));
}

TEST_CASE("make_subject invariants hold across seeds") {
  for (std::uint64_t seed : {1ULL, 77ULL, 500ULL, 12345ULL}) {
    SubjectProfile s = make_subject(seed, 96, 4, 0.1);
    CHECK(s.raw_len == 96 * 4);
    CHECK(s.raw_multiple == 4);
    CHECK(s.gain_profile.size() == 96);
    CHECK(s.bias.size() == 96);
    CHECK(s.gain == doctest::Approx(bold_gain(s.hrf, 1.0)).epsilon(1e-12));
    for (Index v = 0; v < 96; ++v) {
      CHECK(s.gain_profile[v] >= -0.2);
      CHECK(s.gain_profile[v] <= 0.2);
    }
  }
  // determinism
  SubjectProfile a = make_subject(9, 32, 3);
  SubjectProfile b = make_subject(9, 32, 3);
  CHECK(a.bias == b.bias);
  CHECK(a.gain_profile == b.gain_profile);
  CHECK(a.gain == b.gain);

  CHECK_THROWS_AS(make_subject(1, 0, 4), std::invalid_argument);
  CHECK_THROWS_AS(make_subject(1, 96, 1), std::invalid_argument);
  CHECK_THROWS_AS(make_subject(1, 96, 9), std::invalid_argument);
}

TEST_CASE("synthesize_sample identity subject reproduces tuning * z") {
  SubjectProfile s;
  s.subject_id = "ident";
  s.raw_multiple = 3;
  s.raw_len = 12;
  s.gain = 1.0;
  s.gain_profile = Vector::Zero(4);
  s.bias = Vector::Zero(4);
  s.noise_sigma = 0.0;

  Rng rng(5);
  Matrix tuning(4, 2);
  for (Index i = 0; i < 4; ++i)
    for (Index j = 0; j < 2; ++j) tuning(i, j) = rng.normal();
  Stimulus st;
  st.id = "x";
  st.class_id = 0;
  st.embedding = Vector(2);
  st.embedding << 0.6, 0.8;

  VoxelSeries series = synthesize_sample(s, st, tuning, 123);
  Vector pooled = adaptive_max_pool(series.values, 4);
  Vector want = tuning * st.embedding;
  CHECK(pooled == want);  // exact, noiseless piecewise-constant round trip
}

TEST_CASE("synthesize_sample hand example for a 3x2 tuning") {
  SubjectProfile s;
  s.subject_id = "hand";
  s.raw_multiple = 2;
  s.raw_len = 6;
  s.gain = 2.0;
  s.gain_profile = Vector(3);
  s.gain_profile << 0.1, 0.0, -0.1;
  s.bias = Vector(3);
  s.bias << 1.0, -1.0, 0.5;
  s.noise_sigma = 0.0;

  Matrix tuning(3, 2);
  tuning << 1, 10, 2, 20, 3, 30;
  Stimulus st;
  st.id = "z10";
  st.class_id = 1;
  st.embedding = Vector(2);
  st.embedding << 1, 0;  // selects the first tuning column

  VoxelSeries series = synthesize_sample(s, st, tuning, 1);
  // x[v] = gain*(1+profile[v])*tuning(v,0) + bias[v], upsampled by 2
  Vector want(6);
  want << 2 * 1.1 * 1 + 1.0, 2 * 1.1 * 1 + 1.0, 2 * 1.0 * 2 - 1.0, 2 * 1.0 * 2 - 1.0,
      2 * 0.9 * 3 + 0.5, 2 * 0.9 * 3 + 0.5;
  for (Index i = 0; i < 6; ++i) CHECK(series.values[i] == doctest::Approx(want[i]).epsilon(1e-15));

  Stimulus wrong = st;
  wrong.embedding = Vector::Zero(3);
  CHECK_THROWS_AS(synthesize_sample(s, wrong, tuning, 1), std::invalid_argument);
}

TEST_CASE("subject_nonlinearity applies tanh squashing before upsampling") {
  SubjectProfile s;
  s.subject_id = "nl";
  s.raw_multiple = 2;
  s.raw_len = 4;
  s.gain = 1.0;
  s.gain_profile = Vector::Zero(2);
  s.bias = Vector::Zero(2);
  Matrix tuning(2, 1);
  tuning << 3.0, -0.5;
  Stimulus st;
  st.id = "q";
  st.class_id = 0;
  st.embedding = Vector(1);
  st.embedding << 1.0;
  VoxelSeries series = synthesize_sample(s, st, tuning, 0, 1.0);
  CHECK(series.values[0] == doctest::Approx(std::tanh(3.0)).epsilon(1e-15));
  CHECK(series.values[2] == doctest::Approx(std::tanh(-0.5)).epsilon(1e-15));
}

TEST_CASE("build_dataset default-shape counts and invariants") {
  DatasetConfig cfg;
  cfg.seed = 11;
  Dataset ds = build_dataset(cfg);
  CHECK(ds.samples.size() == 4u * 10u * 30u);
  CHECK(ds.subjects.size() == 4);
  CHECK(ds.stimulus_set.stimuli.size() == 300);
  CHECK(ds.stimulus_set.prototypes.rows() == 10);

  for (int c = 0; c < 10; ++c)
    CHECK(ds.stimulus_set.prototypes.row(c).norm() == doctest::Approx(1.0).epsilon(1e-12));
  for (const Stimulus& st : ds.stimulus_set.stimuli)
    CHECK(st.embedding.norm() == doctest::Approx(1.0).epsilon(1e-12));

  for (int i = 0; i < 4; ++i) {
    auto train = ds.sample_indices(i, Split::train);
    auto test = ds.sample_indices(i, Split::test);
    CHECK(train.size() == 200);
    CHECK(test.size() == 100);
    // the two splits use disjoint stimuli within a subject
    std::set<std::string> train_ids, test_ids;
    for (int idx : train) train_ids.insert(ds.samples[idx].voxels.stimulus_id);
    for (int idx : test) test_ids.insert(ds.samples[idx].voxels.stimulus_id);
    CHECK(train_ids.size() == 200);
    for (const auto& id : test_ids) CHECK(train_ids.count(id) == 0);
  }

  // every sample's voxel length matches its owner, all finite
  for (const DatasetSample& s : ds.samples) {
    CHECK(s.voxels.values.size() == ds.subjects[s.subject_index].raw_len);
    CHECK(s.voxels.values.allFinite());
  }
}

TEST_CASE("build_dataset is deterministic and thread-count independent") {
  DatasetConfig cfg;
  cfg.seed = 29;
  cfg.n_classes = 3;
  cfg.train_per_class = 4;
  cfg.test_per_class = 2;
  cfg.canonical_len = 16;
  cfg.embedding_dim = 8;

  const std::uint64_t base = dataset_fingerprint(build_dataset(cfg));
  CHECK(dataset_fingerprint(build_dataset(cfg)) == base);

  setenv("MINDSHOT_THREADS", "1", 1);
  const std::uint64_t serial = dataset_fingerprint(build_dataset(cfg));
  setenv("MINDSHOT_THREADS", "3", 1);
  const std::uint64_t threaded = dataset_fingerprint(build_dataset(cfg));
  unsetenv("MINDSHOT_THREADS");
  CHECK(serial == base);
  CHECK(threaded == base);

  cfg.seed = 30;
  CHECK(dataset_fingerprint(build_dataset(cfg)) != base);
}

TEST_CASE("zero stimulus jitter collapses same-class responses") {
  DatasetConfig cfg;
  cfg.seed = 3;
  cfg.n_classes = 2;
  cfg.train_per_class = 2;
  cfg.test_per_class = 1;
  cfg.canonical_len = 8;
  cfg.embedding_dim = 4;
  cfg.stimulus_jitter = 0.0;
  cfg.noise_sigma = 0.0;
  Dataset ds = build_dataset(cfg);
  // stimuli 0 and 1 are both class 0: identical embeddings, identical signals
  CHECK(ds.stimulus_set.stimuli[0].class_id == ds.stimulus_set.stimuli[1].class_id);
  CHECK((ds.stimulus_set.stimuli[0].embedding - ds.stimulus_set.stimuli[1].embedding).norm() ==
        0.0);
  CHECK(ds.samples[0].voxels.values == ds.samples[1].voxels.values);
}

TEST_CASE("build_dataset full-scale class count") {
  DatasetConfig cfg;
  cfg.seed = 1;
  cfg.n_classes = 80;
  cfg.train_per_class = 1;
  cfg.test_per_class = 1;
  cfg.n_subjects = 2;
  cfg.canonical_len = 8;
  cfg.embedding_dim = 4;
  Dataset ds = build_dataset(cfg);
  CHECK(ds.stimulus_set.n_classes == 80);
  CHECK(ds.stimulus_set.prototypes.rows() == 80);
}

TEST_CASE("build_dataset rejects invalid configs") {
  DatasetConfig cfg;
  cfg.n_classes = 1;
  CHECK_THROWS_AS(build_dataset(cfg), ConfigError);
  cfg = DatasetConfig{};
  cfg.n_subjects = 1;
  CHECK_THROWS_AS(build_dataset(cfg), ConfigError);
  cfg = DatasetConfig{};
  cfg.raw_multiple_min = 1;
  CHECK_THROWS_AS(build_dataset(cfg), ConfigError);
  cfg = DatasetConfig{};
  cfg.raw_multiple_max = 9;
  CHECK_THROWS_AS(build_dataset(cfg), ConfigError);
  cfg = DatasetConfig{};
  cfg.tuning_scale = 0.0;
  CHECK_THROWS_AS(build_dataset(cfg), ConfigError);
}

TEST_CASE("few_shot_subset keeps the lexicographically first k per class") {
  DatasetConfig cfg;
  cfg.seed = 17;
  cfg.n_classes = 3;
  cfg.train_per_class = 4;
  cfg.test_per_class = 2;
  cfg.n_subjects = 2;
  cfg.canonical_len = 8;
  cfg.embedding_dim = 4;
  Dataset ds = build_dataset(cfg);

  Dataset fs = few_shot_subset(ds, "s1", 2);
  // untouched: subject s0 and every test sample
  CHECK(fs.sample_indices(0, Split::train).size() == 12);
  CHECK(fs.sample_indices(0, Split::test).size() == 6);
  CHECK(fs.sample_indices(1, Split::test).size() == 6);

  auto kept = fs.sample_indices(1, Split::train);
  CHECK(kept.size() == 6);  // 3 classes x 2 shots
  std::set<std::string> ids;
  for (int idx : kept) ids.insert(fs.samples[idx].voxels.stimulus_id);
  // construction order is lexicographic, so the first two per class win
  for (int c = 0; c < 3; ++c) {
    char a[32], b[32];
    std::snprintf(a, sizeof(a), "stim_c%03d_i000", c);
    std::snprintf(b, sizeof(b), "stim_c%03d_i001", c);
    CHECK(ids.count(a) == 1);
    CHECK(ids.count(b) == 1);
  }

  CHECK_THROWS_AS(few_shot_subset(ds, "s1", 0), std::invalid_argument);
  CHECK_THROWS_AS(few_shot_subset(ds, "s1", 5), std::invalid_argument);
  CHECK_THROWS_AS(few_shot_subset(ds, "nobody", 1), std::invalid_argument);
}

TEST_CASE("selection_subset keeps exactly the chosen stimulus per class") {
  DatasetConfig cfg;
  cfg.seed = 17;
  cfg.n_classes = 2;
  cfg.train_per_class = 3;
  cfg.test_per_class = 1;
  cfg.n_subjects = 2;
  cfg.canonical_len = 8;
  cfg.embedding_dim = 4;
  Dataset ds = build_dataset(cfg);

  std::vector<std::pair<int, std::string>> chosen = {{0, "stim_c000_i002"},
                                                     {1, "stim_c001_i001"}};
  Dataset sel = selection_subset(ds, "s1", chosen);
  auto kept = sel.sample_indices(1, Split::train);
  CHECK(kept.size() == 2);
  std::set<std::string> ids;
  for (int idx : kept) ids.insert(sel.samples[idx].voxels.stimulus_id);
  CHECK(ids.count("stim_c000_i002") == 1);
  CHECK(ids.count("stim_c001_i001") == 1);
  CHECK(sel.sample_indices(0, Split::train).size() == 6);

  std::vector<std::pair<int, std::string>> missing = {{0, "stim_c000_i000"}};
  CHECK_THROWS_AS(selection_subset(ds, "s1", missing), std::invalid_argument);
}
