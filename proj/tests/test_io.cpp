#include <doctest.h>

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "mindshot/config.hpp"
#include "mindshot/hash.hpp"
#include "mindshot/manifest.hpp"
#include "mindshot/msarr.hpp"
#include "mindshot/pipeline.hpp"
#include "mindshot/synthgen.hpp"

using namespace mindshot;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path temp_path(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(static_cast<bool>(in));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  REQUIRE(static_cast<bool>(out));
  out << body;
}

bool same_bits(double a, double b) {
  return std::bit_cast<std::uint64_t>(a) == std::bit_cast<std::uint64_t>(b);
}

bool same_bits(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  for (Index r = 0; r < a.rows(); ++r)
    for (Index c = 0; c < a.cols(); ++c)
      if (!same_bits(a(r, c), b(r, c))) return false;
  return true;
}

bool same_bits(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) return false;
  for (Index i = 0; i < a.size(); ++i)
    if (!same_bits(a[i], b[i])) return false;
  return true;
}

}  // namespace

TEST_CASE("msarr files carry a one-line text header") {
  const fs::path mp = temp_path("mindshot_io_header_m.msarr");
  Matrix m(2, 3);
  m << 1, 2, 3, 4, 5, 6;
  write_msarr(mp, m);
  const std::string bytes = slurp(mp);
  const std::string want = "MSARR1 float64 2 2 3\n";
  REQUIRE(bytes.size() == want.size() + 6 * sizeof(double));
  CHECK(bytes.substr(0, want.size()) == want);

  const fs::path vp = temp_path("mindshot_io_header_v.msarr");
  Vector v(5);
  v << 1, 2, 3, 4, 5;
  write_msarr(vp, v);
  const std::string vbytes = slurp(vp);
  const std::string vwant = "MSARR1 float64 1 5\n";
  REQUIRE(vbytes.size() == vwant.size() + 5 * sizeof(double));
  CHECK(vbytes.substr(0, vwant.size()) == vwant);
}

TEST_CASE("msarr payload is row-major little-endian float64") {
  const fs::path p = temp_path("mindshot_io_rowmajor.msarr");
  Matrix m(2, 3);
  m << 1, 2, 3, 4, 5, 6;
  write_msarr(p, m);
  const std::string bytes = slurp(p);
  const std::size_t header = std::string("MSARR1 float64 2 2 3\n").size();
  double got[6];
  std::memcpy(got, bytes.data() + header, sizeof got);
  const double want[6] = {1, 2, 3, 4, 5, 6};  // row 0 first, despite Eigen's column-major storage
  for (int i = 0; i < 6; ++i) CHECK(got[i] == want[i]);
}

TEST_CASE("msarr round-trips matrices and vectors bit-exactly") {
  const fs::path p = temp_path("mindshot_io_roundtrip.msarr");

  Matrix m(3, 4);
  Rng rng(31);
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c) m(r, c) = rng.normal() * std::pow(10.0, rng.normal());
  m(0, 0) = -0.0;
  m(0, 1) = std::numeric_limits<double>::denorm_min();
  m(0, 2) = std::numeric_limits<double>::max();
  m(0, 3) = -std::numeric_limits<double>::infinity();
  m(1, 0) = std::numeric_limits<double>::quiet_NaN();
  write_msarr(p, m);
  MsArr arr = read_msarr(p);
  REQUIRE(arr.dims == std::vector<Index>{3, 4});
  CHECK(same_bits(arr.as_matrix(), m));

  Vector v(7);
  for (Index i = 0; i < v.size(); ++i) v[i] = rng.normal();
  v[3] = -0.0;
  write_msarr(p, v);
  arr = read_msarr(p);
  REQUIRE(arr.dims == std::vector<Index>{7});
  CHECK(same_bits(arr.as_vector(), v));
}

TEST_CASE("read_msarr rejects malformed files") {
  CHECK_THROWS_AS(read_msarr(temp_path("mindshot_io_nothing.msarr")), ArtifactError);

  const fs::path p = temp_path("mindshot_io_bad.msarr");
  const std::string payload(4 * sizeof(double), '\0');

  spit(p, "MSARRX float64 1 4\n" + payload);
  CHECK_THROWS_AS(read_msarr(p), ArtifactError);

  spit(p, "MSARR1 float32 1 4\n" + payload);
  CHECK_THROWS_AS(read_msarr(p), ArtifactError);

  spit(p, "MSARR1 float64 2 -1 3\n" + payload);
  CHECK_THROWS_AS(read_msarr(p), ArtifactError);

  // promises two dims, lists one
  spit(p, "MSARR1 float64 2 4\n" + payload);
  CHECK_THROWS_AS(read_msarr(p), ArtifactError);

  // header claims four values, payload holds two
  spit(p, "MSARR1 float64 1 4\n" + std::string(2 * sizeof(double), '\0'));
  CHECK_THROWS_AS(read_msarr(p), ArtifactError);
}

TEST_CASE("array views enforce the stored rank") {
  const fs::path p = temp_path("mindshot_io_rank.msarr");
  const Vector v = Vector::LinSpaced(4, 0.0, 3.0);
  write_msarr(p, v);
  CHECK_THROWS_AS(read_msarr(p).as_matrix(), ArtifactError);

  const Matrix m = Matrix::Identity(2, 2);
  write_msarr(p, m);
  CHECK_THROWS_AS(read_msarr(p).as_vector(), ArtifactError);
}

TEST_CASE("fnv1a64 matches the published test vectors") {
  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(fnv1a64("foobar") == 0x85944171f73967e8ULL);

  // streaming in chunks equals hashing the concatenation
  const std::uint64_t h = fnv1a64("bar", 3, fnv1a64("foo"));
  CHECK(h == fnv1a64("foobar"));

  CHECK(hex64(0xcbf29ce484222325ULL) == "cbf29ce484222325");
  CHECK(hex64(0x1ULL) == "0000000000000001");
  CHECK(hex64(0x0ULL) == "0000000000000000");
}

TEST_CASE("file_checksum_hex hashes the raw bytes") {
  const fs::path p = temp_path("mindshot_io_checksum.bin");
  spit(p, "abc");
  CHECK(file_checksum_hex(p) == hex64(fnv1a64("abc")));

  spit(p, "");
  CHECK(file_checksum_hex(p) == hex64(fnv1a64("")));

  std::string big(70000, 'x');  // spans two read() chunks
  big[65536] = 'y';
  spit(p, big);
  CHECK(file_checksum_hex(p) == hex64(fnv1a64(big)));

  CHECK_THROWS_AS(file_checksum_hex(temp_path("mindshot_io_checksum_missing.bin")), ArtifactError);
}

TEST_CASE("manifest round-trips and resaves byte-identically") {
  const fs::path dir = temp_path("mindshot_io_manifest");
  fs::create_directories(dir);

  RunManifest m;
  m.tool_version = kToolVersion;
  m.config_echo = json{{"seed", 7}, {"output_dir", "runs/t"}};
  StageRecord gen;
  gen.stage = "gen-data";
  gen.outputs = {{"dataset/meta.json", "aa11"}, {"dataset/tuning.msarr", "bb22"}};
  gen.metrics = {{"n_samples", 12.0}};
  m.upsert(gen);
  StageRecord pre;
  pre.stage = "pretrain";
  pre.inputs = {{"dataset/meta.json", "aa11"}};
  pre.outputs = {{"pretrain/encoder.msarr", "cc33"}};
  pre.metrics = {{"final_loss", 0.25}};
  m.upsert(pre);
  m.save(dir);

  CHECK(!fs::exists(dir / "manifest.json.tmp"));
  const RunManifest r = RunManifest::load(dir);
  CHECK(r.tool_version == m.tool_version);
  CHECK(r.config_echo == m.config_echo);
  REQUIRE(r.stages.size() == 2);
  CHECK(r.stages[0].stage == "gen-data");
  CHECK(r.stages[1].stage == "pretrain");
  CHECK(r.stages[0].outputs == gen.outputs);
  CHECK(r.stages[0].metrics == gen.metrics);
  CHECK(r.stages[1].inputs == pre.inputs);
  CHECK(r.stages[1].outputs == pre.outputs);

  const std::string first = slurp(dir / "manifest.json");
  r.save(dir);
  CHECK(slurp(dir / "manifest.json") == first);
}

TEST_CASE("upsert replaces a stage in place") {
  RunManifest m;
  StageRecord a;
  a.stage = "gen-data";
  a.metrics = {{"n_samples", 1.0}};
  m.upsert(a);
  StageRecord b;
  b.stage = "pretrain";
  m.upsert(b);

  a.metrics = {{"n_samples", 2.0}};
  m.upsert(a);
  REQUIRE(m.stages.size() == 2);
  CHECK(m.stages[0].stage == "gen-data");  // position preserved
  CHECK(m.stages[0].metrics.at("n_samples") == 2.0);

  REQUIRE(m.find("pretrain") != nullptr);
  CHECK(m.find("pretrain")->stage == "pretrain");
  CHECK(m.find("nope") == nullptr);
}

TEST_CASE("manifest load failures are artifact errors") {
  CHECK_THROWS_AS(RunManifest::load(temp_path("mindshot_io_manifest_none")), ArtifactError);

  const fs::path dir = temp_path("mindshot_io_manifest_bad");
  fs::create_directories(dir);
  spit(dir / "manifest.json", "{ nope");
  CHECK_THROWS_AS(RunManifest::load(dir), ArtifactError);

  spit(dir / "manifest.json", "{}");  // valid JSON, wrong shape
  CHECK_THROWS_AS(RunManifest::load(dir), ArtifactError);
}

TEST_CASE("record_timing keeps a sidecar and never touches the manifest") {
  const fs::path dir = temp_path("mindshot_io_timing");
  fs::create_directories(dir);
  record_timing(dir, "gen-data", 1.5);
  record_timing(dir, "pretrain", 2.25);
  record_timing(dir, "gen-data", 1.75);  // rerun overwrites its own entry

  std::ifstream in(dir / "timing.json");
  json t;
  in >> t;
  CHECK(t.at("gen-data").get<double>() == 1.75);
  CHECK(t.at("pretrain").get<double>() == 2.25);
  CHECK(!fs::exists(dir / "manifest.json"));

  // a mangled sidecar is replaced, not fatal
  spit(dir / "timing.json", "not json");
  record_timing(dir, "eval", 0.5);
  std::ifstream in2(dir / "timing.json");
  json t2;
  in2 >> t2;
  CHECK(t2.at("eval").get<double>() == 0.5);
  CHECK(t2.size() == 1);
}

TEST_CASE("a minimal config picks up every documented default") {
  const ExperimentConfig c = ExperimentConfig::from_json(json{{"output_dir", "runs/min"}});

  CHECK(c.seed == 0);
  CHECK(c.dataset.seed == 0);
  CHECK(c.dataset.n_classes == 10);
  CHECK(c.dataset.train_per_class == 20);
  CHECK(c.dataset.test_per_class == 10);
  CHECK(c.dataset.n_subjects == 4);
  CHECK(c.dataset.canonical_len == 96);
  CHECK(c.dataset.embedding_dim == 64);
  CHECK(c.dataset.raw_multiple_min == 2);
  CHECK(c.dataset.raw_multiple_max == 8);
  CHECK(c.dataset.stimulus_jitter == 0.15);
  CHECK(c.dataset.noise_sigma == 0.1);

  CHECK(c.hidden_dim == 128);
  CHECK(c.proj_hidden == 128);
  CHECK(c.adapter.voxels == 96);  // follows canonical_len
  CHECK(c.adapter.depth == 1);
  CHECK(c.adapter.residual);

  CHECK(c.pretrain.epochs == 240);
  CHECK(c.pretrain.batch_size == 64);
  CHECK(c.pretrain.lr_max == 3e-4);
  CHECK(c.pretrain.loss.supervision == "none");  // always, regardless of input
  CHECK(c.adapt.epochs == 240);
  CHECK(c.adapt.batch_size == 32);
  CHECK(c.adapt.loss.supervision == "fourier");

  CHECK(c.adapt.loss.weights.softclip == 1.0);
  CHECK(c.adapt.loss.weights.prior == 30.0);
  CHECK(c.adapt.loss.weights.amp == 2.0);
  CHECK(c.adapt.loss.weights.pha == 2.0);
  CHECK(c.adapt.loss.weights.mse == 2.0);
  CHECK(c.adapt.loss.options.tau == 0.1);
  CHECK(!c.adapt.loss.options.wrap_phase_diff);
  CHECK(!c.adapt.loss.options.bidirectional);

  CHECK(c.selection_method == ProjectionMethod::pca);
  CHECK(c.selection_strategy == SelectionStrategy::kda_max);
  CHECK(c.shots == 1);
  CHECK(!c.use_selection);

  const EncoderConfig e = c.encoder_config();
  CHECK(e.input_dim == 96);
  CHECK(e.hidden_dim == 128);
  CHECK(e.embed_dim == 64);
  CHECK(e.proj_hidden == 128);

  CHECK(c.pretrain_subjects() == std::vector<std::string>{"s0", "s1", "s2"});
  CHECK(c.adapt_subject() == "s3");
}

TEST_CASE("unknown config keys name the offending block") {
  const json base{{"output_dir", "runs/x"}};

  auto with = [&](const char* block, json body) {
    json j = base;
    j[block] = std::move(body);
    return j;
  };

  CHECK_THROWS_WITH_AS(ExperimentConfig::from_json(json{{"output_dir", "x"}, {"typo", 1}}),
                       "unknown key 'typo' in the top level", ConfigError);
  CHECK_THROWS_WITH_AS(ExperimentConfig::from_json(with("dataset", json{{"voxels", 3}})),
                       "unknown key 'voxels' in dataset", ConfigError);
  CHECK_THROWS_WITH_AS(ExperimentConfig::from_json(with("model", json{{"depth", 2}})),
                       "unknown key 'depth' in model", ConfigError);
  CHECK_THROWS_WITH_AS(ExperimentConfig::from_json(with("train", json{{"finetune", json::object()}})),
                       "unknown key 'finetune' in train", ConfigError);
  CHECK_THROWS_WITH_AS(
      ExperimentConfig::from_json(
          with("train", json{{"pretrain", json{{"supervision", "mse"}}}})),
      "unknown key 'supervision' in train.pretrain", ConfigError);
  CHECK_THROWS_WITH_AS(ExperimentConfig::from_json(with("loss", json{{"temperature", 0.1}})),
                       "unknown key 'temperature' in loss", ConfigError);
  CHECK_THROWS_WITH_AS(ExperimentConfig::from_json(with("selection", json{{"k", 1}})),
                       "unknown key 'k' in selection", ConfigError);
  CHECK_THROWS_WITH_AS(ExperimentConfig::from_json(with("eval", json{{"metric", "top1"}})),
                       "unknown key 'metric' in eval", ConfigError);
  CHECK_THROWS_WITH_AS(ExperimentConfig::from_json(with("dataset", json(5))),
                       "dataset must be an object", ConfigError);
}

TEST_CASE("config values are type- and range-checked") {
  auto parse = [](json j) {
    j["output_dir"] = "runs/x";
    return ExperimentConfig::from_json(j);
  };

  CHECK_THROWS_WITH_AS(ExperimentConfig::from_json(json::object()), "'output_dir' is required",
                       ConfigError);
  CHECK_THROWS_WITH_AS(parse(json{{"seed", -1}}),
                       "'seed' in the top level must be a nonnegative integer", ConfigError);
  CHECK_THROWS_WITH_AS(
      parse(json{{"train", json{{"pretrain", json{{"epochs", "10"}}}}}}),
      "'epochs' in train.pretrain must be an integer", ConfigError);
  CHECK_THROWS_WITH_AS(parse(json{{"loss", json{{"tau", 0.0}}}}), "'tau' in loss must be positive",
                       ConfigError);
  CHECK_THROWS_WITH_AS(parse(json{{"dataset", json{{"n_subjects", 1}}}}),
                       "dataset.n_subjects must be >= 2", ConfigError);
  CHECK_THROWS_WITH_AS(parse(json{{"eval", json{{"shots", 0}}}}),
                       "'shots' in eval must be at least 1", ConfigError);
  CHECK_THROWS_WITH_AS(parse(json{{"eval", json{{"shots", 21}}}}),
                       "'shots' in eval exceeds train_per_class", ConfigError);
  CHECK_THROWS_WITH_AS(
      parse(json{{"train", json{{"adapt", json{{"supervision", "gradient"}}}}}}),
      "unknown supervision mode: gradient", ConfigError);
  CHECK_THROWS_AS(parse(json{{"selection", json{{"strategy", "best"}}}}), ConfigError);
  CHECK_THROWS_AS(parse(json{{"selection", json{{"method", "umap"}}}}), ConfigError);
  CHECK_THROWS_AS(parse(json{{"train", json{{"adapt", json{{"lr_max", 0.0}}}}}}), ConfigError);
  CHECK_THROWS_AS(parse(json{{"train", json{{"adapt", json{{"batch_size", 1}}}}}}), ConfigError);
  CHECK_THROWS_AS(parse(json{{"model", json{{"adapter_depth", 4}}}}), ConfigError);
  CHECK_THROWS_AS(parse(json{{"model", json{{"adapter_depth", 2}, {"adapter_residual", false}}}}),
                  ConfigError);
}

TEST_CASE("config load reports file problems as config errors") {
  CHECK_THROWS_AS(ExperimentConfig::load(temp_path("mindshot_io_no_config.json").string()),
                  ConfigError);

  const fs::path p = temp_path("mindshot_io_bad_config.json");
  spit(p, "{ nope");
  try {
    ExperimentConfig::load(p.string());
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("not valid JSON") != std::string::npos);
  }
}

TEST_CASE("the config echo is a fixed point of parse and serialize") {
  const json j{
      {"seed", 42},
      {"output_dir", "runs/echo"},
      {"dataset",
       {{"n_classes", 3},
        {"train_per_class", 4},
        {"test_per_class", 2},
        {"n_subjects", 3},
        {"canonical_len", 24},
        {"embedding_dim", 8},
        {"raw_multiple_min", 2},
        {"raw_multiple_max", 3},
        {"stimulus_jitter", 0.2},
        {"noise_sigma", 0.05},
        {"tuning_scale", 1.5},
        {"subject_nonlinearity", 0.1}}},
      {"model",
       {{"hidden_dim", 16}, {"proj_hidden", 12}, {"adapter_depth", 2}, {"adapter_residual", true}}},
      {"train",
       {{"pretrain",
         {{"epochs", 5}, {"batch_size", 4}, {"lr_max", 1e-3}, {"weight_decay", 0.01}}},
        {"adapt",
         {{"epochs", 7},
          {"batch_size", 2},
          {"lr_max", 3e-2},
          {"weight_decay", 0.0},
          {"supervision", "mse"}}}}},
      {"loss",
       {{"tau", 0.2},
        {"w_softclip", 1.5},
        {"w_prior", 10.0},
        {"w_amp", 1.0},
        {"w_pha", 0.5},
        {"w_mse", 0.25},
        {"wrap_phase", true},
        {"bidirectional", true}}},
      {"selection", {{"method", "tsne"}, {"strategy", "kda_min"}}},
      {"eval", {{"shots", 2}, {"use_selection", true}}},
  };

  const ExperimentConfig c = ExperimentConfig::from_json(j);
  CHECK(c.adapter.voxels == 24);
  CHECK(c.dataset.seed == 42);
  CHECK(c.pretrain.loss.supervision == "none");
  CHECK(c.pretrain.loss.weights.prior == 10.0);  // loss block feeds both phases
  CHECK(c.pretrain.loss.options.tau == 0.2);
  CHECK(c.adapt.loss.options.wrap_phase_diff);

  const json echo = c.to_json();
  CHECK(echo == j);  // every field was pinned above, so the echo is exact
  CHECK(ExperimentConfig::from_json(echo).to_json() == echo);
}

TEST_CASE("dataset serialization round-trips bit-exactly") {
  DatasetConfig dc;
  dc.n_classes = 3;
  dc.train_per_class = 2;
  dc.test_per_class = 1;
  dc.n_subjects = 2;
  dc.canonical_len = 16;
  dc.embedding_dim = 6;
  dc.raw_multiple_min = 2;
  dc.raw_multiple_max = 3;
  dc.noise_sigma = 0.05;
  dc.seed = 77;
  const Dataset d = build_dataset(dc);

  const fs::path dir = temp_path("mindshot_io_dataset");
  save_dataset(d, dc, dir);
  for (const char* rel : {"meta.json", "tuning.msarr", "prototypes.msarr", "embeddings.msarr",
                          "subjects/s0/voxels.msarr", "subjects/s1/gain_profile.msarr",
                          "subjects/s1/bias.msarr"})
    CHECK(fs::exists(dir / rel));

  const Dataset r = load_dataset(dir);
  CHECK(same_bits(r.tuning, d.tuning));
  CHECK(same_bits(r.stimulus_set.prototypes, d.stimulus_set.prototypes));
  CHECK(r.stimulus_set.n_classes == d.stimulus_set.n_classes);

  REQUIRE(r.stimulus_set.stimuli.size() == d.stimulus_set.stimuli.size());
  for (std::size_t i = 0; i < d.stimulus_set.stimuli.size(); ++i) {
    CHECK(r.stimulus_set.stimuli[i].id == d.stimulus_set.stimuli[i].id);
    CHECK(r.stimulus_set.stimuli[i].class_id == d.stimulus_set.stimuli[i].class_id);
    CHECK(same_bits(r.stimulus_set.stimuli[i].embedding, d.stimulus_set.stimuli[i].embedding));
  }

  REQUIRE(r.subjects.size() == d.subjects.size());
  for (std::size_t i = 0; i < d.subjects.size(); ++i) {
    const SubjectProfile &a = d.subjects[i], &b = r.subjects[i];
    CHECK(b.subject_id == a.subject_id);
    CHECK(b.raw_multiple == a.raw_multiple);
    CHECK(b.raw_len == a.raw_len);
    CHECK(same_bits(b.gain, a.gain));
    CHECK(same_bits(b.noise_sigma, a.noise_sigma));
    CHECK(same_bits(b.hrf.peak_delay, a.hrf.peak_delay));
    CHECK(same_bits(b.hrf.undershoot_delay, a.hrf.undershoot_delay));
    CHECK(same_bits(b.hrf.peak_dispersion, a.hrf.peak_dispersion));
    CHECK(same_bits(b.hrf.undershoot_dispersion, a.hrf.undershoot_dispersion));
    CHECK(same_bits(b.hrf.undershoot_ratio, a.hrf.undershoot_ratio));
    CHECK(same_bits(b.gain_profile, a.gain_profile));
    CHECK(same_bits(b.bias, a.bias));
  }

  // samples may be reordered on load; match them by (subject, stimulus)
  REQUIRE(r.samples.size() == d.samples.size());
  std::map<std::pair<int, int>, const DatasetSample*> loaded;
  for (const DatasetSample& s : r.samples) loaded[{s.subject_index, s.stimulus_index}] = &s;
  REQUIRE(loaded.size() == d.samples.size());
  for (const DatasetSample& s : d.samples) {
    const DatasetSample* t = loaded.at({s.subject_index, s.stimulus_index});
    CHECK(t->split == s.split);
    CHECK(t->voxels.subject_id == s.voxels.subject_id);
    CHECK(t->voxels.stimulus_id == s.voxels.stimulus_id);
    CHECK(t->voxels.class_id == s.voxels.class_id);
    CHECK(same_bits(t->voxels.values, s.voxels.values));
  }
  for (const SubjectProfile& s : d.subjects) {
    CHECK(r.sample_indices(r.subject_index_of(s.subject_id), Split::train).size() ==
          d.sample_indices(d.subject_index_of(s.subject_id), Split::train).size());
    CHECK(r.sample_indices(r.subject_index_of(s.subject_id), Split::test).size() ==
          d.sample_indices(d.subject_index_of(s.subject_id), Split::test).size());
  }

  // a second save of the loaded dataset is byte-identical file for file
  const fs::path dir2 = temp_path("mindshot_io_dataset2");
  save_dataset(r, dc, dir2);
  for (const char* rel : {"meta.json", "tuning.msarr", "prototypes.msarr", "embeddings.msarr",
                          "subjects/s0/gain_profile.msarr", "subjects/s0/bias.msarr",
                          "subjects/s0/voxels.msarr", "subjects/s1/voxels.msarr"})
    CHECK(slurp(dir2 / rel) == slurp(dir / rel));
}

TEST_CASE("load_dataset flags tampered artifacts") {
  DatasetConfig dc;
  dc.n_classes = 2;
  dc.train_per_class = 2;
  dc.test_per_class = 1;
  dc.n_subjects = 2;
  dc.canonical_len = 12;
  dc.embedding_dim = 4;
  dc.raw_multiple_min = 2;
  dc.raw_multiple_max = 2;
  dc.seed = 5;
  const fs::path dir = temp_path("mindshot_io_dataset_bad");
  save_dataset(build_dataset(dc), dc, dir);

  CHECK_THROWS_AS(load_dataset(temp_path("mindshot_io_dataset_none")), ArtifactError);

  const Matrix wrong = Matrix::Zero(2, 2);
  write_msarr(dir / "subjects" / "s0" / "voxels.msarr", wrong);
  CHECK_THROWS_AS(load_dataset(dir), ArtifactError);

  spit(dir / "meta.json", "{ nope");
  CHECK_THROWS_AS(load_dataset(dir), ArtifactError);
}
