#include "mindshot/pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <set>

#include "mindshot/hash.hpp"
#include "mindshot/msarr.hpp"
#include "mindshot/spectral.hpp"

namespace mindshot {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ArtifactError("cannot read: " + path.string());
  try {
    json j;
    in >> j;
    return j;
  } catch (const json::exception& e) {
    throw ArtifactError("corrupt JSON artifact " + path.string() + ": " + e.what());
  }
}

void write_json_file(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ArtifactError("cannot open for writing: " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw ArtifactError("write failed: " + path.string());
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void validate_supervision(const std::string& s) {
  if (s != "none" && s != "mse" && s != "amp" && s != "fourier")
    throw ConfigError("unknown supervision mode: " + s);
}

void validate_tag(const std::string& tag) {
  if (tag.empty()) throw ConfigError("adapt tag must not be empty");
  for (char c : tag)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-'))
      throw ConfigError("adapt tag may only use letters, digits, '_' and '-': " + tag);
}

std::vector<std::string> dataset_files(const Dataset& data) {
  std::vector<std::string> out = {"dataset/meta.json", "dataset/tuning.msarr",
                                  "dataset/prototypes.msarr", "dataset/embeddings.msarr"};
  for (const SubjectProfile& s : data.subjects) {
    out.push_back("dataset/subjects/" + s.subject_id + "/gain_profile.msarr");
    out.push_back("dataset/subjects/" + s.subject_id + "/bias.msarr");
    out.push_back("dataset/subjects/" + s.subject_id + "/voxels.msarr");
  }
  return out;
}

RunManifest load_manifest_checked(const ExperimentConfig& cfg) {
  RunManifest m = RunManifest::load(cfg.output_dir);
  if (m.config_echo != cfg.to_json())
    throw ArtifactError(
        "the manifest in " + cfg.output_dir +
        " was produced by a different config; rerun gen-data or use a fresh output_dir");
  return m;
}

const StageRecord* find_producer(const RunManifest& m, const std::string& relpath) {
  for (const StageRecord& r : m.stages)
    if (r.outputs.count(relpath)) return &r;
  return nullptr;
}

std::vector<std::string> recorded_outputs(const RunManifest& m, const std::string& stage) {
  const StageRecord* rec = m.find(stage);
  if (!rec)
    throw ArtifactError("stage '" + stage + "' has not run yet; run it before this stage");
  std::vector<std::string> out;
  for (const auto& [path, checksum] : rec->outputs) out.push_back(path);
  return out;
}

std::map<std::string, std::string> verify_inputs(const RunManifest& m, const fs::path& run,
                                                 const std::vector<std::string>& relpaths,
                                                 bool force) {
  std::map<std::string, std::string> inputs;
  for (const std::string& p : relpaths) {
    if (!fs::exists(run / p))
      throw ArtifactError("missing artifact " + p + "; run the stage that produces it");
    const std::string checksum = file_checksum_hex(run / p);
    const StageRecord* producer = find_producer(m, p);
    if (!producer) {
      if (!force)
        throw ArtifactError("artifact " + p +
                            " is not recorded in the manifest; rerun upstream stages "
                            "or pass --force");
    } else if (producer->outputs.at(p) != checksum && !force) {
      throw ArtifactError("artifact " + p + " no longer matches the checksum stage '" +
                          producer->stage + "' recorded; rerun it or pass --force");
    }
    inputs[p] = checksum;
  }
  return inputs;
}

void checksum_outputs(StageRecord& rec, const fs::path& run,
                      const std::vector<std::string>& relpaths) {
  for (const std::string& p : relpaths) rec.outputs[p] = file_checksum_hex(run / p);
}

void commit_stage(const ExperimentConfig& cfg, RunManifest& m, StageRecord rec,
                  Clock::time_point t0) {
  const std::string stage = rec.stage;
  m.upsert(std::move(rec));
  m.save(cfg.output_dir);
  record_timing(cfg.output_dir, stage, seconds_since(t0));
}

// True when the stage has run under this config and its outputs are intact.
bool stage_current(const ExperimentConfig& cfg, const std::string& stage) {
  if (!fs::exists(fs::path(cfg.output_dir) / "manifest.json")) return false;
  RunManifest m;
  try {
    m = RunManifest::load(cfg.output_dir);
  } catch (const ArtifactError&) {
    return false;
  }
  if (m.config_echo != cfg.to_json()) return false;
  const StageRecord* rec = m.find(stage);
  if (!rec) return false;
  for (const auto& [path, checksum] : rec->outputs) {
    const fs::path full = fs::path(cfg.output_dir) / path;
    if (!fs::exists(full) || file_checksum_hex(full) != checksum) return false;
  }
  return true;
}

json hrf_to_json(const HRFParams& p) {
  return {{"peak_delay", p.peak_delay},
          {"undershoot_delay", p.undershoot_delay},
          {"peak_dispersion", p.peak_dispersion},
          {"undershoot_dispersion", p.undershoot_dispersion},
          {"undershoot_ratio", p.undershoot_ratio}};
}

HRFParams hrf_from_json(const json& j) {
  HRFParams p;
  p.peak_delay = j.at("peak_delay").get<double>();
  p.undershoot_delay = j.at("undershoot_delay").get<double>();
  p.peak_dispersion = j.at("peak_dispersion").get<double>();
  p.undershoot_dispersion = j.at("undershoot_dispersion").get<double>();
  p.undershoot_ratio = j.at("undershoot_ratio").get<double>();
  return p;
}

}  // namespace

void save_dataset(const Dataset& data, const DatasetConfig& cfg, const fs::path& dir) {
  fs::create_directories(dir);
  json meta;
  meta["config"] = {{"n_classes", cfg.n_classes},
                    {"train_per_class", cfg.train_per_class},
                    {"test_per_class", cfg.test_per_class},
                    {"n_subjects", cfg.n_subjects},
                    {"canonical_len", cfg.canonical_len},
                    {"embedding_dim", cfg.embedding_dim},
                    {"raw_multiple_min", cfg.raw_multiple_min},
                    {"raw_multiple_max", cfg.raw_multiple_max},
                    {"stimulus_jitter", cfg.stimulus_jitter},
                    {"noise_sigma", cfg.noise_sigma},
                    {"tuning_scale", cfg.tuning_scale},
                    {"subject_nonlinearity", cfg.subject_nonlinearity},
                    {"seed", cfg.seed}};
  meta["subjects"] = json::array();
  for (const SubjectProfile& s : data.subjects)
    meta["subjects"].push_back({{"id", s.subject_id},
                                {"raw_multiple", s.raw_multiple},
                                {"raw_len", s.raw_len},
                                {"gain", s.gain},
                                {"noise_sigma", s.noise_sigma},
                                {"hrf", hrf_to_json(s.hrf)}});
  meta["stimuli"] = json::array();
  const int n_stimuli = static_cast<int>(data.stimulus_set.stimuli.size());
  std::vector<const DatasetSample*> by_slot(data.samples.size(), nullptr);
  for (const DatasetSample& s : data.samples)
    by_slot[static_cast<size_t>(s.subject_index) * n_stimuli + s.stimulus_index] = &s;
  for (int j = 0; j < n_stimuli; ++j) {
    const Stimulus& st = data.stimulus_set.stimuli[static_cast<size_t>(j)];
    const DatasetSample* sample = by_slot[static_cast<size_t>(j)];  // subject 0's copy
    if (!sample) throw ArtifactError("dataset is not subject-complete; cannot serialize");
    meta["stimuli"].push_back({{"id", st.id},
                               {"class_id", st.class_id},
                               {"split", sample->split == Split::train ? "train" : "test"}});
  }
  write_json_file(dir / "meta.json", meta);

  write_msarr(dir / "tuning.msarr", data.tuning);
  write_msarr(dir / "prototypes.msarr", data.stimulus_set.prototypes);
  Matrix embeddings(n_stimuli, data.tuning.cols());
  for (int j = 0; j < n_stimuli; ++j)
    embeddings.row(j) = data.stimulus_set.stimuli[static_cast<size_t>(j)].embedding.transpose();
  write_msarr(dir / "embeddings.msarr", embeddings);

  for (size_t i = 0; i < data.subjects.size(); ++i) {
    const SubjectProfile& s = data.subjects[i];
    const fs::path sdir = dir / "subjects" / s.subject_id;
    fs::create_directories(sdir);
    write_msarr(sdir / "gain_profile.msarr", s.gain_profile);
    write_msarr(sdir / "bias.msarr", s.bias);
    Matrix voxels(n_stimuli, s.raw_len);
    for (int j = 0; j < n_stimuli; ++j) {
      const DatasetSample* sample = by_slot[i * static_cast<size_t>(n_stimuli) + j];
      if (!sample) throw ArtifactError("dataset is not subject-complete; cannot serialize");
      voxels.row(j) = sample->voxels.values.transpose();
    }
    write_msarr(sdir / "voxels.msarr", voxels);
  }
}

Dataset load_dataset(const fs::path& dir) {
  const json meta = read_json_file(dir / "meta.json");
  Dataset data;
  try {
    data.tuning = read_msarr(dir / "tuning.msarr").as_matrix();
    data.stimulus_set.prototypes = read_msarr(dir / "prototypes.msarr").as_matrix();
    data.stimulus_set.n_classes = meta.at("config").at("n_classes").get<int>();
    const Matrix embeddings = read_msarr(dir / "embeddings.msarr").as_matrix();

    std::vector<Split> splits;
    for (const json& sj : meta.at("stimuli")) {
      Stimulus st;
      st.id = sj.at("id").get<std::string>();
      st.class_id = sj.at("class_id").get<int>();
      const Index row = static_cast<Index>(data.stimulus_set.stimuli.size());
      if (row >= embeddings.rows())
        throw ArtifactError("dataset meta lists more stimuli than embeddings.msarr holds");
      st.embedding = embeddings.row(row).transpose();
      splits.push_back(sj.at("split").get<std::string>() == "train" ? Split::train : Split::test);
      data.stimulus_set.stimuli.push_back(std::move(st));
    }
    const int n_stimuli = static_cast<int>(data.stimulus_set.stimuli.size());

    for (const json& sj : meta.at("subjects")) {
      SubjectProfile s;
      s.subject_id = sj.at("id").get<std::string>();
      s.raw_multiple = sj.at("raw_multiple").get<int>();
      s.raw_len = sj.at("raw_len").get<Index>();
      s.gain = sj.at("gain").get<double>();
      s.noise_sigma = sj.at("noise_sigma").get<double>();
      s.hrf = hrf_from_json(sj.at("hrf"));
      const fs::path sdir = dir / "subjects" / s.subject_id;
      s.gain_profile = read_msarr(sdir / "gain_profile.msarr").as_vector();
      s.bias = read_msarr(sdir / "bias.msarr").as_vector();
      data.subjects.push_back(std::move(s));
    }

    for (size_t i = 0; i < data.subjects.size(); ++i) {
      const SubjectProfile& s = data.subjects[i];
      const Matrix voxels = read_msarr(dir / "subjects" / s.subject_id / "voxels.msarr").as_matrix();
      if (voxels.rows() != n_stimuli || voxels.cols() != s.raw_len)
        throw ArtifactError("voxel matrix shape disagrees with the dataset meta for " +
                            s.subject_id);
      for (int j = 0; j < n_stimuli; ++j) {
        DatasetSample sample;
        sample.subject_index = static_cast<int>(i);
        sample.stimulus_index = j;
        sample.split = splits[static_cast<size_t>(j)];
        sample.voxels.subject_id = s.subject_id;
        sample.voxels.stimulus_id = data.stimulus_set.stimuli[static_cast<size_t>(j)].id;
        sample.voxels.class_id = data.stimulus_set.stimuli[static_cast<size_t>(j)].class_id;
        sample.voxels.values = voxels.row(j).transpose();
        data.samples.push_back(std::move(sample));
      }
    }
  } catch (const json::exception& e) {
    throw ArtifactError("corrupt dataset meta under " + dir.string() + ": " + e.what());
  }
  return data;
}

void run_gen_data(const ExperimentConfig& cfg, const StageOptions&) {
  const auto t0 = Clock::now();
  const fs::path run(cfg.output_dir);
  fs::create_directories(run);

  RunManifest m;
  m.config_echo = cfg.to_json();
  if (fs::exists(run / "manifest.json")) {
    try {
      RunManifest old = RunManifest::load(run);
      if (old.config_echo == m.config_echo) m = std::move(old);
      // A different config starts the chain over with a fresh manifest.
    } catch (const ArtifactError&) {
    }
  }

  const Dataset data = build_dataset(cfg.dataset);
  save_dataset(data, cfg.dataset, run / "dataset");

  StageRecord rec;
  rec.stage = "gen-data";
  checksum_outputs(rec, run, dataset_files(data));
  rec.metrics["n_subjects"] = static_cast<double>(data.subjects.size());
  rec.metrics["n_stimuli"] = static_cast<double>(data.stimulus_set.stimuli.size());
  rec.metrics["n_samples"] = static_cast<double>(data.samples.size());

  std::uint64_t combined = 0xcbf29ce484222325ULL;
  for (const auto& [path, checksum] : rec.outputs) {
    const std::string line = path + "=" + checksum + "\n";
    combined = fnv1a64(line.data(), line.size(), combined);
  }
  std::printf("gen-data: %zu subjects, %zu stimuli, %zu samples, checksum %s\n",
              data.subjects.size(), data.stimulus_set.stimuli.size(), data.samples.size(),
              hex64(combined).c_str());
  commit_stage(cfg, m, std::move(rec), t0);
}

void run_pretrain(const ExperimentConfig& cfg, const StageOptions& opt) {
  const auto t0 = Clock::now();
  const fs::path run(cfg.output_dir);
  RunManifest m = load_manifest_checked(cfg);

  StageRecord rec;
  rec.stage = "pretrain";
  rec.inputs = verify_inputs(m, run, recorded_outputs(m, "gen-data"), opt.force);

  const Dataset data = load_dataset(run / "dataset");
  TrainConfig tc = cfg.pretrain;
  tc.loss.supervision = "none";
  tc.seed = mix_seed(cfg.seed, 0x9e7a11);
  PretrainResult result = pretrain(data, cfg.pretrain_subjects(), cfg.encoder_config(), tc);

  fs::create_directories(run / "pretrain");
  save_params(run / "pretrain" / "encoder.msarr", trainable_tensors(result.encoder));
  result.log.write_csv((run / "pretrain" / "train_log.csv").string());
  checksum_outputs(rec, run, {"pretrain/encoder.msarr", "pretrain/train_log.csv"});
  rec.metrics["steps"] = static_cast<double>(result.log.rows.size());
  rec.metrics["final_total"] = result.log.rows.back().total;

  std::printf("pretrain: %zu steps, final loss %.6f, params %lld\n", result.log.rows.size(),
              result.log.rows.back().total,
              static_cast<long long>(count_params(result.encoder)));
  commit_stage(cfg, m, std::move(rec), t0);
}

namespace {

struct ResolvedVariant {
  std::string tag;
  std::string supervision;
  int shots = 1;
  bool use_selection = false;
  std::string strategy;  // meaningful only when use_selection
  AdapterConfig adapter;
};

ResolvedVariant resolve_variant(const ExperimentConfig& cfg, const AdaptVariant& v) {
  ResolvedVariant r;
  r.tag = v.tag;
  validate_tag(r.tag);
  r.supervision = v.supervision.empty() ? cfg.adapt.loss.supervision : v.supervision;
  validate_supervision(r.supervision);
  r.shots = v.shots > 0 ? v.shots : cfg.shots;
  if (r.shots > cfg.dataset.train_per_class)
    throw ConfigError("shots exceed train_per_class");
  r.use_selection = v.use_selection || cfg.use_selection;
  if (r.use_selection) {
    if (v.shots > 1) throw ConfigError("selection-based adaptation is one-shot only");
    r.shots = 1;
    const std::string s =
        v.selection_strategy.empty() ? to_string(cfg.selection_strategy) : v.selection_strategy;
    strategy_from_string(s);  // validates
    r.strategy = s;
  }
  r.adapter = v.adapter.value_or(cfg.adapter);
  r.adapter.voxels = cfg.dataset.canonical_len;
  r.adapter.validate();
  return r;
}

Encoder load_encoder(const ExperimentConfig& cfg, const fs::path& run) {
  Encoder enc = make_encoder(cfg.encoder_config(), 0);
  load_params((run / "pretrain" / "encoder.msarr").string(), trainable_tensors(enc));
  return enc;
}

std::vector<std::pair<int, std::string>> read_selection_choices(const fs::path& path) {
  const json j = read_json_file(path);
  std::vector<std::pair<int, std::string>> chosen;
  try {
    for (const json& c : j.at("classes"))
      chosen.emplace_back(c.at("class_id").get<int>(), c.at("chosen").get<std::string>());
  } catch (const json::exception& e) {
    throw ArtifactError("corrupt selection file " + path.string() + ": " + e.what());
  }
  return chosen;
}

}  // namespace

void run_adapt(const ExperimentConfig& cfg, const AdaptVariant& variant, const StageOptions& opt) {
  const auto t0 = Clock::now();
  const fs::path run(cfg.output_dir);
  RunManifest m = load_manifest_checked(cfg);
  const ResolvedVariant v = resolve_variant(cfg, variant);

  std::vector<std::string> input_paths = recorded_outputs(m, "gen-data");
  input_paths.push_back("pretrain/encoder.msarr");
  const std::string selection_path = "select/" + v.strategy + "/selection.json";
  if (v.use_selection) input_paths.push_back(selection_path);

  StageRecord rec;
  rec.stage = "adapt/" + v.tag;
  rec.inputs = verify_inputs(m, run, input_paths, opt.force);

  const Dataset data = load_dataset(run / "dataset");
  const std::string subject = cfg.adapt_subject();
  const Dataset subset =
      v.use_selection
          ? selection_subset(data, subject, read_selection_choices(run / selection_path))
          : few_shot_subset(data, subject, v.shots);

  Encoder enc = load_encoder(cfg, run);
  TrainConfig tc = cfg.adapt;
  tc.loss.supervision = v.supervision;
  tc.seed = mix_seed(cfg.seed, 0x4da9);
  AdaptResult result = adapt(subset, subject, cfg.pretrain_subjects(), enc, v.adapter, tc);

  const fs::path dir = run / "adapt" / v.tag;
  fs::create_directories(dir);
  save_params((dir / "adapter.msarr").string(), trainable_tensors(result.adapter));
  result.log.write_csv((dir / "train_log.csv").string());
  write_json_file(dir / "adapt_meta.json",
                  {{"tag", v.tag},
                   {"supervision", v.supervision},
                   {"shots", v.shots},
                   {"use_selection", v.use_selection},
                   {"selection_strategy", v.strategy},
                   {"adapter_depth", v.adapter.depth},
                   {"adapter_residual", v.adapter.residual}});

  const int n_anchors = static_cast<int>(
      subset.sample_indices(subset.subject_index_of(subject), Split::train).size());
  checksum_outputs(rec, run,
                   {"adapt/" + v.tag + "/adapter.msarr", "adapt/" + v.tag + "/train_log.csv",
                    "adapt/" + v.tag + "/adapt_meta.json"});
  rec.metrics["steps"] = static_cast<double>(result.log.rows.size());
  rec.metrics["final_total"] = result.log.rows.back().total;
  rec.metrics["n_anchors"] = n_anchors;

  std::printf("adapt/%s: %d anchors, %zu steps, supervision %s, final loss %.6f\n", v.tag.c_str(),
              n_anchors, result.log.rows.size(), v.supervision.c_str(),
              result.log.rows.back().total);
  commit_stage(cfg, m, std::move(rec), t0);
}

void run_select(const ExperimentConfig& cfg, SelectionStrategy strategy, const StageOptions& opt) {
  const auto t0 = Clock::now();
  const fs::path run(cfg.output_dir);
  RunManifest m = load_manifest_checked(cfg);
  const std::string tag = to_string(strategy);

  StageRecord rec;
  rec.stage = "select/" + tag;
  rec.inputs = verify_inputs(m, run, recorded_outputs(m, "gen-data"), opt.force);

  const Dataset data = load_dataset(run / "dataset");
  const Index L = cfg.dataset.canonical_len;
  const std::vector<std::string> sources = cfg.pretrain_subjects();

  // Index samples by (subject, stimulus) so the per-stimulus mean over the
  // pretrained subjects is cheap to assemble.
  const int n_stimuli = static_cast<int>(data.stimulus_set.stimuli.size());
  std::vector<const DatasetSample*> by_slot(data.samples.size(), nullptr);
  for (const DatasetSample& s : data.samples)
    by_slot[static_cast<size_t>(s.subject_index) * n_stimuli + s.stimulus_index] = &s;

  std::map<int, std::vector<PooledVoxels>> per_class;
  for (int j = 0; j < n_stimuli; ++j) {
    const DatasetSample* first = by_slot[static_cast<size_t>(j)];
    if (!first || first->split != Split::train) continue;
    Vector mean = Vector::Zero(L);
    for (const std::string& id : sources) {
      const int si = data.subject_index_of(id);
      const DatasetSample* s = by_slot[static_cast<size_t>(si) * n_stimuli + j];
      if (!s) throw ArtifactError("dataset is missing a sample for subject " + id);
      mean += adaptive_max_pool(s->voxels.values, L);
    }
    mean /= static_cast<double>(sources.size());
    PooledVoxels pv;
    pv.values = std::move(mean);
    pv.subject_id = "mean";
    pv.stimulus_id = data.stimulus_set.stimuli[static_cast<size_t>(j)].id;
    pv.class_id = data.stimulus_set.stimuli[static_cast<size_t>(j)].class_id;
    per_class[pv.class_id].push_back(std::move(pv));
  }

  json classes = json::array();
  for (const auto& [class_id, samples] : per_class) {
    const ClassDensityModel model =
        fit_class_density(class_id, samples, cfg.selection_method,
                          mix_seed(cfg.seed, 0x15e7, static_cast<std::uint64_t>(class_id)));
    const std::string chosen = select_stimulus(
        model, strategy, mix_seed(cfg.seed, 0xd1ce, static_cast<std::uint64_t>(class_id)));
    json coords = json::array();
    for (Index i = 0; i < model.coordinates.size(); ++i) coords.push_back(model.coordinates[i]);
    classes.push_back({{"class_id", class_id},
                       {"method", to_string(model.method)},
                       {"chosen", chosen},
                       {"mean", model.mean},
                       {"std", model.std_dev},
                       {"stimulus_ids", model.stimulus_ids},
                       {"coordinates", coords}});
  }

  const fs::path dir = run / "select" / tag;
  fs::create_directories(dir);
  write_json_file(dir / "selection.json", {{"method", to_string(cfg.selection_method)},
                                           {"strategy", tag},
                                           {"classes", classes}});
  checksum_outputs(rec, run, {"select/" + tag + "/selection.json"});
  rec.metrics["n_classes"] = static_cast<double>(per_class.size());

  std::printf("select/%s: %zu classes, method %s\n", tag.c_str(), per_class.size(),
              to_string(cfg.selection_method).c_str());
  commit_stage(cfg, m, std::move(rec), t0);
}

EvalReport run_eval(const ExperimentConfig& cfg, const std::string& tag, const StageOptions& opt) {
  const auto t0 = Clock::now();
  const fs::path run(cfg.output_dir);
  RunManifest m = load_manifest_checked(cfg);
  validate_tag(tag);

  std::vector<std::string> input_paths = recorded_outputs(m, "gen-data");
  input_paths.push_back("pretrain/encoder.msarr");
  input_paths.push_back("adapt/" + tag + "/adapter.msarr");
  input_paths.push_back("adapt/" + tag + "/adapt_meta.json");

  StageRecord rec;
  rec.stage = "eval/" + tag;
  rec.inputs = verify_inputs(m, run, input_paths, opt.force);

  const json meta = read_json_file(run / "adapt" / tag / "adapt_meta.json");
  AdapterConfig ac;
  std::string supervision;
  int shots = 0;
  bool use_selection = false;
  std::string strategy;
  try {
    ac.depth = meta.at("adapter_depth").get<int>();
    ac.residual = meta.at("adapter_residual").get<bool>();
    supervision = meta.at("supervision").get<std::string>();
    shots = meta.at("shots").get<int>();
    use_selection = meta.at("use_selection").get<bool>();
    strategy = meta.at("selection_strategy").get<std::string>();
  } catch (const json::exception& e) {
    throw ArtifactError("corrupt adapt meta for tag " + tag + ": " + e.what());
  }
  ac.voxels = cfg.dataset.canonical_len;

  const Dataset data = load_dataset(run / "dataset");
  Encoder enc = load_encoder(cfg, run);
  Adapter adapter = make_adapter(ac, 0);
  load_params((run / "adapt" / tag / "adapter.msarr").string(), trainable_tensors(adapter));

  const int subject = data.subject_index_of(cfg.adapt_subject());
  const std::vector<int> test_indices = data.sample_indices(subject, Split::test);
  if (test_indices.empty()) throw ArtifactError("no test samples for the adaptation subject");

  EvalInputs in;
  const Index n = static_cast<Index>(test_indices.size());
  in.pred.resize(n, cfg.dataset.embedding_dim);
  in.targets.resize(n, cfg.dataset.embedding_dim);
  Matrix pooled(n, ac.voxels);
  std::vector<int> stimulus_of(static_cast<size_t>(n));
  std::set<int> gallery_stimuli;
  for (Index r = 0; r < n; ++r) {
    const DatasetSample& s = data.samples[static_cast<size_t>(test_indices[static_cast<size_t>(r)])];
    pooled.row(r) = adaptive_max_pool(s.voxels.values, ac.voxels).transpose();
    in.targets.row(r) =
        data.stimulus_set.stimuli[static_cast<size_t>(s.stimulus_index)].embedding.transpose();
    in.class_ids.push_back(s.voxels.class_id);
    stimulus_of[static_cast<size_t>(r)] = s.stimulus_index;
    gallery_stimuli.insert(s.stimulus_index);
  }
  std::map<int, int> gallery_row;
  in.gallery.resize(static_cast<Index>(gallery_stimuli.size()), cfg.dataset.embedding_dim);
  Index g = 0;
  for (int stim : gallery_stimuli) {
    in.gallery.row(g) = data.stimulus_set.stimuli[static_cast<size_t>(stim)].embedding.transpose();
    gallery_row[stim] = static_cast<int>(g++);
  }
  for (Index r = 0; r < n; ++r)
    in.gallery_index.push_back(gallery_row.at(stimulus_of[static_cast<size_t>(r)]));

  Matrix e_refined;
  enc.forward(adapter.forward(pooled), nullptr, &e_refined);
  in.pred = e_refined;
  const EvalReport report = build_report(in);

  const fs::path dir = run / "eval" / tag;
  fs::create_directories(dir);
  json per_class = json::array();
  for (const ClassMetrics& c : report.per_class)
    per_class.push_back({{"class_id", c.class_id},
                         {"n", c.n},
                         {"top1", c.top1},
                         {"mean_cosine", c.mean_cosine}});
  write_json_file(dir / "eval_report.json", {{"tag", tag},
                                             {"supervision", supervision},
                                             {"shots", shots},
                                             {"use_selection", use_selection},
                                             {"selection_strategy", strategy},
                                             {"two_way_accuracy", report.two_way_accuracy},
                                             {"top1", report.top1},
                                             {"top5", report.top5},
                                             {"mean_cosine", report.mean_cosine},
                                             {"n_test", report.n_test},
                                             {"per_class", per_class}});
  checksum_outputs(rec, run, {"eval/" + tag + "/eval_report.json"});
  rec.metrics["two_way_accuracy"] = report.two_way_accuracy;
  rec.metrics["top1"] = report.top1;
  rec.metrics["top5"] = report.top5;
  rec.metrics["mean_cosine"] = report.mean_cosine;

  std::printf("eval/%s: two_way %.4f, top1 %.4f, top5 %.4f, cosine %.4f (%d items)\n",
              tag.c_str(), report.two_way_accuracy, report.top1, report.top5, report.mean_cosine,
              report.n_test);
  commit_stage(cfg, m, std::move(rec), t0);
  return report;
}

namespace {

struct ReportRow {
  std::string tag;
  std::string supervision;
  int shots = 0;
  bool use_selection = false;
  std::string strategy;
  double two_way = 0.0, top1 = 0.0, top5 = 0.0, mean_cosine = 0.0;
};

ReportRow parse_report(const fs::path& path) {
  const json j = read_json_file(path);
  ReportRow r;
  try {
    r.tag = j.at("tag").get<std::string>();
    r.supervision = j.at("supervision").get<std::string>();
    r.shots = j.at("shots").get<int>();
    r.use_selection = j.at("use_selection").get<bool>();
    r.strategy = j.at("selection_strategy").get<std::string>();
    r.two_way = j.at("two_way_accuracy").get<double>();
    r.top1 = j.at("top1").get<double>();
    r.top5 = j.at("top5").get<double>();
    r.mean_cosine = j.at("mean_cosine").get<double>();
  } catch (const json::exception& e) {
    throw ArtifactError("corrupt eval report " + path.string() + ": " + e.what());
  }
  return r;
}

void write_csv(const fs::path& path, const std::string& header,
               const std::vector<std::string>& lines) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ArtifactError("cannot open for writing: " + path.string());
  out << header << '\n';
  for (const std::string& l : lines) out << l << '\n';
  if (!out) throw ArtifactError("write failed: " + path.string());
}

std::string metrics_csv(const ReportRow& r) {
  return format_double(r.two_way) + "," + format_double(r.top1) + "," + format_double(r.top5) +
         "," + format_double(r.mean_cosine);
}

}  // namespace

void run_report(const ExperimentConfig& cfg, const StageOptions& opt) {
  const auto t0 = Clock::now();
  const fs::path run(cfg.output_dir);
  RunManifest m = load_manifest_checked(cfg);

  std::vector<std::string> report_paths;
  for (const StageRecord& r : m.stages)
    if (r.stage.rfind("eval/", 0) == 0) report_paths.push_back(r.stage + "/eval_report.json");
  if (report_paths.empty())
    throw ArtifactError("nothing to report: no eval stage has run in " + cfg.output_dir);

  StageRecord rec;
  rec.stage = "report";
  rec.inputs = verify_inputs(m, run, report_paths, opt.force);

  std::vector<ReportRow> rows;
  for (const std::string& p : report_paths) rows.push_back(parse_report(run / p));
  std::sort(rows.begin(), rows.end(),
            [](const ReportRow& a, const ReportRow& b) { return a.tag < b.tag; });

  fs::create_directories(run / "tables");
  std::vector<std::string> outputs;

  std::vector<std::string> all_lines;
  for (const ReportRow& r : rows)
    all_lines.push_back(r.tag + "," + r.supervision + "," + std::to_string(r.shots) + "," +
                        (r.use_selection ? r.strategy : std::string("-")) + "," + metrics_csv(r));
  write_csv(run / "tables" / "runs.csv",
            "tag,supervision,shots,selection,two_way,top1,top5,mean_cosine", all_lines);
  outputs.push_back("tables/runs.csv");

  auto find_tag = [&](const std::string& tag) -> const ReportRow* {
    for (const ReportRow& r : rows)
      if (r.tag == tag) return &r;
    return nullptr;
  };

  std::vector<std::string> sup_lines;
  for (const char* mode : {"none", "mse", "amp", "fourier"})
    if (const ReportRow* r = find_tag("sup_" + std::string(mode)))
      sup_lines.push_back(std::string(mode) + "," + metrics_csv(*r));
  if (!sup_lines.empty()) {
    write_csv(run / "tables" / "supervision.csv", "supervision,two_way,top1,top5,mean_cosine",
              sup_lines);
    outputs.push_back("tables/supervision.csv");
  }

  std::vector<std::string> shot_lines;
  for (int k = 1; k <= cfg.dataset.train_per_class; ++k)
    if (const ReportRow* r = find_tag("shots_" + std::to_string(k)))
      shot_lines.push_back(std::to_string(k) + "," + metrics_csv(*r));
  if (!shot_lines.empty()) {
    write_csv(run / "tables" / "shots.csv", "shots,two_way,top1,top5,mean_cosine", shot_lines);
    outputs.push_back("tables/shots.csv");
  }

  std::vector<std::string> sel_lines;
  for (const char* s : {"kda_max", "kda_min", "random"})
    if (const ReportRow* r = find_tag("sel_" + std::string(s)))
      sel_lines.push_back(std::string(s) + "," + metrics_csv(*r));
  if (!sel_lines.empty()) {
    write_csv(run / "tables" / "selection.csv", "strategy,two_way,top1,top5,mean_cosine",
              sel_lines);
    outputs.push_back("tables/selection.csv");
  }

  checksum_outputs(rec, run, outputs);
  rec.metrics["n_rows"] = static_cast<double>(rows.size());
  std::printf("report: %zu eval runs, %zu tables under tables/\n", rows.size(), outputs.size());
  commit_stage(cfg, m, std::move(rec), t0);
}

void run_ablate(const ExperimentConfig& cfg, const std::string& axis, const StageOptions& opt) {
  const auto t0 = Clock::now();
  const fs::path run(cfg.output_dir);

  auto ensure = [&](const std::string& stage, auto&& fn) {
    if (stage_current(cfg, stage)) {
      std::printf("ablate: skipped %s (up to date)\n", stage.c_str());
      return;
    }
    fn();
  };

  ensure("gen-data", [&] { run_gen_data(cfg, opt); });
  ensure("pretrain", [&] { run_pretrain(cfg, opt); });

  std::vector<AdaptVariant> variants;
  if (axis == "supervision") {
    for (const char* mode : {"none", "mse", "amp", "fourier"}) {
      AdaptVariant v;
      v.tag = "sup_" + std::string(mode);
      v.supervision = mode;
      v.shots = 1;
      variants.push_back(v);
    }
  } else if (axis == "adapter_depth") {
    for (int depth : {1, 2, 3}) {
      AdaptVariant v;
      v.tag = "depth_" + std::to_string(depth);
      v.adapter = AdapterConfig{cfg.dataset.canonical_len, depth, true};
      variants.push_back(v);
    }
    AdaptVariant nr;
    nr.tag = "depth_1_nonres";
    nr.adapter = AdapterConfig{cfg.dataset.canonical_len, 1, false};
    variants.push_back(nr);
  } else if (axis == "shots") {
    for (int k : {1, 2, 3}) {
      AdaptVariant v;
      v.tag = "shots_" + std::to_string(k);
      v.shots = k;
      variants.push_back(v);
    }
  } else if (axis == "selection") {
    for (const char* s : {"kda_max", "kda_min", "random"}) {
      ensure("select/" + std::string(s),
             [&] { run_select(cfg, strategy_from_string(s), opt); });
      AdaptVariant v;
      v.tag = "sel_" + std::string(s);
      v.use_selection = true;
      v.selection_strategy = s;
      v.shots = 1;
      variants.push_back(v);
    }
  } else {
    throw ConfigError("unknown ablation axis: " + axis);
  }

  for (const AdaptVariant& v : variants) {
    ensure("adapt/" + v.tag, [&] { run_adapt(cfg, v, opt); });
    ensure("eval/" + v.tag, [&] { run_eval(cfg, v.tag, opt); });
  }

  RunManifest m = load_manifest_checked(cfg);
  StageRecord rec;
  rec.stage = "ablate/" + axis;
  std::vector<std::string> report_paths;
  for (const AdaptVariant& v : variants)
    report_paths.push_back("eval/" + v.tag + "/eval_report.json");
  rec.inputs = verify_inputs(m, run, report_paths, opt.force);

  std::vector<std::string> lines;
  for (size_t i = 0; i < variants.size(); ++i) {
    const ReportRow r = parse_report(run / report_paths[i]);
    lines.push_back(variants[i].tag + "," + r.supervision + "," + std::to_string(r.shots) + "," +
                    metrics_csv(r));
  }
  fs::create_directories(run / "tables");
  const std::string table = "tables/ablate_" + axis + ".csv";
  write_csv(run / table, "variant,supervision,shots,two_way,top1,top5,mean_cosine", lines);
  checksum_outputs(rec, run, {table});
  rec.metrics["n_variants"] = static_cast<double>(variants.size());

  std::printf("ablate/%s: %zu variants, table %s\n", axis.c_str(), variants.size(), table.c_str());
  commit_stage(cfg, m, std::move(rec), t0);
}

void verify_run_dir(const ExperimentConfig& cfg) {
  const fs::path run(cfg.output_dir);
  const RunManifest m = load_manifest_checked(cfg);

  std::map<std::string, std::string> owner;  // relpath -> stage
  std::size_t artifacts = 0;
  for (const StageRecord& r : m.stages) {
    for (const auto& [path, checksum] : r.outputs) {
      auto [it, inserted] = owner.emplace(path, r.stage);
      if (!inserted)
        throw ArtifactError("artifact " + path + " is claimed by both '" + it->second +
                            "' and '" + r.stage + "'");
      const fs::path full = run / path;
      if (!fs::exists(full))
        throw ArtifactError("artifact " + path + " recorded by '" + r.stage + "' is missing");
      if (file_checksum_hex(full) != checksum)
        throw ArtifactError("artifact " + path + " does not match the checksum recorded by '" +
                            r.stage + "'");
      ++artifacts;
    }
  }
  for (const auto& entry : fs::recursive_directory_iterator(run)) {
    if (!entry.is_regular_file()) continue;
    const std::string rel = fs::relative(entry.path(), run).generic_string();
    if (rel == "manifest.json" || rel == "timing.json") continue;
    if (!owner.count(rel))
      throw ArtifactError("dangling artifact " + rel + ": no stage in the manifest claims it");
  }
  std::printf("verify: OK (%zu artifacts across %zu stages)\n", artifacts, m.stages.size());
}

}  // namespace mindshot
