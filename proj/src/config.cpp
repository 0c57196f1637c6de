#include "mindshot/config.hpp"

#include <fstream>

namespace mindshot {

namespace {

using nlohmann::json;

void check_keys(const json& j, std::initializer_list<const char*> allowed,
                const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : allowed)
      if (it.key() == k) {
        known = true;
        break;
      }
    if (!known) throw ConfigError("unknown key '" + it.key() + "' in " + where);
  }
}

std::string spot(const std::string& where, const char* key) {
  return "'" + std::string(key) + "' in " + where;
}

template <typename T>
void opt_int(const json& j, const char* key, const std::string& where, T& out) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  if (!v.is_number_integer() && !v.is_number_unsigned())
    throw ConfigError(spot(where, key) + " must be an integer");
  out = v.get<T>();
}

void opt_u64(const json& j, const char* key, const std::string& where, std::uint64_t& out) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  if (!(v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0)))
    throw ConfigError(spot(where, key) + " must be a nonnegative integer");
  out = v.get<std::uint64_t>();
}

void opt_double(const json& j, const char* key, const std::string& where, double& out) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  if (!v.is_number()) throw ConfigError(spot(where, key) + " must be a number");
  out = v.get<double>();
}

void opt_bool(const json& j, const char* key, const std::string& where, bool& out) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  if (!v.is_boolean()) throw ConfigError(spot(where, key) + " must be a boolean");
  out = v.get<bool>();
}

void opt_string(const json& j, const char* key, const std::string& where, std::string& out) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  if (!v.is_string()) throw ConfigError(spot(where, key) + " must be a string");
  out = v.get<std::string>();
}

void parse_train_block(const json& j, const std::string& where, bool with_supervision,
                       TrainConfig& out) {
  if (with_supervision)
    check_keys(j, {"epochs", "batch_size", "lr_max", "weight_decay", "supervision"}, where);
  else
    check_keys(j, {"epochs", "batch_size", "lr_max", "weight_decay"}, where);
  opt_int(j, "epochs", where, out.epochs);
  opt_int(j, "batch_size", where, out.batch_size);
  opt_double(j, "lr_max", where, out.lr_max);
  opt_double(j, "weight_decay", where, out.adamw.weight_decay);
  if (with_supervision) opt_string(j, "supervision", where, out.loss.supervision);
}

void check_supervision(const std::string& s) {
  if (s != "none" && s != "mse" && s != "amp" && s != "fourier")
    throw ConfigError("unknown supervision mode: " + s);
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  c.pretrain.epochs = 240;
  c.pretrain.batch_size = 64;
  c.adapt.epochs = 240;
  c.adapt.batch_size = 32;
  c.adapt.loss.supervision = "fourier";

  check_keys(j, {"seed", "output_dir", "dataset", "model", "train", "loss", "selection", "eval"},
             "the top level");
  opt_u64(j, "seed", "the top level", c.seed);
  opt_string(j, "output_dir", "the top level", c.output_dir);

  if (j.contains("dataset")) {
    const json& d = j.at("dataset");
    const std::string where = "dataset";
    check_keys(d,
               {"n_classes", "train_per_class", "test_per_class", "n_subjects", "canonical_len",
                "embedding_dim", "raw_multiple_min", "raw_multiple_max", "stimulus_jitter",
                "noise_sigma", "tuning_scale", "subject_nonlinearity"},
               where);
    opt_int(d, "n_classes", where, c.dataset.n_classes);
    opt_int(d, "train_per_class", where, c.dataset.train_per_class);
    opt_int(d, "test_per_class", where, c.dataset.test_per_class);
    opt_int(d, "n_subjects", where, c.dataset.n_subjects);
    opt_int(d, "canonical_len", where, c.dataset.canonical_len);
    opt_int(d, "embedding_dim", where, c.dataset.embedding_dim);
    opt_int(d, "raw_multiple_min", where, c.dataset.raw_multiple_min);
    opt_int(d, "raw_multiple_max", where, c.dataset.raw_multiple_max);
    opt_double(d, "stimulus_jitter", where, c.dataset.stimulus_jitter);
    opt_double(d, "noise_sigma", where, c.dataset.noise_sigma);
    opt_double(d, "tuning_scale", where, c.dataset.tuning_scale);
    opt_double(d, "subject_nonlinearity", where, c.dataset.subject_nonlinearity);
  }

  if (j.contains("model")) {
    const json& m = j.at("model");
    check_keys(m, {"hidden_dim", "proj_hidden", "adapter_depth", "adapter_residual"}, "model");
    opt_int(m, "hidden_dim", "model", c.hidden_dim);
    opt_int(m, "proj_hidden", "model", c.proj_hidden);
    opt_int(m, "adapter_depth", "model", c.adapter.depth);
    opt_bool(m, "adapter_residual", "model", c.adapter.residual);
  }

  if (j.contains("train")) {
    const json& t = j.at("train");
    check_keys(t, {"pretrain", "adapt"}, "train");
    if (t.contains("pretrain")) parse_train_block(t.at("pretrain"), "train.pretrain", false, c.pretrain);
    if (t.contains("adapt")) parse_train_block(t.at("adapt"), "train.adapt", true, c.adapt);
  }

  if (j.contains("loss")) {
    const json& l = j.at("loss");
    const std::string where = "loss";
    check_keys(l,
               {"tau", "w_softclip", "w_prior", "w_amp", "w_pha", "w_mse", "wrap_phase",
                "bidirectional"},
               where);
    LossWeights w;
    LossOptions o;
    opt_double(l, "tau", where, o.tau);
    opt_double(l, "w_softclip", where, w.softclip);
    opt_double(l, "w_prior", where, w.prior);
    opt_double(l, "w_amp", where, w.amp);
    opt_double(l, "w_pha", where, w.pha);
    opt_double(l, "w_mse", where, w.mse);
    opt_bool(l, "wrap_phase", where, o.wrap_phase_diff);
    opt_bool(l, "bidirectional", where, o.bidirectional);
    if (!(o.tau > 0.0)) throw ConfigError("'tau' in loss must be positive");
    c.pretrain.loss.weights = w;
    c.pretrain.loss.options = o;
    c.adapt.loss.weights = w;
    c.adapt.loss.options = o;
  }

  if (j.contains("selection")) {
    const json& s = j.at("selection");
    check_keys(s, {"method", "strategy"}, "selection");
    std::string method = to_string(c.selection_method), strategy = to_string(c.selection_strategy);
    opt_string(s, "method", "selection", method);
    opt_string(s, "strategy", "selection", strategy);
    c.selection_method = projection_method_from_string(method);
    c.selection_strategy = strategy_from_string(strategy);
  }

  if (j.contains("eval")) {
    const json& e = j.at("eval");
    check_keys(e, {"shots", "use_selection"}, "eval");
    opt_int(e, "shots", "eval", c.shots);
    opt_bool(e, "use_selection", "eval", c.use_selection);
  }

  c.dataset.seed = c.seed;
  c.adapter.voxels = c.dataset.canonical_len;
  c.pretrain.loss.supervision = "none";
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config is not valid JSON: " + std::string(e.what()));
  }
  return from_json(j);
}

nlohmann::json ExperimentConfig::to_json() const {
  json j;
  j["seed"] = seed;
  j["output_dir"] = output_dir;
  j["dataset"] = {{"n_classes", dataset.n_classes},
                  {"train_per_class", dataset.train_per_class},
                  {"test_per_class", dataset.test_per_class},
                  {"n_subjects", dataset.n_subjects},
                  {"canonical_len", dataset.canonical_len},
                  {"embedding_dim", dataset.embedding_dim},
                  {"raw_multiple_min", dataset.raw_multiple_min},
                  {"raw_multiple_max", dataset.raw_multiple_max},
                  {"stimulus_jitter", dataset.stimulus_jitter},
                  {"noise_sigma", dataset.noise_sigma},
                  {"tuning_scale", dataset.tuning_scale},
                  {"subject_nonlinearity", dataset.subject_nonlinearity}};
  j["model"] = {{"hidden_dim", hidden_dim},
                {"proj_hidden", proj_hidden},
                {"adapter_depth", adapter.depth},
                {"adapter_residual", adapter.residual}};
  j["train"] = {{"pretrain",
                 {{"epochs", pretrain.epochs},
                  {"batch_size", pretrain.batch_size},
                  {"lr_max", pretrain.lr_max},
                  {"weight_decay", pretrain.adamw.weight_decay}}},
                {"adapt",
                 {{"epochs", adapt.epochs},
                  {"batch_size", adapt.batch_size},
                  {"lr_max", adapt.lr_max},
                  {"weight_decay", adapt.adamw.weight_decay},
                  {"supervision", adapt.loss.supervision}}}};
  j["loss"] = {{"tau", adapt.loss.options.tau},
               {"w_softclip", adapt.loss.weights.softclip},
               {"w_prior", adapt.loss.weights.prior},
               {"w_amp", adapt.loss.weights.amp},
               {"w_pha", adapt.loss.weights.pha},
               {"w_mse", adapt.loss.weights.mse},
               {"wrap_phase", adapt.loss.options.wrap_phase_diff},
               {"bidirectional", adapt.loss.options.bidirectional}};
  j["selection"] = {{"method", to_string(selection_method)},
                    {"strategy", to_string(selection_strategy)}};
  j["eval"] = {{"shots", shots}, {"use_selection", use_selection}};
  return j;
}

void ExperimentConfig::validate() const {
  if (output_dir.empty()) throw ConfigError("'output_dir' is required");
  dataset.validate();
  if (dataset.n_subjects < 2)
    throw ConfigError("'n_subjects' in dataset must be at least 2 (pretrain plus adapt)");
  adapter.validate();
  encoder_config().validate();
  pretrain.validate();
  adapt.validate();
  check_supervision(adapt.loss.supervision);
  if (shots < 1) throw ConfigError("'shots' in eval must be at least 1");
  if (shots > dataset.train_per_class)
    throw ConfigError("'shots' in eval exceeds train_per_class");
}

EncoderConfig ExperimentConfig::encoder_config() const {
  EncoderConfig e;
  e.input_dim = dataset.canonical_len;
  e.hidden_dim = hidden_dim;
  e.embed_dim = dataset.embedding_dim;
  e.proj_hidden = proj_hidden;
  return e;
}

std::vector<std::string> ExperimentConfig::pretrain_subjects() const {
  std::vector<std::string> out;
  for (int i = 0; i + 1 < dataset.n_subjects; ++i) out.push_back("s" + std::to_string(i));
  return out;
}

std::string ExperimentConfig::adapt_subject() const {
  return "s" + std::to_string(dataset.n_subjects - 1);
}

}  // namespace mindshot
