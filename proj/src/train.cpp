#include "mindshot/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "mindshot/msarr.hpp"
#include "mindshot/spectral.hpp"

namespace mindshot {

double cyclical_lr(int step, int total_steps, double lr_max) {
  if (total_steps < 1) throw std::invalid_argument("cyclical_lr: total_steps must be positive");
  if (step < 0 || step >= total_steps) throw std::invalid_argument("cyclical_lr: step out of range");
  if (!(lr_max > 0.0)) throw std::invalid_argument("cyclical_lr: lr_max must be positive");
  const double lr_start = lr_max / 25.0;
  const double lr_end = lr_max / 100.0;
  const int last = total_steps - 1;
  const int peak = static_cast<int>(std::llround(0.3 * last));
  if (step <= peak) {
    if (peak == 0) return lr_max;
    const double f = static_cast<double>(step) / peak;
    return lr_start + f * (lr_max - lr_start);
  }
  const double f = static_cast<double>(step - peak) / (last - peak);
  return lr_max + f * (lr_end - lr_max);
}

AdamW::AdamW(const std::vector<TensorRef>& params, AdamWConfig config) : config_(config) {
  if (!(config_.beta1 >= 0 && config_.beta1 < 1) || !(config_.beta2 >= 0 && config_.beta2 < 1))
    throw ConfigError("adamw: betas must lie in [0, 1)");
  if (!(config_.eps > 0)) throw ConfigError("adamw: eps must be positive");
  if (config_.weight_decay < 0) throw ConfigError("adamw: weight decay must be nonnegative");
  for (const TensorRef& p : params) {
    m_.push_back(Vector::Zero(p.size));
    v_.push_back(Vector::Zero(p.size));
  }
}

void AdamW::step(const std::vector<TensorRef>& params, const std::vector<TensorRef>& grads,
                 double lr) {
  if (params.size() != m_.size() || grads.size() != m_.size())
    throw std::invalid_argument("adamw: tensor list does not match the optimizer state");
  ++step_count_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_count_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_count_));
  for (size_t i = 0; i < params.size(); ++i) {
    if (params[i].size != m_[i].size() || grads[i].size != m_[i].size())
      throw std::invalid_argument("adamw: tensor size does not match the optimizer state");
    Eigen::Map<Vector> p(params[i].data, params[i].size);
    Eigen::Map<const Vector> g(grads[i].data, grads[i].size);
    m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * g;
    v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * g.cwiseProduct(g);
    const Vector m_hat = m_[i] / bc1;
    const Vector v_hat = v_[i] / bc2;
    p -= lr * (m_hat.array() / (v_hat.array().sqrt() + config_.eps)).matrix();
    p -= lr * config_.weight_decay * p;
  }
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train: epochs must be positive");
  if (batch_size < 2) throw ConfigError("train: batch size must be at least 2");
  if (!(lr_max > 0)) throw ConfigError("train: lr_max must be positive");
  loss.weights.validate();
}

void TrainLog::write_csv(const std::string& path) const {
  static const char* kComponents[] = {"softclip", "prior", "amp", "pha", "mse"};
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ArtifactError("cannot open for writing: " + path);
  out << "epoch,step,lr,total,softclip,prior,amp,pha,mse\n";
  char buf[64];
  for (const LogRow& row : rows) {
    out << row.epoch << ',' << row.step;
    auto put = [&](double v) {
      std::snprintf(buf, sizeof buf, ",%.17g", v);
      out << buf;
    };
    put(row.lr);
    put(row.total);
    for (const char* name : kComponents) {
      auto it = row.components.find(name);
      put(it == row.components.end() ? 0.0 : it->second);
    }
    out << '\n';
  }
  if (!out) throw ArtifactError("write failed: " + path);
}

namespace {

struct Example {
  Vector pooled;    // voxels pooled to the encoder input length
  Vector embedding; // target image embedding
  int class_id = -1;
};

std::vector<Example> gather_examples(const Dataset& data, const std::vector<std::string>& ids,
                                     Index pooled_len, Split split) {
  std::vector<Example> out;
  for (const std::string& id : ids) {
    const int si = data.subject_index_of(id);
    for (int idx : data.sample_indices(si, split)) {
      const DatasetSample& s = data.samples[static_cast<size_t>(idx)];
      Example ex;
      ex.pooled = adaptive_max_pool(s.voxels.values, pooled_len);
      ex.embedding = data.stimulus_set.stimuli[static_cast<size_t>(s.stimulus_index)].embedding;
      ex.class_id = s.voxels.class_id;
      out.push_back(std::move(ex));
    }
  }
  return out;
}

// Number of optimizer steps one epoch contributes: consecutive chunks of
// batch_size, dropping any chunk smaller than two.
int steps_per_epoch(int n, int batch_size) {
  const int full = n / batch_size;
  const int rem = n % batch_size;
  return full + (rem >= 2 ? 1 : 0);
}

void warn_dropped(int rem, int epochs) {
  std::fprintf(stderr,
               "warning: dropping a trailing batch of %d sample(s); softclip needs at least two "
               "(this repeats for all %d epochs)\n",
               rem, epochs);
}

template <typename LossFn>
void run_epochs(int n, const TrainConfig& cfg, Rng& shuffle_rng, TrainLog& log,
                const std::function<void(int)>& on_epoch, LossFn&& step_fn) {
  const int per_epoch = steps_per_epoch(n, cfg.batch_size);
  if (per_epoch == 0) throw ConfigError("train: need at least two usable samples");
  const int total_steps = cfg.epochs * per_epoch;
  const int rem = n % cfg.batch_size;
  if (rem == 1) warn_dropped(rem, cfg.epochs);

  std::vector<int> order(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
  int global_step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    on_epoch(epoch);
    shuffle_rng.shuffle(order);
    for (int start = 0; start < n; start += cfg.batch_size) {
      const int bsz = std::min(cfg.batch_size, n - start);
      if (bsz < 2) continue;
      const double lr = cyclical_lr(global_step, total_steps, cfg.lr_max);
      LogRow row;
      row.epoch = epoch;
      row.step = global_step;
      row.lr = lr;
      step_fn(&order[static_cast<size_t>(start)], bsz, lr, row);
      if (!std::isfinite(row.total))
        throw NumericError("non-finite loss at step " + std::to_string(global_step));
      log.rows.push_back(std::move(row));
      ++global_step;
    }
  }
}

}  // namespace

PretrainResult pretrain(const Dataset& data, const std::vector<std::string>& subject_ids,
                        const EncoderConfig& enc_cfg, const TrainConfig& cfg) {
  cfg.validate();
  enc_cfg.validate();
  if (subject_ids.empty()) throw ConfigError("pretrain: no subjects given");

  const std::vector<Example> examples =
      gather_examples(data, subject_ids, enc_cfg.input_dim, Split::train);
  const int n = static_cast<int>(examples.size());

  PretrainResult result;
  result.encoder = make_encoder(enc_cfg, mix_seed(cfg.seed, 0xe11c));
  EncoderGrads grads = make_grads(result.encoder);
  AdamW opt(trainable_tensors(result.encoder), cfg.adamw);

  LossSpec spec = cfg.loss;
  spec.supervision = "none";  // partner supervision is an adaptation-time term

  Rng shuffle_rng(mix_seed(cfg.seed, 0x5e55));
  run_epochs(
      n, cfg, shuffle_rng, result.log, [](int) {},
      [&](const int* idx, int bsz, double lr, LogRow& row) {
        Batch batch;
        batch.voxels.resize(bsz, enc_cfg.input_dim);
        batch.images.resize(bsz, enc_cfg.embed_dim);
        for (int r = 0; r < bsz; ++r) {
          batch.voxels.row(r) = examples[static_cast<size_t>(idx[r])].pooled.transpose();
          batch.images.row(r) = examples[static_cast<size_t>(idx[r])].embedding.transpose();
        }
        const LossReport report = encoder_loss_and_grad(result.encoder, batch, spec, &grads);
        row.total = report.total;
        row.components = report.components;
        opt.step(trainable_tensors(result.encoder), grads.tensors(), lr);
      });
  return result;
}

AdaptResult adapt(const Dataset& data, const std::string& subject_id,
                  const std::vector<std::string>& source_subject_ids, const Encoder& encoder,
                  const AdapterConfig& ad_cfg, const TrainConfig& cfg) {
  cfg.validate();
  ad_cfg.validate();
  if (ad_cfg.voxels != encoder.config.input_dim)
    throw ConfigError("adapt: adapter width must match the encoder input");
  for (const std::string& src : source_subject_ids)
    if (src == subject_id)
      throw ConfigError("adapt: the adaptation subject cannot be its own partner source");

  const std::vector<Example> anchors =
      gather_examples(data, {subject_id}, ad_cfg.voxels, Split::train);
  const int n = static_cast<int>(anchors.size());

  const bool needs_partner = cfg.loss.supervision != "none";
  std::map<int, std::vector<const Example*>> pool;
  std::vector<Example> partner_examples;
  if (needs_partner) {
    if (source_subject_ids.empty())
      throw ConfigError("adapt: cross-subject supervision needs source subjects");
    partner_examples = gather_examples(data, source_subject_ids, ad_cfg.voxels, Split::train);
    for (const Example& ex : partner_examples) pool[ex.class_id].push_back(&ex);
    for (const Example& a : anchors)
      if (pool.find(a.class_id) == pool.end() || pool[a.class_id].empty())
        throw ConfigError("adapt: no source sample shares class " + std::to_string(a.class_id));
  }

  AdaptResult result;
  result.adapter = make_adapter(ad_cfg, mix_seed(cfg.seed, 0xada7));
  AdapterGrads grads = make_grads(result.adapter);
  AdamW opt(trainable_tensors(result.adapter), cfg.adamw);

  Rng rng(mix_seed(cfg.seed, 0xad09));
  std::vector<const Example*> partner_of(static_cast<size_t>(std::max(n, 0)), nullptr);
  run_epochs(
      n, cfg, rng, result.log,
      [&](int) {
        if (!needs_partner) return;
        // Redraw every anchor's same-class partner at the top of the epoch.
        for (int i = 0; i < n; ++i) {
          const auto& candidates = pool[anchors[static_cast<size_t>(i)].class_id];
          partner_of[static_cast<size_t>(i)] = candidates[static_cast<size_t>(
              rng.uniform_int(0, static_cast<std::int64_t>(candidates.size()) - 1))];
        }
      },
      [&](const int* idx, int bsz, double lr, LogRow& row) {
        Batch batch;
        batch.voxels.resize(bsz, ad_cfg.voxels);
        batch.images.resize(bsz, encoder.config.embed_dim);
        if (needs_partner) batch.partner_voxels.resize(bsz, ad_cfg.voxels);
        for (int r = 0; r < bsz; ++r) {
          const Example& a = anchors[static_cast<size_t>(idx[r])];
          batch.voxels.row(r) = a.pooled.transpose();
          batch.images.row(r) = a.embedding.transpose();
          if (needs_partner)
            batch.partner_voxels.row(r) =
                partner_of[static_cast<size_t>(idx[r])]->pooled.transpose();
        }
        const LossReport report =
            adapter_loss_and_grad(result.adapter, encoder, batch, cfg.loss, &grads);
        row.total = report.total;
        row.components = report.components;
        opt.step(trainable_tensors(result.adapter), grads.tensors(), lr);
      });
  return result;
}

void save_params(const std::string& path, const std::vector<TensorRef>& tensors) {
  Index total = 0;
  for (const TensorRef& t : tensors) total += t.size;
  Vector flat(total);
  Index at = 0;
  for (const TensorRef& t : tensors) {
    flat.segment(at, t.size) = Eigen::Map<const Vector>(t.data, t.size);
    at += t.size;
  }
  write_msarr(path, flat);
}

void load_params(const std::string& path, const std::vector<TensorRef>& tensors) {
  const MsArr arr = read_msarr(path);
  if (arr.dims.size() != 1)
    throw ArtifactError("checkpoint must be a rank-1 array: " + path);
  Index total = 0;
  for (const TensorRef& t : tensors) total += t.size;
  if (static_cast<Index>(arr.data.size()) != total)
    throw ArtifactError("checkpoint size does not match the model: " + path);
  Index at = 0;
  for (const TensorRef& t : tensors) {
    Eigen::Map<Vector>(t.data, t.size) =
        Eigen::Map<const Vector>(arr.data.data() + at, t.size);
    at += t.size;
  }
}

}  // namespace mindshot
