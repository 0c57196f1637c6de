#include "mindshot/models.hpp"

#include <cmath>

namespace mindshot {

Matrix Affine::forward(MatRef x) const {
  if (x.cols() != weight.cols()) throw std::invalid_argument("affine: input width mismatch");
  return (x * weight.transpose()).rowwise() + bias.transpose();
}

Matrix Affine::backward(MatRef x, MatRef g_out, Matrix* g_weight, Vector* g_bias) const {
  if (g_weight) *g_weight += g_out.transpose() * x;
  if (g_bias) *g_bias += g_out.colwise().sum().transpose();
  return g_out * weight;
}

Matrix gelu(MatRef x) {
  return x.unaryExpr([](double v) { return 0.5 * v * (1.0 + std::erf(v * M_SQRT1_2)); });
}

Matrix gelu_backward(MatRef x, MatRef g_out) {
  Matrix g(x.rows(), x.cols());
  for (Index c = 0; c < x.cols(); ++c) {
    for (Index r = 0; r < x.rows(); ++r) {
      const double v = x(r, c);
      const double cdf = 0.5 * (1.0 + std::erf(v * M_SQRT1_2));
      const double pdf = std::exp(-0.5 * v * v) / std::sqrt(2.0 * M_PI);
      g(r, c) = g_out(r, c) * (cdf + v * pdf);
    }
  }
  return g;
}

void AdapterConfig::validate() const {
  if (voxels < 1) throw ConfigError("adapter: voxels must be positive");
  if (depth < 1 || depth > 3) throw ConfigError("adapter: depth must be 1, 2 or 3");
  if (!residual && depth != 1)
    throw ConfigError("adapter: non-residual form only supported at depth 1");
}

void EncoderConfig::validate() const {
  if (input_dim < 1 || hidden_dim < 1 || embed_dim < 1 || proj_hidden < 1)
    throw ConfigError("encoder: all dimensions must be positive");
}

namespace {

struct AdapterTape {
  Matrix x;
  std::vector<Matrix> pre;  // affine outputs, one per layer
  std::vector<Matrix> act;  // gelu outputs between layers (depth - 1 of them)
  Matrix y;
};

void adapter_forward(const Adapter& a, MatRef x, AdapterTape& t) {
  if (x.cols() != a.config.voxels) throw std::invalid_argument("adapter: input width mismatch");
  t.x = x;
  t.pre.clear();
  t.act.clear();
  const Matrix* cur = &t.x;
  for (size_t l = 0; l < a.layers.size(); ++l) {
    t.pre.push_back(a.layers[l].forward(*cur));
    if (l + 1 < a.layers.size()) {
      t.act.push_back(gelu(t.pre.back()));
      cur = &t.act.back();
    }
  }
  t.y = a.config.residual ? Matrix(t.x + t.pre.back()) : t.pre.back();
}

void adapter_backward(const Adapter& a, const AdapterTape& t, MatRef g_y, AdapterGrads& grads) {
  Matrix g = g_y;  // gradient flowing through the branch
  for (int l = static_cast<int>(a.layers.size()) - 1; l >= 0; --l) {
    const Matrix& input = (l == 0) ? t.x : t.act[static_cast<size_t>(l - 1)];
    g = a.layers[static_cast<size_t>(l)].backward(input, g, &grads.weight[static_cast<size_t>(l)],
                                                  &grads.bias[static_cast<size_t>(l)]);
    if (l > 0) g = gelu_backward(t.pre[static_cast<size_t>(l - 1)], g);
  }
}

struct EncoderTape {
  Matrix x;
  Matrix h0;
  Matrix b1_pre, b1_act, h1;
  Matrix b2_pre, b2_act, h2;
  Matrix u;
  Matrix p1_pre, p1_act, p2_pre, p2_act, e_b;
  Matrix r1_pre, r1_act, e_refined;
};

void encoder_forward(const Encoder& e, MatRef x, EncoderTape& t) {
  if (x.cols() != e.config.input_dim) throw std::invalid_argument("encoder: input width mismatch");
  t.x = x;
  t.h0 = e.input_proj.forward(t.x);
  t.b1_pre = e.block1_a.forward(t.h0);
  t.b1_act = gelu(t.b1_pre);
  t.h1 = t.h0 + e.block1_b.forward(t.b1_act);
  t.b2_pre = e.block2_a.forward(t.h1);
  t.b2_act = gelu(t.b2_pre);
  t.h2 = t.h1 + e.block2_b.forward(t.b2_act);
  t.u = e.output_proj.forward(t.h2);
  t.p1_pre = e.proj1.forward(t.u);
  t.p1_act = gelu(t.p1_pre);
  t.p2_pre = e.proj2.forward(t.p1_act);
  t.p2_act = gelu(t.p2_pre);
  t.e_b = e.proj3.forward(t.p2_act);
  t.r1_pre = e.prior1.forward(t.e_b);
  t.r1_act = gelu(t.r1_pre);
  t.e_refined = e.prior2.forward(t.r1_act);
}

// Traversal order shared by grads, trainable_tensors and the init below:
// input_proj, block1_a, block1_b, block2_a, block2_b, output_proj,
// proj1..proj3, prior1, prior2.
Matrix encoder_backward(const Encoder& e, const EncoderTape& t, MatRef g_eb_in, MatRef g_refined,
                        EncoderGrads* grads) {
  auto w = [&](size_t i) { return grads ? &grads->weight[i] : nullptr; };
  auto b = [&](size_t i) { return grads ? &grads->bias[i] : nullptr; };

  Matrix g = e.prior2.backward(t.r1_act, g_refined, w(10), b(10));
  g = gelu_backward(t.r1_pre, g);
  Matrix g_eb = g_eb_in + e.prior1.backward(t.e_b, g, w(9), b(9));

  g = e.proj3.backward(t.p2_act, g_eb, w(8), b(8));
  g = gelu_backward(t.p2_pre, g);
  g = e.proj2.backward(t.p1_act, g, w(7), b(7));
  g = gelu_backward(t.p1_pre, g);
  Matrix g_u = e.proj1.backward(t.u, g, w(6), b(6));

  Matrix g_h2 = e.output_proj.backward(t.h2, g_u, w(5), b(5));

  g = e.block2_b.backward(t.b2_act, g_h2, w(4), b(4));
  g = gelu_backward(t.b2_pre, g);
  Matrix g_h1 = g_h2 + e.block2_a.backward(t.h1, g, w(3), b(3));

  g = e.block1_b.backward(t.b1_act, g_h1, w(2), b(2));
  g = gelu_backward(t.b1_pre, g);
  Matrix g_h0 = g_h1 + e.block1_a.backward(t.h0, g, w(1), b(1));

  return e.input_proj.backward(t.x, g_h0, w(0), b(0));
}

std::vector<Affine*> affine_list(Encoder& e) {
  return {&e.input_proj, &e.block1_a, &e.block1_b, &e.block2_a, &e.block2_b,
          &e.output_proj, &e.proj1,   &e.proj2,    &e.proj3,    &e.prior1,
          &e.prior2};
}

void fill_fan_in(Affine& a, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(a.weight.cols()));
  for (Index r = 0; r < a.weight.rows(); ++r)
    for (Index c = 0; c < a.weight.cols(); ++c)
      a.weight(r, c) = (2.0 * rng.uniform() - 1.0) * bound;
  for (Index r = 0; r < a.bias.size(); ++r) a.bias[r] = (2.0 * rng.uniform() - 1.0) * bound;
}

}  // namespace

Matrix Adapter::forward(MatRef x) const {
  AdapterTape t;
  adapter_forward(*this, x, t);
  return t.y;
}

void Encoder::forward(MatRef x, Matrix* e_b, Matrix* e_refined) const {
  EncoderTape t;
  encoder_forward(*this, x, t);
  if (e_b) *e_b = t.e_b;
  if (e_refined) *e_refined = t.e_refined;
}

std::int64_t affine_param_count(Index in_features, Index out_features) {
  return static_cast<std::int64_t>(in_features) * out_features + out_features;
}

std::int64_t count_params(const Adapter& a) {
  std::int64_t n = 0;
  for (const Affine& l : a.layers) n += l.weight.size() + l.bias.size();
  return n;
}

std::int64_t count_params(const Encoder& e) {
  std::int64_t n = 0;
  for (const Affine* l : affine_list(const_cast<Encoder&>(e)))
    n += l->weight.size() + l->bias.size();
  return n;
}

Adapter make_adapter(const AdapterConfig& config, std::uint64_t seed) {
  config.validate();
  Adapter a;
  a.config = config;
  const Index v = config.voxels;
  Rng rng(seed);
  for (int l = 0; l < config.depth; ++l) {
    Affine layer;
    layer.weight = Matrix::Zero(v, v);
    layer.bias = Vector::Zero(v);
    a.layers.push_back(std::move(layer));
  }
  if (!config.residual) {
    a.layers[0].weight = Matrix::Identity(v, v);  // start at the identity map
  } else if (config.depth >= 2) {
    // Inner layers get the usual fan-in init; the last layer stays zero so
    // the branch starts at zero (identity overall) without killing the
    // gradient into the inner layers.
    for (int l = 0; l < config.depth - 1; ++l) fill_fan_in(a.layers[static_cast<size_t>(l)], rng);
  }
  return a;
}

Encoder make_encoder(const EncoderConfig& config, std::uint64_t seed) {
  config.validate();
  Encoder e;
  e.config = config;
  const Index L = config.input_dim, H = config.hidden_dim, E = config.embed_dim,
              P = config.proj_hidden;
  auto shape = [](Affine& a, Index out, Index in) {
    a.weight.resize(out, in);
    a.bias.resize(out);
  };
  shape(e.input_proj, H, L);
  shape(e.block1_a, H, H);
  shape(e.block1_b, H, H);
  shape(e.block2_a, H, H);
  shape(e.block2_b, H, H);
  shape(e.output_proj, E, H);
  shape(e.proj1, P, E);
  shape(e.proj2, P, P);
  shape(e.proj3, E, P);
  shape(e.prior1, P, E);
  shape(e.prior2, E, P);
  Rng rng(seed);
  for (Affine* l : affine_list(e)) fill_fan_in(*l, rng);
  return e;
}

std::vector<TensorRef> trainable_tensors(Adapter& a) {
  std::vector<TensorRef> out;
  for (Affine& l : a.layers) {
    out.push_back({l.weight.data(), l.weight.size()});
    out.push_back({l.bias.data(), l.bias.size()});
  }
  return out;
}

std::vector<TensorRef> trainable_tensors(Encoder& e) {
  std::vector<TensorRef> out;
  for (Affine* l : affine_list(e)) {
    out.push_back({l->weight.data(), l->weight.size()});
    out.push_back({l->bias.data(), l->bias.size()});
  }
  return out;
}

void AdapterGrads::set_zero() {
  for (Matrix& m : weight) m.setZero();
  for (Vector& v : bias) v.setZero();
}

std::vector<TensorRef> AdapterGrads::tensors() {
  std::vector<TensorRef> out;
  for (size_t i = 0; i < weight.size(); ++i) {
    out.push_back({weight[i].data(), weight[i].size()});
    out.push_back({bias[i].data(), bias[i].size()});
  }
  return out;
}

void EncoderGrads::set_zero() {
  for (Matrix& m : weight) m.setZero();
  for (Vector& v : bias) v.setZero();
}

std::vector<TensorRef> EncoderGrads::tensors() {
  std::vector<TensorRef> out;
  for (size_t i = 0; i < weight.size(); ++i) {
    out.push_back({weight[i].data(), weight[i].size()});
    out.push_back({bias[i].data(), bias[i].size()});
  }
  return out;
}

AdapterGrads make_grads(const Adapter& a) {
  AdapterGrads g;
  for (const Affine& l : a.layers) {
    g.weight.push_back(Matrix::Zero(l.weight.rows(), l.weight.cols()));
    g.bias.push_back(Vector::Zero(l.bias.size()));
  }
  return g;
}

EncoderGrads make_grads(const Encoder& e) {
  EncoderGrads g;
  for (const Affine* l : affine_list(const_cast<Encoder&>(e))) {
    g.weight.push_back(Matrix::Zero(l->weight.rows(), l->weight.cols()));
    g.bias.push_back(Vector::Zero(l->bias.size()));
  }
  return g;
}

namespace {

void check_batch(const Batch& batch, Index input_dim, Index embed_dim, bool need_partner) {
  if (batch.voxels.rows() < 1) throw std::invalid_argument("loss: empty batch");
  if (batch.voxels.cols() != input_dim)
    throw std::invalid_argument("loss: voxel width does not match the model input");
  if (batch.images.rows() != batch.voxels.rows() || batch.images.cols() != embed_dim)
    throw std::invalid_argument("loss: image embedding shape mismatch");
  if (need_partner && (batch.partner_voxels.rows() != batch.voxels.rows() ||
                       batch.partner_voxels.cols() != batch.voxels.cols()))
    throw std::invalid_argument("loss: partner voxel shape mismatch");
}

// Semantic terms on an already-forwarded encoder tape. Fills the weighted
// gradients w.r.t. e_b and e_refined when pointers are non-null.
void semantic_terms(const EncoderTape& tape, const Batch& batch, const LossSpec& spec,
                    LossReport& report, Matrix* g_eb, Matrix* g_ref) {
  if (spec.use_softclip) {
    const double sc = g_eb ? softclip_loss_grad(tape.e_b, batch.images, spec.options.tau, g_eb,
                                                spec.options.bidirectional)
                           : softclip_loss(tape.e_b, batch.images, spec.options.tau,
                                           spec.options.bidirectional);
    if (g_eb) *g_eb *= spec.weights.softclip;
    report.components["softclip"] = sc;
    report.total += spec.weights.softclip * sc;
  }
  if (spec.use_prior) {
    const double pr = g_ref ? prior_loss_grad(tape.e_refined, batch.images, g_ref)
                            : prior_loss(tape.e_refined, batch.images);
    if (g_ref) *g_ref *= spec.weights.prior;
    report.components["prior"] = pr;
    report.total += spec.weights.prior * pr;
  }
}

// Cross-subject supervision on the adapter output; accumulates the weighted
// gradient w.r.t. x_hat when grad is non-null.
void supervision_terms(const Matrix& x_hat, const Batch& batch, const LossSpec& spec,
                       LossReport& report, Matrix* grad) {
  const LossWeights& w = spec.weights;
  Matrix g;
  if (grad) g = Matrix::Zero(x_hat.rows(), x_hat.cols());
  if (spec.supervision == "mse") {
    const double v = grad ? batch_mse_grad(x_hat, batch.partner_voxels, &g)
                          : batch_mse(x_hat, batch.partner_voxels);
    report.components["mse"] = v;
    report.total += w.mse * v;
    if (grad) *grad += w.mse * g;
  } else if (spec.supervision == "amp" || spec.supervision == "fourier") {
    const double va = grad ? batch_amp_grad(x_hat, batch.partner_voxels, &g)
                           : batch_amp(x_hat, batch.partner_voxels);
    report.components["amp"] = va;
    report.total += w.amp * va;
    if (grad) *grad += w.amp * g;
    if (spec.supervision == "fourier") {
      if (grad) g.setZero();
      const double vp =
          grad ? batch_pha_grad(x_hat, batch.partner_voxels, &g, spec.options.wrap_phase_diff)
               : batch_pha(x_hat, batch.partner_voxels, spec.options.wrap_phase_diff);
      report.components["pha"] = vp;
      report.total += w.pha * vp;
      if (grad) *grad += w.pha * g;
    }
  } else if (spec.supervision != "none") {
    throw ConfigError("unknown supervision mode: " + spec.supervision);
  }
}

}  // namespace

LossReport encoder_loss_and_grad(const Encoder& enc, const Batch& batch, const LossSpec& spec,
                                 EncoderGrads* grads) {
  spec.weights.validate();
  check_batch(batch, enc.config.input_dim, enc.config.embed_dim, false);
  EncoderTape tape;
  encoder_forward(enc, batch.voxels, tape);

  LossReport report;
  if (!grads) {
    semantic_terms(tape, batch, spec, report, nullptr, nullptr);
    return report;
  }
  grads->set_zero();
  Matrix g_eb = Matrix::Zero(tape.e_b.rows(), tape.e_b.cols());
  Matrix g_ref = Matrix::Zero(tape.e_refined.rows(), tape.e_refined.cols());
  semantic_terms(tape, batch, spec, report, &g_eb, &g_ref);
  encoder_backward(enc, tape, g_eb, g_ref, grads);
  return report;
}

LossReport adapter_loss_and_grad(const Adapter& adapter, const Encoder& enc, const Batch& batch,
                                 const LossSpec& spec, AdapterGrads* grads) {
  spec.weights.validate();
  check_batch(batch, enc.config.input_dim, enc.config.embed_dim, spec.supervision != "none");
  if (adapter.config.voxels != enc.config.input_dim)
    throw std::invalid_argument("adapter output width does not match the encoder input");

  AdapterTape at;
  adapter_forward(adapter, batch.voxels, at);
  EncoderTape et;
  encoder_forward(enc, at.y, et);

  LossReport report;
  if (!grads) {
    semantic_terms(et, batch, spec, report, nullptr, nullptr);
    supervision_terms(at.y, batch, spec, report, nullptr);
    return report;
  }
  grads->set_zero();
  Matrix g_eb = Matrix::Zero(et.e_b.rows(), et.e_b.cols());
  Matrix g_ref = Matrix::Zero(et.e_refined.rows(), et.e_refined.cols());
  semantic_terms(et, batch, spec, report, &g_eb, &g_ref);
  Matrix g_xhat = encoder_backward(enc, et, g_eb, g_ref, nullptr);  // encoder frozen
  supervision_terms(at.y, batch, spec, report, &g_xhat);
  adapter_backward(adapter, at, g_xhat, *grads);
  return report;
}

}  // namespace mindshot
