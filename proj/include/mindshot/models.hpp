#pragma once

#include <cstdint>
#include <vector>

#include "mindshot/losses.hpp"
#include "mindshot/rng.hpp"
#include "mindshot/types.hpp"

namespace mindshot {

// y = x W^T + b for row-major batches: weight is (out, in), bias (out).
struct Affine {
  Matrix weight;
  Vector bias;

  Index in_features() const { return weight.cols(); }
  Index out_features() const { return weight.rows(); }
  Matrix forward(MatRef x) const;
  // Accumulates dW/db, returns dX.
  Matrix backward(MatRef x, MatRef g_out, Matrix* g_weight, Vector* g_bias) const;
};

// Exact GELU, x/2 (1 + erf(x / sqrt 2)), applied elementwise.
Matrix gelu(MatRef x);
Matrix gelu_backward(MatRef x, MatRef g_out);

struct AdapterConfig {
  Index voxels = 96;  // pooled length, both input and output width
  int depth = 1;      // affine layers in the branch, 1..3
  bool residual = true;

  void validate() const;
};

// Residual adapter for a new subject: y = x + branch(x), where the branch is
// `depth` affine layers with GELU between them. With residual = false the
// output is branch(x) alone (only supported at depth 1).
struct Adapter {
  AdapterConfig config;
  std::vector<Affine> layers;

  Matrix forward(MatRef x) const;
};

struct EncoderConfig {
  Index input_dim = 96;    // pooled voxel length
  Index hidden_dim = 128;
  Index embed_dim = 64;
  Index proj_hidden = 128;

  void validate() const;
};

// Shared brain encoder: input projection, two residual blocks (affine, GELU,
// affine each), output projection to the embedding, then a projector MLP and
// a prior head that refines the projected embedding toward the image space.
struct Encoder {
  EncoderConfig config;
  Affine input_proj;
  Affine block1_a, block1_b;
  Affine block2_a, block2_b;
  Affine output_proj;
  Affine proj1, proj2, proj3;   // projector, embed -> proj_hidden -> proj_hidden -> embed
  Affine prior1, prior2;        // prior head, embed -> proj_hidden -> embed

  // e_b (contrastive embedding) and e_refined (prior head output).
  void forward(MatRef x, Matrix* e_b, Matrix* e_refined) const;
};

std::int64_t count_params(const Adapter& a);
std::int64_t count_params(const Encoder& e);
// Parameter counts from the shapes alone, nothing allocated. A single affine
// of width `voxels` (the full-scale adapter is one such layer).
std::int64_t affine_param_count(Index in_features, Index out_features);

Adapter make_adapter(const AdapterConfig& config, std::uint64_t seed);
Encoder make_encoder(const EncoderConfig& config, std::uint64_t seed);

// Flat views over every trainable tensor, in a fixed traversal order.
struct TensorRef {
  double* data;
  Index size;
};

std::vector<TensorRef> trainable_tensors(Adapter& a);
std::vector<TensorRef> trainable_tensors(Encoder& e);

// Gradients mirror the parameter layout of the model they were taken from.
struct AdapterGrads {
  std::vector<Matrix> weight;
  std::vector<Vector> bias;

  void set_zero();
  std::vector<TensorRef> tensors();
};

struct EncoderGrads {
  std::vector<Matrix> weight;  // one per affine, encoder traversal order
  std::vector<Vector> bias;

  void set_zero();
  std::vector<TensorRef> tensors();
};

AdapterGrads make_grads(const Adapter& a);
EncoderGrads make_grads(const Encoder& e);

// What the composite objective should include.
struct LossSpec {
  LossWeights weights;
  LossOptions options;
  bool use_softclip = true;
  bool use_prior = true;
  // Cross-subject supervision on the adapter output against partner voxels:
  // "none", "mse", "amp" (amplitude only) or "fourier" (amplitude + phase).
  std::string supervision = "none";
};

// One training batch. Rows of `voxels` are pooled voxel vectors; `images`
// holds the matching image embeddings. `partner_voxels` is only consulted
// when the loss spec asks for cross-subject supervision.
struct Batch {
  Matrix voxels;
  Matrix images;
  Matrix partner_voxels;
};

// Loss and parameter gradients for the encoder alone (pretraining: the batch
// voxels feed the encoder directly).
LossReport encoder_loss_and_grad(const Encoder& enc, const Batch& batch, const LossSpec& spec,
                                 EncoderGrads* grads);

// Loss and adapter gradients with the encoder frozen (adaptation). The
// adapter output both feeds the encoder and, when supervision is on, is
// compared against the partner voxels.
LossReport adapter_loss_and_grad(const Adapter& adapter, const Encoder& enc, const Batch& batch,
                                 const LossSpec& spec, AdapterGrads* grads);

}  // namespace mindshot
