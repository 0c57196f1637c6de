#pragma once

#include <map>
#include <string>

#include "mindshot/spectral.hpp"
#include "mindshot/types.hpp"

namespace mindshot {

struct LossWeights {
  double softclip = 1.0;
  double prior = 30.0;
  double amp = 2.0;
  double pha = 2.0;
  double mse = 2.0;  // weight of the time-domain cross-subject variant

  void validate() const;
};

struct LossReport {
  double total = 0.0;
  std::map<std::string, double> components;  // softclip, prior, amp, pha, mse
};

struct LossOptions {
  double tau = 0.1;
  bool wrap_phase_diff = false;  // map phase differences to (-pi, pi]
  bool bidirectional = false;    // average brain->image and image->brain directions
};

// Spectral and time-domain pair losses. The grad variants return the same
// value and accumulate d/dx_i into *grad_i (and *grad_j when non-null).

double l_amp(VecRef x_i, VecRef x_j);
double l_pha(VecRef x_i, VecRef x_j, bool wrap_phase_diff = false);
double l_fourier(VecRef x_i, VecRef x_j, bool wrap_phase_diff = false);
double l_mse_signal(VecRef x_i, VecRef x_j);

double l_amp_grad(VecRef x_i, VecRef x_j, Vector* grad_i, Vector* grad_j = nullptr);
double l_pha_grad(VecRef x_i, VecRef x_j, Vector* grad_i, Vector* grad_j = nullptr,
                  bool wrap_phase_diff = false);
double l_mse_signal_grad(VecRef x_i, VecRef x_j, Vector* grad_i, Vector* grad_j = nullptr);

// Row-mean of the per-row pair loss over two equal-shaped batches.
double batch_amp(MatRef a, MatRef b);
double batch_pha(MatRef a, MatRef b, bool wrap_phase_diff = false);
double batch_mse(MatRef a, MatRef b);
double batch_amp_grad(MatRef a, MatRef b, Matrix* grad_a);
double batch_pha_grad(MatRef a, MatRef b, Matrix* grad_a, bool wrap_phase_diff = false);
double batch_mse_grad(MatRef a, MatRef b, Matrix* grad_a);

// Contrastive loss with soft targets: rows of both matrices are
// L2-normalized, targets are the row-softmax of (e_I e_I^T)/tau, predictions
// the row-softmax of (e_b e_I^T)/tau; cross-entropy averaged over rows.
// One-directional (brain -> image) unless options.bidirectional.
double softclip_loss(MatRef e_b, MatRef e_i, double tau, bool bidirectional = false);
double softclip_loss_grad(MatRef e_b, MatRef e_i, double tau, Matrix* grad_b,
                          bool bidirectional = false);

// Entropy of the soft target distribution, the floor of softclip_loss for
// fixed targets (reached at e_b == e_I).
double softclip_target_entropy(MatRef e_i, double tau);

// Mean squared error between the refined brain embedding and the target.
double prior_loss(MatRef e_refined, MatRef e_i);
double prior_loss_grad(MatRef e_refined, MatRef e_i, Matrix* grad_refined);

LossReport l_semantic(MatRef e_b, MatRef e_refined, MatRef e_i, const LossWeights& w,
                      const LossOptions& opt);

// Semantic loss plus the Fourier cross-subject terms; x_i_hat is the adapter
// output for the new subject, x_j_hat the pooled partner voxels.
LossReport l_total(MatRef e_b, MatRef e_refined, MatRef e_i, MatRef x_i_hat, MatRef x_j_hat,
                   const LossWeights& w, const LossOptions& opt);

}  // namespace mindshot
