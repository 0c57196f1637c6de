#include "mindshot/losses.hpp"

#include <cmath>

namespace mindshot {

void LossWeights::validate() const {
  if (softclip < 0 || prior < 0 || amp < 0 || pha < 0 || mse < 0)
    throw ConfigError("loss weights must be nonnegative");
}

namespace {

void check_pair(VecRef a, VecRef b, const char* who) {
  if (a.size() != b.size())
    throw std::invalid_argument(std::string(who) + ": length mismatch");
  if (a.size() == 0) throw std::invalid_argument(std::string(who) + ": empty input");
}

double phase_diff(double pi_, double pj, bool wrap) {
  const double d = pi_ - pj;
  return wrap ? std::remainder(d, 2.0 * M_PI) : d;
}

// dL/dx from per-bin amplitude/phase cotangents, via the transpose of the
// DFT linear map (real = C x, imag = -S x).
Vector spectral_backward(const Spectrum& s, const Vector& g_amp, const Vector& g_pha) {
  const Index n = s.size();
  Vector g_real(n), g_imag(n);
  for (Index k = 0; k < n; ++k) {
    const double a = s.amplitude[k];
    if (a < kPhaseEpsilon) {  // phase pinned to 0 there; amplitude subgradient 0
      g_real[k] = 0.0;
      g_imag[k] = 0.0;
      continue;
    }
    g_real[k] = g_amp[k] * s.real[k] / a - g_pha[k] * s.imag[k] / (a * a);
    g_imag[k] = g_amp[k] * s.imag[k] / a + g_pha[k] * s.real[k] / (a * a);
  }
  const DftBasis& basis = dft_basis(n);
  return basis.cos.transpose() * g_real - basis.sin.transpose() * g_imag;
}

}  // namespace

double l_amp(VecRef x_i, VecRef x_j) {
  check_pair(x_i, x_j, "l_amp");
  const Spectrum si = dft(x_i), sj = dft(x_j);
  return (si.amplitude - sj.amplitude).squaredNorm() / static_cast<double>(x_i.size());
}

double l_pha(VecRef x_i, VecRef x_j, bool wrap_phase_diff) {
  check_pair(x_i, x_j, "l_pha");
  const Spectrum si = dft(x_i), sj = dft(x_j);
  double acc = 0.0;
  for (Index k = 0; k < x_i.size(); ++k) {
    const double d = phase_diff(si.phase[k], sj.phase[k], wrap_phase_diff);
    acc += d * d;
  }
  return acc / static_cast<double>(x_i.size());
}

double l_fourier(VecRef x_i, VecRef x_j, bool wrap_phase_diff) {
  return l_amp(x_i, x_j) + l_pha(x_i, x_j, wrap_phase_diff);
}

double l_mse_signal(VecRef x_i, VecRef x_j) {
  check_pair(x_i, x_j, "l_mse_signal");
  return (x_i - x_j).squaredNorm() / static_cast<double>(x_i.size());
}

double l_amp_grad(VecRef x_i, VecRef x_j, Vector* grad_i, Vector* grad_j) {
  check_pair(x_i, x_j, "l_amp");
  const Index n = x_i.size();
  const Spectrum si = dft(x_i), sj = dft(x_j);
  const Vector diff = si.amplitude - sj.amplitude;
  const Vector zero = Vector::Zero(n);
  if (grad_i) *grad_i += spectral_backward(si, (2.0 / n) * diff, zero);
  if (grad_j) *grad_j += spectral_backward(sj, (-2.0 / n) * diff, zero);
  return diff.squaredNorm() / static_cast<double>(n);
}

double l_pha_grad(VecRef x_i, VecRef x_j, Vector* grad_i, Vector* grad_j,
                  bool wrap_phase_diff) {
  check_pair(x_i, x_j, "l_pha");
  const Index n = x_i.size();
  const Spectrum si = dft(x_i), sj = dft(x_j);
  Vector diff(n);
  for (Index k = 0; k < n; ++k)
    diff[k] = phase_diff(si.phase[k], sj.phase[k], wrap_phase_diff);
  const Vector zero = Vector::Zero(n);
  if (grad_i) *grad_i += spectral_backward(si, zero, (2.0 / n) * diff);
  if (grad_j) *grad_j += spectral_backward(sj, zero, (-2.0 / n) * diff);
  return diff.squaredNorm() / static_cast<double>(n);
}

double l_mse_signal_grad(VecRef x_i, VecRef x_j, Vector* grad_i, Vector* grad_j) {
  check_pair(x_i, x_j, "l_mse_signal");
  const double n = static_cast<double>(x_i.size());
  if (grad_i) *grad_i += (2.0 / n) * (x_i - x_j);
  if (grad_j) *grad_j += (2.0 / n) * (x_j - x_i);
  return (x_i - x_j).squaredNorm() / n;
}

namespace {

template <typename PairLoss>
double batch_pair(MatRef a, MatRef b, PairLoss&& per_row) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument("batch pair loss: shape mismatch");
  if (a.rows() == 0) throw std::invalid_argument("batch pair loss: empty batch");
  double acc = 0.0;
  for (Index r = 0; r < a.rows(); ++r) acc += per_row(r);
  return acc / static_cast<double>(a.rows());
}

}  // namespace

double batch_amp(MatRef a, MatRef b) {
  return batch_pair(a, b, [&](Index r) { return l_amp(a.row(r).transpose(), b.row(r).transpose()); });
}

double batch_pha(MatRef a, MatRef b, bool wrap) {
  return batch_pair(a, b,
                    [&](Index r) { return l_pha(a.row(r).transpose(), b.row(r).transpose(), wrap); });
}

double batch_mse(MatRef a, MatRef b) {
  return batch_pair(
      a, b, [&](Index r) { return l_mse_signal(a.row(r).transpose(), b.row(r).transpose()); });
}

double batch_amp_grad(MatRef a, MatRef b, Matrix* grad_a) {
  const double inv_b = 1.0 / static_cast<double>(a.rows());
  return batch_pair(a, b, [&](Index r) {
    Vector g = Vector::Zero(a.cols());
    const double v = l_amp_grad(a.row(r).transpose(), b.row(r).transpose(), &g);
    if (grad_a) grad_a->row(r) += inv_b * g.transpose();
    return v;
  });
}

double batch_pha_grad(MatRef a, MatRef b, Matrix* grad_a, bool wrap) {
  const double inv_b = 1.0 / static_cast<double>(a.rows());
  return batch_pair(a, b, [&](Index r) {
    Vector g = Vector::Zero(a.cols());
    const double v = l_pha_grad(a.row(r).transpose(), b.row(r).transpose(), &g, nullptr, wrap);
    if (grad_a) grad_a->row(r) += inv_b * g.transpose();
    return v;
  });
}

double batch_mse_grad(MatRef a, MatRef b, Matrix* grad_a) {
  const double inv_b = 1.0 / static_cast<double>(a.rows());
  return batch_pair(a, b, [&](Index r) {
    Vector g = Vector::Zero(a.cols());
    const double v = l_mse_signal_grad(a.row(r).transpose(), b.row(r).transpose(), &g);
    if (grad_a) grad_a->row(r) += inv_b * g.transpose();
    return v;
  });
}

namespace {

Matrix normalize_rows(MatRef m, const char* who) {
  Matrix out(m.rows(), m.cols());
  for (Index r = 0; r < m.rows(); ++r) {
    const double norm = m.row(r).norm();
    if (!(norm > 0.0))
      throw std::invalid_argument(std::string(who) + ": zero-norm embedding row");
    out.row(r) = m.row(r) / norm;
  }
  return out;
}

// Row-wise softmax and log-softmax, max-shifted for stability.
void row_softmax(const Matrix& s, Matrix& p, Matrix& logp) {
  p.resize(s.rows(), s.cols());
  logp.resize(s.rows(), s.cols());
  for (Index r = 0; r < s.rows(); ++r) {
    const double m = s.row(r).maxCoeff();
    const Eigen::RowVectorXd shifted = s.row(r).array() - m;
    const double lse = std::log(shifted.array().exp().sum());
    logp.row(r) = shifted.array() - lse;
    p.row(r) = logp.row(r).array().exp();
  }
}

void check_softclip_inputs(MatRef e_b, MatRef e_i, double tau) {
  if (tau <= 0.0) throw std::invalid_argument("softclip: tau must be positive");
  if (e_b.rows() != e_i.rows() || e_b.cols() != e_i.cols())
    throw std::invalid_argument("softclip: shape mismatch");
  if (e_b.rows() < 2) throw std::invalid_argument("softclip: batch must have B >= 2");
}

// Backward through per-row L2 normalization: g_e = (g_u - (g_u . u) u) / |e|.
Matrix normalization_backward(MatRef e, const Matrix& unit, const Matrix& g_unit) {
  Matrix g(e.rows(), e.cols());
  for (Index r = 0; r < e.rows(); ++r) {
    const double norm = e.row(r).norm();
    const double dot = g_unit.row(r).dot(unit.row(r));
    g.row(r) = (g_unit.row(r) - dot * unit.row(r)) / norm;
  }
  return g;
}

}  // namespace

double softclip_target_entropy(MatRef e_i, double tau) {
  if (tau <= 0.0) throw std::invalid_argument("softclip: tau must be positive");
  const Matrix img = normalize_rows(e_i, "softclip");
  Matrix t, logt;
  row_softmax((img * img.transpose()) / tau, t, logt);
  return -(t.array() * logt.array()).sum() / static_cast<double>(e_i.rows());
}

double softclip_loss(MatRef e_b, MatRef e_i, double tau, bool bidirectional) {
  return softclip_loss_grad(e_b, e_i, tau, nullptr, bidirectional);
}

double softclip_loss_grad(MatRef e_b, MatRef e_i, double tau, Matrix* grad_b,
                          bool bidirectional) {
  check_softclip_inputs(e_b, e_i, tau);
  const Index batch = e_b.rows();
  const Matrix brain = normalize_rows(e_b, "softclip");
  const Matrix img = normalize_rows(e_i, "softclip");

  Matrix targets, logt;
  row_softmax((img * img.transpose()) / tau, targets, logt);

  Matrix p_fwd, logp_fwd;
  row_softmax((brain * img.transpose()) / tau, p_fwd, logp_fwd);
  double loss = -(targets.array() * logp_fwd.array()).sum() / static_cast<double>(batch);

  Matrix g_unit;  // d loss / d normalized brain rows
  if (grad_b)
    g_unit = ((p_fwd - targets) * img) / (tau * static_cast<double>(batch));

  if (bidirectional) {
    Matrix p_rev, logp_rev;
    row_softmax((img * brain.transpose()) / tau, p_rev, logp_rev);
    const double rev = -(targets.array() * logp_rev.array()).sum() / static_cast<double>(batch);
    if (grad_b) {
      const Matrix g_rev = ((p_rev - targets).transpose() * img) / (tau * static_cast<double>(batch));
      g_unit = 0.5 * (g_unit + g_rev);
    }
    loss = 0.5 * (loss + rev);
  }

  if (grad_b) *grad_b += normalization_backward(e_b, brain, g_unit);
  return loss;
}

double prior_loss(MatRef e_refined, MatRef e_i) {
  return prior_loss_grad(e_refined, e_i, nullptr);
}

double prior_loss_grad(MatRef e_refined, MatRef e_i, Matrix* grad_refined) {
  if (e_refined.rows() != e_i.rows() || e_refined.cols() != e_i.cols())
    throw std::invalid_argument("prior_loss: shape mismatch");
  const double count = static_cast<double>(e_refined.size());
  if (count == 0) throw std::invalid_argument("prior_loss: empty input");
  if (grad_refined) *grad_refined += (2.0 / count) * (e_refined - e_i);
  return (e_refined - e_i).squaredNorm() / count;
}

LossReport l_semantic(MatRef e_b, MatRef e_refined, MatRef e_i, const LossWeights& w,
                      const LossOptions& opt) {
  w.validate();
  LossReport r;
  r.components["softclip"] = softclip_loss(e_b, e_i, opt.tau, opt.bidirectional);
  r.components["prior"] = prior_loss(e_refined, e_i);
  r.total = w.softclip * r.components["softclip"] + w.prior * r.components["prior"];
  return r;
}

LossReport l_total(MatRef e_b, MatRef e_refined, MatRef e_i, MatRef x_i_hat, MatRef x_j_hat,
                   const LossWeights& w, const LossOptions& opt) {
  LossReport r = l_semantic(e_b, e_refined, e_i, w, opt);
  r.components["amp"] = batch_amp(x_i_hat, x_j_hat);
  r.components["pha"] = batch_pha(x_i_hat, x_j_hat, opt.wrap_phase_diff);
  r.total += w.amp * r.components["amp"] + w.pha * r.components["pha"];
  return r;
}

}  // namespace mindshot
