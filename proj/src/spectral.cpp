#include "mindshot/spectral.hpp"

#include <unsupported/Eigen/FFT>

#include <cmath>
#include <complex>
#include <map>
#include <mutex>
#include <vector>

namespace mindshot {

Vector adaptive_max_pool(VecRef x, Index target_len) {
  const Index v = x.size();
  if (target_len < 1) throw std::invalid_argument("adaptive_max_pool: target length must be >= 1");
  if (v < target_len)
    throw std::invalid_argument("adaptive_max_pool: input shorter than target length");
  Vector out(target_len);
  for (Index i = 0; i < target_len; ++i) {
    const Index start = (i * v) / target_len;
    const Index end = ((i + 1) * v + target_len - 1) / target_len;  // exclusive, = ceil
    out[i] = x.segment(start, end - start).maxCoeff();
  }
  return out;
}

void amplitude_phase(VecRef real, VecRef imag, Vector& amplitude, Vector& phase) {
  const Index n = real.size();
  if (imag.size() != n) throw std::invalid_argument("amplitude_phase: length mismatch");
  amplitude.resize(n);
  phase.resize(n);
  for (Index k = 0; k < n; ++k) {
    amplitude[k] = std::hypot(real[k], imag[k]);
    phase[k] = amplitude[k] < kPhaseEpsilon ? 0.0 : std::atan2(imag[k], real[k]);
  }
}

Spectrum dft(VecRef x) {
  const Index n = x.size();
  if (n < 1) throw std::invalid_argument("dft: empty input");
  if (!x.allFinite()) throw std::invalid_argument("dft: non-finite input");
  Spectrum s;
  s.real.resize(n);
  s.imag.resize(n);
  if (n == 1) {
    s.real[0] = x[0];
    s.imag[0] = 0.0;
  } else {
    std::vector<std::complex<double>> in(static_cast<std::size_t>(n)), out;
    for (Index i = 0; i < n; ++i) in[static_cast<std::size_t>(i)] = {x[i], 0.0};
    Eigen::FFT<double> fft;
    fft.fwd(out, in);
    for (Index k = 0; k < n; ++k) {
      s.real[k] = out[static_cast<std::size_t>(k)].real();
      s.imag[k] = out[static_cast<std::size_t>(k)].imag();
    }
  }
  amplitude_phase(s.real, s.imag, s.amplitude, s.phase);
  return s;
}

const DftBasis& dft_basis(Index n) {
  static std::mutex mu;
  static std::map<Index, DftBasis> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  DftBasis b;
  b.cos.resize(n, n);
  b.sin.resize(n, n);
  const double w = 2.0 * M_PI / static_cast<double>(n);
  for (Index k = 0; k < n; ++k)
    for (Index j = 0; j < n; ++j) {
      const double a = w * static_cast<double>(k) * static_cast<double>(j);
      b.cos(k, j) = std::cos(a);
      b.sin(k, j) = std::sin(a);
    }
  return cache.emplace(n, std::move(b)).first->second;
}

}  // namespace mindshot
