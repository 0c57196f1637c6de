#pragma once

#include <string>

#include "mindshot/types.hpp"

namespace mindshot {

// Phase convention: bins with amplitude below this are assigned phase 0
// (atan2(0,0) is implementation-defined otherwise).
inline constexpr double kPhaseEpsilon = 1e-12;

// A voxel vector pooled to the experiment's canonical length.
struct PooledVoxels {
  Vector values;
  std::string subject_id;
  std::string stimulus_id;
  int class_id = -1;
};

// Full two-sided spectrum of a real vector of length N.
struct Spectrum {
  Vector real;
  Vector imag;
  Vector amplitude;  // sqrt(real^2 + imag^2)
  Vector phase;      // atan2(imag, real) in (-pi, pi], 0 where amplitude < kPhaseEpsilon
  Index size() const { return real.size(); }
};

// output[i] = max over x[floor(i*V/L) .. ceil((i+1)*V/L) - 1], bit-exact.
// Requires V >= L >= 1.
Vector adaptive_max_pool(VecRef x, Index target_len);

// Unnormalized forward DFT: F[k] = sum_n x[n] exp(-i 2 pi k n / N).
Spectrum dft(VecRef x);

// (A, P) from real/imag parts with the small-amplitude phase convention.
void amplitude_phase(VecRef real, VecRef imag, Vector& amplitude, Vector& phase);

// Cosine/sine basis of the length-N DFT: real = cos_basis * x,
// imag = -sin_basis * x. Shared by the spectral-loss gradients, which are the
// transpose of this linear map. Cached per N.
struct DftBasis {
  Matrix cos;  // N x N, cos(2 pi k n / N)
  Matrix sin;  // N x N, sin(2 pi k n / N)
};
const DftBasis& dft_basis(Index n);

}  // namespace mindshot
