#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mindshot/types.hpp"

namespace mindshot {

// MSARR1 array container: one ASCII header line
//   MSARR1 <dtype> <ndim> <dims...>\n
// followed by the little-endian float64 payload, row-major.
// Only dtype float64 is produced or accepted.

void write_msarr(const std::filesystem::path& path, const Matrix& m);
void write_msarr(const std::filesystem::path& path, const Vector& v);

struct MsArr {
  std::vector<Index> dims;
  std::vector<double> data;  // row-major

  Matrix as_matrix() const;  // ndim must be 2
  Vector as_vector() const;  // ndim must be 1
};

MsArr read_msarr(const std::filesystem::path& path);

}  // namespace mindshot
