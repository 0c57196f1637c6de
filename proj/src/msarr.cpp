#include "mindshot/msarr.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace mindshot {

static_assert(std::endian::native == std::endian::little,
              "MSARR1 payload is little-endian; big-endian hosts are unsupported");

namespace {

void write_header_and_payload(const std::filesystem::path& path, const std::vector<Index>& dims,
                              const double* row_major, std::size_t count) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ArtifactError("cannot open for writing: " + path.string());
  out << "MSARR1 float64 " << dims.size();
  for (Index d : dims) out << ' ' << d;
  out << '\n';
  out.write(reinterpret_cast<const char*>(row_major),
            static_cast<std::streamsize>(count * sizeof(double)));
  if (!out) throw ArtifactError("write failed: " + path.string());
}

}  // namespace

void write_msarr(const std::filesystem::path& path, const Matrix& m) {
  // Eigen stores column-major; serialize row-major per the format contract.
  std::vector<double> buf(static_cast<std::size_t>(m.size()));
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c)
      buf[static_cast<std::size_t>(r * m.cols() + c)] = m(r, c);
  write_header_and_payload(path, {m.rows(), m.cols()}, buf.data(), buf.size());
}

void write_msarr(const std::filesystem::path& path, const Vector& v) {
  write_header_and_payload(path, {v.size()}, v.data(), static_cast<std::size_t>(v.size()));
}

MsArr read_msarr(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArtifactError("cannot open: " + path.string());
  std::string header;
  if (!std::getline(in, header)) throw ArtifactError("missing MSARR1 header: " + path.string());
  std::istringstream hs(header);
  std::string magic, dtype;
  std::size_t ndim = 0;
  hs >> magic >> dtype >> ndim;
  if (magic != "MSARR1") throw ArtifactError("bad magic in " + path.string());
  if (dtype != "float64") throw ArtifactError("unsupported dtype '" + dtype + "' in " + path.string());
  MsArr arr;
  std::size_t count = 1;
  for (std::size_t i = 0; i < ndim; ++i) {
    Index d = -1;
    hs >> d;
    if (d < 0) throw ArtifactError("bad dims in " + path.string());
    arr.dims.push_back(d);
    count *= static_cast<std::size_t>(d);
  }
  if (!hs) throw ArtifactError("truncated header in " + path.string());
  arr.data.resize(count);
  in.read(reinterpret_cast<char*>(arr.data.data()),
          static_cast<std::streamsize>(count * sizeof(double)));
  if (in.gcount() != static_cast<std::streamsize>(count * sizeof(double)))
    throw ArtifactError("truncated payload in " + path.string());
  return arr;
}

Matrix MsArr::as_matrix() const {
  if (dims.size() != 2) throw ArtifactError("expected 2-d array");
  Matrix m(dims[0], dims[1]);
  for (Index r = 0; r < dims[0]; ++r)
    for (Index c = 0; c < dims[1]; ++c)
      m(r, c) = data[static_cast<std::size_t>(r * dims[1] + c)];
  return m;
}

Vector MsArr::as_vector() const {
  if (dims.size() != 1) throw ArtifactError("expected 1-d array");
  return Eigen::Map<const Vector>(data.data(), dims[0]);
}

}  // namespace mindshot
