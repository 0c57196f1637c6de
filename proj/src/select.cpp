#include "mindshot/select.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>

#include "mindshot/rng.hpp"

namespace mindshot {

ProjectionMethod projection_method_from_string(const std::string& s) {
  if (s == "pca") return ProjectionMethod::pca;
  if (s == "tsne") return ProjectionMethod::tsne;
  throw ConfigError("unknown projection method: " + s);
}

SelectionStrategy strategy_from_string(const std::string& s) {
  if (s == "kda_max") return SelectionStrategy::kda_max;
  if (s == "kda_min") return SelectionStrategy::kda_min;
  if (s == "random") return SelectionStrategy::random;
  throw ConfigError("unknown selection strategy: " + s);
}

std::string to_string(ProjectionMethod m) {
  return m == ProjectionMethod::pca ? "pca" : "tsne";
}

std::string to_string(SelectionStrategy s) {
  switch (s) {
    case SelectionStrategy::kda_max: return "kda_max";
    case SelectionStrategy::kda_min: return "kda_min";
    default: return "random";
  }
}

namespace {

Matrix stack_samples(const std::vector<PooledVoxels>& samples) {
  if (samples.empty()) throw std::invalid_argument("project_1d: empty sample list");
  const Index d = samples[0].values.size();
  Matrix x(static_cast<Index>(samples.size()), d);
  for (size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].values.size() != d)
      throw std::invalid_argument("project_1d: samples differ in length");
    x.row(static_cast<Index>(i)) = samples[i].values.transpose();
  }
  return x;
}

Vector pca_1d(const Matrix& x) {
  const Index n = x.rows();
  const Matrix centered = x.rowwise() - x.colwise().mean();
  const Matrix cov = centered.transpose() * centered / static_cast<double>(n);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
  Vector v = eig.eigenvectors().col(x.cols() - 1);  // eigenvalues ascend
  for (Index i = 0; i < v.size(); ++i) {
    if (v[i] != 0.0) {
      if (v[i] < 0.0) v = -v;
      break;
    }
  }
  return centered * v;
}

// Classic exact t-SNE specialized to one output dimension: per-point
// precisions found by bisection on the entropy, early exaggeration, and
// momentum descent with adaptive gains. Deterministic for a fixed seed.
Vector tsne_1d(const Matrix& x, std::uint64_t seed) {
  const Index n = x.rows();
  const double perplexity =
      std::min(30.0, std::max(1.0, (static_cast<double>(n) - 1.0) / 3.0));
  const double target_entropy = std::log(perplexity);

  Matrix d2(n, n);  // pairwise squared distances
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) d2(i, j) = (x.row(i) - x.row(j)).squaredNorm();

  Matrix p = Matrix::Zero(n, n);
  for (Index i = 0; i < n; ++i) {
    double beta = 1.0, lo = 0.0, hi = std::numeric_limits<double>::infinity();
    Vector row(n);
    for (int it = 0; it < 64; ++it) {
      double sum = 0.0;
      for (Index j = 0; j < n; ++j) {
        row[j] = (j == i) ? 0.0 : std::exp(-beta * d2(i, j));
        sum += row[j];
      }
      double entropy;
      if (sum <= 0.0) {
        entropy = 0.0;  // all mass collapsed; loosen beta
      } else {
        row /= sum;
        entropy = 0.0;
        for (Index j = 0; j < n; ++j)
          if (row[j] > 0.0) entropy -= row[j] * std::log(row[j]);
      }
      const double diff = entropy - target_entropy;
      if (std::abs(diff) < 1e-7) break;
      if (diff > 0.0) {  // too spread out, sharpen
        lo = beta;
        beta = std::isinf(hi) ? beta * 2.0 : 0.5 * (beta + hi);
      } else {
        hi = beta;
        beta = 0.5 * (beta + lo);
      }
    }
    p.row(i) = row.transpose();
  }
  p = (p + p.transpose()) / (2.0 * static_cast<double>(n));
  p = p.cwiseMax(1e-12);

  // PCA initialization at unit scale: starting in principal-component order
  // spares the 1-D descent from untangling crossings it cannot pass through,
  // and unit std puts the layout where the Student-t kernel has contrast.
  // The seed only jitters exact ties.
  Rng rng(seed);
  Vector y = pca_1d(x);
  const double y_scale = std::sqrt(y.squaredNorm() / static_cast<double>(n));
  if (y_scale > 1e-12) {
    y /= y_scale;
    for (Index i = 0; i < n; ++i) y[i] += 1e-4 * rng.normal();
  } else {
    for (Index i = 0; i < n; ++i) y[i] = 1e-4 * rng.normal();
  }
  Vector vel = Vector::Zero(n), gains = Vector::Ones(n);

  const int iters = 500;
  const int exaggeration_until = 100;
  // A step larger than the inter-point gaps reorders points, which a 1-D
  // embedding cannot recover from; keep the rate well under gap scale.
  const double exaggeration = 4.0, lr = 10.0;
  for (int it = 0; it < iters; ++it) {
    const double ex = it < exaggeration_until ? exaggeration : 1.0;
    const double momentum = it < 250 ? 0.5 : 0.8;

    Matrix w(n, n);  // (1 + |y_i - y_j|^2)^-1
    double qsum = 0.0;
    for (Index i = 0; i < n; ++i) {
      w(i, i) = 0.0;
      for (Index j = i + 1; j < n; ++j) {
        const double d = y[i] - y[j];
        const double v = 1.0 / (1.0 + d * d);
        w(i, j) = w(j, i) = v;
        qsum += 2.0 * v;
      }
    }
    Vector grad = Vector::Zero(n);
    for (Index i = 0; i < n; ++i) {
      for (Index j = 0; j < n; ++j) {
        if (i == j) continue;
        const double q = w(i, j) / qsum;
        grad[i] += 4.0 * (ex * p(i, j) - q) * w(i, j) * (y[i] - y[j]);
      }
    }
    for (Index i = 0; i < n; ++i) {
      gains[i] = (grad[i] * vel[i] > 0.0) ? gains[i] * 0.8 : gains[i] + 0.2;
      gains[i] = std::max(gains[i], 0.01);
      vel[i] = momentum * vel[i] - lr * gains[i] * grad[i];
      y[i] += vel[i];
    }
    y.array() -= y.mean();
  }
  return y;
}

}  // namespace

Vector project_1d(const std::vector<PooledVoxels>& samples, ProjectionMethod method,
                  std::uint64_t seed) {
  const Matrix x = stack_samples(samples);
  if (method == ProjectionMethod::pca || x.rows() <= 3) return pca_1d(x);
  return tsne_1d(x, seed);
}

void fit_gaussian(VecRef coordinates, double* mean, double* std_dev) {
  if (coordinates.size() == 0) throw std::invalid_argument("fit_gaussian: no coordinates");
  if (!coordinates.allFinite())
    throw std::invalid_argument("fit_gaussian: coordinates must be finite");
  const double m = coordinates.mean();
  const double var =
      (coordinates.array() - m).square().sum() / static_cast<double>(coordinates.size());
  if (mean) *mean = m;
  if (std_dev) *std_dev = std::max(std::sqrt(var), kStdFloor);
}

double gaussian_pdf(double x, double mean, double std_dev) {
  const double z = (x - mean) / std_dev;
  return std::exp(-0.5 * z * z) / (std_dev * std::sqrt(2.0 * M_PI));
}

ClassDensityModel fit_class_density(int class_id, const std::vector<PooledVoxels>& samples,
                                    ProjectionMethod method, std::uint64_t seed) {
  ClassDensityModel model;
  model.class_id = class_id;
  model.method = method;
  model.coordinates = project_1d(samples, method, seed);
  for (const PooledVoxels& s : samples) {
    if (s.class_id != class_id)
      throw std::invalid_argument("fit_class_density: sample from a different class");
    model.stimulus_ids.push_back(s.stimulus_id);
  }
  fit_gaussian(model.coordinates, &model.mean, &model.std_dev);
  return model;
}

std::string select_stimulus(const ClassDensityModel& model, SelectionStrategy strategy,
                            std::uint64_t seed) {
  const Index n = model.coordinates.size();
  if (n == 0 || model.stimulus_ids.size() != static_cast<size_t>(n))
    throw std::invalid_argument("select_stimulus: empty or inconsistent class");
  if (strategy == SelectionStrategy::random) {
    Rng rng(seed);
    return model.stimulus_ids[static_cast<size_t>(rng.uniform_int(0, n - 1))];
  }
  const bool want_near = strategy == SelectionStrategy::kda_max;
  Index best = 0;
  double best_dist = std::abs(model.coordinates[0] - model.mean);
  for (Index i = 1; i < n; ++i) {
    const double dist = std::abs(model.coordinates[i] - model.mean);
    const bool better = want_near ? dist < best_dist : dist > best_dist;
    if (better || (dist == best_dist && model.stimulus_ids[static_cast<size_t>(i)] <
                                            model.stimulus_ids[static_cast<size_t>(best)]))
      best = i, best_dist = dist;
  }
  return model.stimulus_ids[static_cast<size_t>(best)];
}

}  // namespace mindshot
