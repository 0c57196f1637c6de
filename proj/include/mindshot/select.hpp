#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mindshot/spectral.hpp"
#include "mindshot/types.hpp"

namespace mindshot {

// Floor for the fitted standard deviation; keeps zero-variance classes valid.
inline constexpr double kStdFloor = 1e-9;

enum class ProjectionMethod { pca, tsne };
enum class SelectionStrategy { kda_max, kda_min, random };

ProjectionMethod projection_method_from_string(const std::string& s);
SelectionStrategy strategy_from_string(const std::string& s);
std::string to_string(ProjectionMethod m);
std::string to_string(SelectionStrategy s);

// 1-D density picture of one class: each sample's projected coordinate plus
// the Gaussian fitted over them.
struct ClassDensityModel {
  int class_id = -1;
  ProjectionMethod method = ProjectionMethod::pca;
  std::vector<std::string> stimulus_ids;  // aligned with coordinates
  Vector coordinates;
  double mean = 0.0;
  double std_dev = kStdFloor;
};

// Projects the pooled samples to one dimension. pca projects onto the first
// principal component with the sign fixed so the first nonzero loading is
// positive; tsne runs a seeded exact 1-D embedding with perplexity
// min(30, max(1, (n-1)/3)). Three samples or fewer always use pca.
Vector project_1d(const std::vector<PooledVoxels>& samples, ProjectionMethod method,
                  std::uint64_t seed);

// Maximum-likelihood mean and population std, floored at kStdFloor.
void fit_gaussian(VecRef coordinates, double* mean, double* std_dev);

double gaussian_pdf(double x, double mean, double std_dev);

ClassDensityModel fit_class_density(int class_id, const std::vector<PooledVoxels>& samples,
                                    ProjectionMethod method, std::uint64_t seed);

// kda_max picks the sample nearest the fitted mean (the densest point under
// the Gaussian), kda_min the farthest; exact distance ties go to the
// lexicographically smaller stimulus_id. random is a seeded uniform pick.
std::string select_stimulus(const ClassDensityModel& model, SelectionStrategy strategy,
                            std::uint64_t seed);

}  // namespace mindshot
