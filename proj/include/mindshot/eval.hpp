#pragma once

#include <string>
#include <vector>

#include "mindshot/synthgen.hpp"
#include "mindshot/types.hpp"

namespace mindshot {

// Cosine similarity with the degenerate-input convention cos(0, y) = 0.
double cosine(VecRef a, VecRef b);

// For every item, its prediction is compared against the true target and
// each distractor target; the result is the fraction of comparisons in
// which the true target's cosine is strictly larger. Exhaustive over all
// ordered pairs, so the result is deterministic.
double two_way_identification(MatRef pred, MatRef targets);

// Fraction of items whose true gallery row is among the k nearest gallery
// rows by cosine; equal cosines rank by gallery index.
double topk_retrieval(MatRef pred, MatRef gallery, const std::vector<int>& truth, int k);

// Nearest stimulus by cosine; exact ties (including a prediction orthogonal
// to everything) resolve to the lowest index.
std::string reconstruct_by_retrieval(VecRef pred, const StimulusSet& set);

struct ClassMetrics {
  int class_id = -1;
  int n = 0;
  double top1 = 0.0;
  double mean_cosine = 0.0;
};

struct EvalReport {
  double two_way_accuracy = 0.0;
  double top1 = 0.0;
  double top5 = 0.0;
  double mean_cosine = 0.0;
  int n_test = 0;
  std::vector<ClassMetrics> per_class;  // ascending class_id

  void validate() const;
};

struct EvalInputs {
  Matrix pred;     // n x E predicted embeddings
  Matrix targets;  // n x E true embeddings, row-aligned with pred
  Matrix gallery;  // G x E candidate embeddings (each stimulus once)
  std::vector<int> gallery_index;  // truth row in the gallery, per item
  std::vector<int> class_ids;      // per item
};

EvalReport build_report(const EvalInputs& in);

}  // namespace mindshot
