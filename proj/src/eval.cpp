#include "mindshot/eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace mindshot {

double cosine(VecRef a, VecRef b) {
  if (a.size() != b.size()) throw std::invalid_argument("cosine: length mismatch");
  const double denom = a.norm() * b.norm();
  if (denom == 0.0) return 0.0;
  return a.dot(b) / denom;
}

double two_way_identification(MatRef pred, MatRef targets) {
  const Index n = pred.rows();
  if (n != targets.rows() || pred.cols() != targets.cols())
    throw std::invalid_argument("two_way_identification: shape mismatch");
  if (n < 2) throw std::invalid_argument("two_way_identification: need at least two items");
  std::int64_t wins = 0, trials = 0;
  for (Index i = 0; i < n; ++i) {
    const double own = cosine(pred.row(i).transpose(), targets.row(i).transpose());
    for (Index j = 0; j < n; ++j) {
      if (j == i) continue;
      const double other = cosine(pred.row(i).transpose(), targets.row(j).transpose());
      wins += own > other ? 1 : 0;
      ++trials;
    }
  }
  return static_cast<double>(wins) / static_cast<double>(trials);
}

namespace {

// Rank of the truth row: how many gallery rows beat it (higher cosine, or
// equal cosine at a lower index).
Index truth_rank(VecRef p, MatRef gallery, Index truth) {
  const double own = cosine(p, gallery.row(truth).transpose());
  Index ahead = 0;
  for (Index g = 0; g < gallery.rows(); ++g) {
    if (g == truth) continue;
    const double c = cosine(p, gallery.row(g).transpose());
    if (c > own || (c == own && g < truth)) ++ahead;
  }
  return ahead;
}

}  // namespace

double topk_retrieval(MatRef pred, MatRef gallery, const std::vector<int>& truth, int k) {
  const Index n = pred.rows();
  if (static_cast<size_t>(n) != truth.size())
    throw std::invalid_argument("topk_retrieval: truth size mismatch");
  if (n == 0 || gallery.rows() == 0) throw std::invalid_argument("topk_retrieval: empty input");
  if (k < 1) throw std::invalid_argument("topk_retrieval: k must be positive");
  const Index kk = std::min<Index>(k, gallery.rows());
  Index hits = 0;
  for (Index i = 0; i < n; ++i) {
    const Index t = truth[static_cast<size_t>(i)];
    if (t < 0 || t >= gallery.rows())
      throw std::invalid_argument("topk_retrieval: truth index out of range");
    if (truth_rank(pred.row(i).transpose(), gallery, t) < kk) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

std::string reconstruct_by_retrieval(VecRef pred, const StimulusSet& set) {
  if (set.stimuli.empty()) throw std::invalid_argument("reconstruct_by_retrieval: empty set");
  size_t best = 0;
  double best_cos = cosine(pred, set.stimuli[0].embedding);
  for (size_t i = 1; i < set.stimuli.size(); ++i) {
    const double c = cosine(pred, set.stimuli[i].embedding);
    if (c > best_cos) best = i, best_cos = c;
  }
  return set.stimuli[best].id;
}

void EvalReport::validate() const {
  auto fraction = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!fraction(two_way_accuracy) || !fraction(top1) || !fraction(top5))
    throw NumericError("eval report: fraction out of [0, 1]");
  if (!(mean_cosine >= -1.0 - 1e-12 && mean_cosine <= 1.0 + 1e-12))
    throw NumericError("eval report: mean cosine out of [-1, 1]");
  if (n_test <= 0) throw NumericError("eval report: no test items");
}

EvalReport build_report(const EvalInputs& in) {
  const Index n = in.pred.rows();
  if (n == 0) throw std::invalid_argument("build_report: no items");
  if (in.targets.rows() != n || in.class_ids.size() != static_cast<size_t>(n) ||
      in.gallery_index.size() != static_cast<size_t>(n))
    throw std::invalid_argument("build_report: per-item arrays disagree");

  EvalReport r;
  r.n_test = static_cast<int>(n);
  r.two_way_accuracy = two_way_identification(in.pred, in.targets);
  r.top1 = topk_retrieval(in.pred, in.gallery, in.gallery_index, 1);
  r.top5 = topk_retrieval(in.pred, in.gallery, in.gallery_index, 5);

  std::map<int, ClassMetrics> by_class;
  double cos_sum = 0.0;
  for (Index i = 0; i < n; ++i) {
    const double c = cosine(in.pred.row(i).transpose(), in.targets.row(i).transpose());
    cos_sum += c;
    ClassMetrics& cm = by_class[in.class_ids[static_cast<size_t>(i)]];
    cm.class_id = in.class_ids[static_cast<size_t>(i)];
    cm.n += 1;
    cm.mean_cosine += c;
    const Index t = in.gallery_index[static_cast<size_t>(i)];
    if (truth_rank(in.pred.row(i).transpose(), in.gallery, t) < 1) cm.top1 += 1.0;
  }
  r.mean_cosine = cos_sum / static_cast<double>(n);
  for (auto& [cid, cm] : by_class) {
    cm.mean_cosine /= cm.n;
    cm.top1 /= cm.n;
    r.per_class.push_back(cm);
  }
  r.validate();
  return r;
}

}  // namespace mindshot
