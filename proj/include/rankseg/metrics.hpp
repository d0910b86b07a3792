#pragma once

#include <cstdint>
#include <vector>

namespace rankseg {

// K x K counts, rows = ground truth, cols = prediction. Pixels whose ground
// truth equals the ignore index are not counted at all.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int64_t num_classes);

  void accumulate(const std::vector<int64_t>& pred, const std::vector<int64_t>& gt,
                  int64_t ignore_index);
  void merge(const ConfusionMatrix& other);

  int64_t at(int64_t gt, int64_t pred) const { return counts_[gt * k_ + pred]; }
  int64_t& at(int64_t gt, int64_t pred) { return counts_[gt * k_ + pred]; }
  int64_t num_classes() const { return k_; }
  int64_t total() const;

 private:
  int64_t k_;
  std::vector<int64_t> counts_;
};

struct MiouResult {
  double miou = 0.0;
  std::vector<double> per_class_iou;  // -1 for classes with zero union
  ConfusionMatrix cm;
};

MiouResult miou_from_confusion(const ConfusionMatrix& cm);

MiouResult miou(const std::vector<int64_t>& pred_map, const std::vector<int64_t>& gt_map,
                int64_t num_classes, int64_t ignore_index);

// mAP with the "precision at each positive" formulation, ties broken by
// lower sample index. scores/targets are row-major [N, K]; classes with no
// positive sample are skipped, and it is an error if every class is skipped.
double mean_average_precision(const std::vector<double>& scores, const std::vector<int>& targets,
                              int64_t n_samples, int64_t n_classes);

// Spearman rank correlation with average ranks for ties.
double spearman_correlation(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace rankseg
