#include "rankseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace rankseg {

ConfusionMatrix::ConfusionMatrix(int64_t num_classes)
    : k_(num_classes), counts_(static_cast<size_t>(num_classes * num_classes), 0) {
  if (num_classes < 1) throw std::invalid_argument("confusion matrix needs at least one class");
}

void ConfusionMatrix::accumulate(const std::vector<int64_t>& pred, const std::vector<int64_t>& gt,
                                 int64_t ignore_index) {
  if (pred.size() != gt.size()) {
    throw std::invalid_argument("confusion matrix: pred/gt size mismatch");
  }
  for (size_t i = 0; i < gt.size(); ++i) {
    int64_t g = gt[i];
    if (g == ignore_index) continue;
    int64_t p = pred[i];
    if (g < 0 || g >= k_) throw std::invalid_argument("confusion matrix: gt class " + std::to_string(g) + " out of range");
    if (p < 0 || p >= k_) throw std::invalid_argument("confusion matrix: pred class " + std::to_string(p) + " out of range");
    ++at(g, p);
  }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.k_ != k_) throw std::invalid_argument("confusion matrix: class count mismatch");
  for (size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

int64_t ConfusionMatrix::total() const {
  return std::accumulate(counts_.begin(), counts_.end(), int64_t{0});
}

MiouResult miou_from_confusion(const ConfusionMatrix& cm) {
  int64_t k = cm.num_classes();
  MiouResult result{0.0, std::vector<double>(static_cast<size_t>(k), -1.0), cm};
  double sum = 0.0;
  int64_t evaluated = 0;
  for (int64_t c = 0; c < k; ++c) {
    int64_t row = 0, col = 0;
    for (int64_t j = 0; j < k; ++j) {
      row += cm.at(c, j);
      col += cm.at(j, c);
    }
    int64_t inter = cm.at(c, c);
    int64_t uni = row + col - inter;
    if (uni == 0) continue;
    double iou = static_cast<double>(inter) / static_cast<double>(uni);
    result.per_class_iou[static_cast<size_t>(c)] = iou;
    sum += iou;
    ++evaluated;
  }
  if (evaluated == 0) throw std::runtime_error("miou: no class has nonzero union");
  result.miou = sum / static_cast<double>(evaluated);
  return result;
}

MiouResult miou(const std::vector<int64_t>& pred_map, const std::vector<int64_t>& gt_map,
                int64_t num_classes, int64_t ignore_index) {
  ConfusionMatrix cm(num_classes);
  cm.accumulate(pred_map, gt_map, ignore_index);
  return miou_from_confusion(cm);
}

double mean_average_precision(const std::vector<double>& scores, const std::vector<int>& targets,
                              int64_t n_samples, int64_t n_classes) {
  if (static_cast<int64_t>(scores.size()) != n_samples * n_classes ||
      scores.size() != targets.size()) {
    throw std::invalid_argument("mean_average_precision: shape mismatch");
  }
  double ap_sum = 0.0;
  int64_t evaluated = 0;
  std::vector<int64_t> order(static_cast<size_t>(n_samples));
  for (int64_t c = 0; c < n_classes; ++c) {
    int64_t positives = 0;
    for (int64_t i = 0; i < n_samples; ++i) positives += targets[i * n_classes + c] != 0 ? 1 : 0;
    if (positives == 0) continue;

    std::iota(order.begin(), order.end(), int64_t{0});
    std::sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
      double sa = scores[a * n_classes + c];
      double sb = scores[b * n_classes + c];
      if (sa != sb) return sa > sb;
      return a < b;
    });

    double precision_sum = 0.0;
    int64_t hits = 0;
    for (int64_t rank = 0; rank < n_samples; ++rank) {
      if (targets[order[static_cast<size_t>(rank)] * n_classes + c] != 0) {
        ++hits;
        precision_sum += static_cast<double>(hits) / static_cast<double>(rank + 1);
      }
    }
    ap_sum += precision_sum / static_cast<double>(positives);
    ++evaluated;
  }
  if (evaluated == 0) throw std::runtime_error("mean_average_precision: no class has any positive");
  return ap_sum / static_cast<double>(evaluated);
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& v) {
  size_t n = v.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(n, 0.0);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
    double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (size_t t = i; t <= j; ++t) ranks[order[t]] = avg;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman_correlation(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw std::invalid_argument("spearman_correlation: needs two equal-length vectors of size >= 2");
  }
  std::vector<double> rx = average_ranks(x);
  std::vector<double> ry = average_ranks(y);
  double mx = 0.0, my = 0.0;
  for (size_t i = 0; i < rx.size(); ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= static_cast<double>(rx.size());
  my /= static_cast<double>(ry.size());
  double num = 0.0, dx = 0.0, dy = 0.0;
  for (size_t i = 0; i < rx.size(); ++i) {
    double a = rx[i] - mx;
    double b = ry[i] - my;
    num += a * b;
    dx += a * a;
    dy += b * b;
  }
  if (dx == 0.0 || dy == 0.0) return 0.0;
  return num / std::sqrt(dx * dy);
}

}  // namespace rankseg
