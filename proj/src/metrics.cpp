#include "cali/metrics.hpp"

#include "cali/losses.hpp"

namespace cali {

ConfusionMatrix::ConfusionMatrix(int num_classes) : k_(num_classes) {
  if (k_ < 2) throw ConfigError("confusion_matrix: need at least 2 classes, got " + std::to_string(k_));
  counts_.assign(static_cast<size_t>(k_) * k_, 0);
}

void ConfusionMatrix::add(const ClassMap& truth, const ClassMap& pred) {
  if (truth.rows != pred.rows || truth.cols != pred.cols)
    throw DimensionError("confusion_matrix: truth is " + std::to_string(truth.rows) + "x" +
                         std::to_string(truth.cols) + " but prediction is " +
                         std::to_string(pred.rows) + "x" + std::to_string(pred.cols));
  for (size_t i = 0; i < truth.cells.size(); ++i) {
    int t = truth.cells[i], p = pred.cells[i];
    if (t >= k_ || p >= k_)
      throw ValidationError("confusion_matrix: class id " + std::to_string(std::max(t, p)) +
                            " out of range for " + std::to_string(k_) + " classes");
    ++counts_[static_cast<size_t>(t) * k_ + p];
  }
  total_ += static_cast<int64_t>(truth.cells.size());
}

int64_t ConfusionMatrix::at(int truth_class, int pred_class) const {
  if (truth_class < 0 || truth_class >= k_ || pred_class < 0 || pred_class >= k_)
    throw UsageError("confusion_matrix: index out of range");
  return counts_[static_cast<size_t>(truth_class) * k_ + pred_class];
}

IouReport iou_from_confusion(const ConfusionMatrix& cm) {
  int k = cm.num_classes();
  IouReport rep;
  rep.iou.assign(static_cast<size_t>(k), 0.0);
  rep.present.assign(static_cast<size_t>(k), false);
  double sum = 0.0;
  for (int c = 0; c < k; ++c) {
    int64_t tp = cm.at(c, c), fp = 0, fn = 0;
    for (int other = 0; other < k; ++other) {
      if (other == c) continue;
      fp += cm.at(other, c);
      fn += cm.at(c, other);
    }
    int64_t denom = tp + fp + fn;
    if (denom == 0) continue;  // class absent everywhere: excluded from the mean
    rep.present[static_cast<size_t>(c)] = true;
    rep.iou[static_cast<size_t>(c)] = static_cast<double>(tp) / static_cast<double>(denom);
    sum += rep.iou[static_cast<size_t>(c)];
    ++rep.present_count;
  }
  rep.miou = rep.present_count > 0 ? sum / rep.present_count : 0.0;
  return rep;
}

double pixel_accuracy(const ConfusionMatrix& cm) {
  if (cm.total() == 0) return 0.0;
  int64_t hits = 0;
  for (int c = 0; c < cm.num_classes(); ++c) hits += cm.at(c, c);
  return static_cast<double>(hits) / static_cast<double>(cm.total());
}

IouReport evaluate_segmentation(const CaliModel& m, const Dataset& ds) {
  if (!ds.labeled) throw UsageError("evaluate_segmentation: dataset has no labels");
  ConfusionMatrix cm(ds.k);
  for (const SegSample& s : ds.samples) cm.add(s.label, predict_classes(m, s.image));
  return iou_from_confusion(cm);
}

double mean_head_discrepancy(const CaliModel& m, const Dataset& ds) {
  if (ds.samples.empty()) throw UsageError("mean_head_discrepancy: empty dataset");
  double sum = 0.0;
  for (const SegSample& s : ds.samples) {
    Tensor f = features(m, s.image);
    Tensor gap = discrepancy(classify(m, Head::C1, f), classify(m, Head::C2, f));
    sum += static_cast<double>(gap.item());
  }
  return sum / static_cast<double>(ds.samples.size());
}

}  // namespace cali
