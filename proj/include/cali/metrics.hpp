#pragma once

// Segmentation quality metrics: confusion matrix, per-class IoU with
// absent-class exclusion, and dataset-level evaluation helpers.

#include <cstdint>
#include <vector>

#include "cali/data.hpp"
#include "cali/models.hpp"

namespace cali {

class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes);

  // Accumulates one labelled map pair.  Rows index ground truth, columns
  // index the prediction.
  void add(const ClassMap& truth, const ClassMap& pred);

  int num_classes() const { return k_; }
  int64_t at(int truth_class, int pred_class) const;
  int64_t total() const { return total_; }

 private:
  int k_;
  int64_t total_ = 0;
  std::vector<int64_t> counts_;
};

struct IouReport {
  std::vector<double> iou;    // per class; 0 for absent classes
  std::vector<bool> present;  // class appears in truth or prediction
  double miou = 0.0;          // mean over present classes only
  int present_count = 0;
};

// Per-class IoU = tp / (tp + fp + fn).  Classes with a zero denominator
// (never seen in truth or prediction) are excluded from the mean.
IouReport iou_from_confusion(const ConfusionMatrix& cm);

double pixel_accuracy(const ConfusionMatrix& cm);

// Runs the fused prediction over every sample and scores it against the
// stored labels.  Requires a labelled dataset.
IouReport evaluate_segmentation(const CaliModel& m, const Dataset& ds);

// Mean over the dataset of the per-pixel L1 gap between the two classifier
// heads' output distributions.  Labels are not needed.
double mean_head_discrepancy(const CaliModel& m, const Dataset& ds);

}  // namespace cali
