#pragma once

#include <cstdint>
#include <vector>

#include "mseg/model.hpp"

namespace mseg {

struct SegMetrics {
  std::int64_t num_classes = 0;
  std::vector<std::int64_t> confusion;  // K x K, row = label, column = prediction
  std::vector<double> per_class_iou;    // NaN for classes absent from both maps
  double miou = 0.0;
  double pixel_acc = 0.0;
  std::int64_t params = 0;
  std::int64_t macs = 0;

  std::int64_t at(std::int64_t label, std::int64_t pred) const {
    return confusion[static_cast<std::size_t>(label * num_classes + pred)];
  }
};

/// Adds the non-ignored pixels of one (pred, label) pair to a K x K matrix.
void accumulate_confusion(std::vector<std::int64_t>& confusion, std::int64_t num_classes,
                          const LabelMap& pred, const LabelMap& label,
                          int ignore_index = kIgnoreIndex);

/// IoU, mIoU and pixel accuracy from a confusion matrix. Throws DataError if
/// the matrix is empty (every pixel ignored).
SegMetrics metrics_from_confusion(std::vector<std::int64_t> confusion, std::int64_t num_classes);

SegMetrics compute_metrics(const LabelMap& pred, const LabelMap& label, std::int64_t num_classes,
                           int ignore_index = kIgnoreIndex);

struct ModelCost {
  std::int64_t params = 0;
  std::int64_t macs = 0;
};

/// Closed-form trainable scalar and multiply-accumulate counts for a config at
/// its configured input size. Convolutions count C_out*H_o*W_o*C_in*k*k, each
/// scan direction L*D*(2N+1) for the recurrence plus L*(D*D + 2*N*D) for its
/// input projections; norms, activations, pooling and resizing count zero.
ModelCost count_params_macs(const ModelConfig& cfg);

}  // namespace mseg
