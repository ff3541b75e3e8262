#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "casnet/tensor.hpp"

namespace casnet {

struct AttrCounts {
    std::int64_t tp = 0, fp = 0, tn = 0, fn = 0;
};

struct MetricReport {
    double mA = 0.0;
    double instance_accuracy = 0.0;
    double instance_precision = 0.0;
    double instance_recall = 0.0;
    double instance_f1 = 0.0;
    std::vector<AttrCounts> per_attribute;
    int degenerate_attributes = 0;  // excluded from mA (no positives or no negatives)

    std::string csv_row(const std::string& run_id) const;
    static std::string csv_header();
};

/// Multi-label evaluation. scores is (N,1,1,L) with probabilities in [0,1],
/// targets is row-major N*L of {0,1}. Predictions are scores >= threshold.
///
/// mA averages (TPR + TNR)/2 over attributes; an attribute whose column is
/// all-positive or all-negative is excluded (with a stderr warning) since one
/// of the two rates is undefined. Instance metrics average per-sample ratios,
/// with the empty-set conventions: |Y∪Ŷ|=0 → Acc 1; |Ŷ|=0 → Prec 1 if |Y|=0
/// else 0; |Y|=0 → Rec 1. F1 combines the averaged precision and recall.
MetricReport evaluate(const Tensor& scores, const std::vector<std::uint8_t>& targets,
                      double threshold = 0.5);

}  // namespace casnet
