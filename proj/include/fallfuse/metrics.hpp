#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fallfuse/preprocess.hpp"

namespace fallfuse {

// Binary confusion tallies with fall (label 1) as the positive class.
struct ConfusionCounts {
    std::int64_t tp = 0;
    std::int64_t fp = 0;
    std::int64_t tn = 0;
    std::int64_t fn = 0;

    std::int64_t total() const { return tp + fp + tn + fn; }
};

ConfusionCounts confusion(const std::vector<BinaryLabel>& predictions,
                          const std::vector<BinaryLabel>& truths);

enum class Averaging { PerClassPositive, Micro, Weighted };

std::string averaging_name(Averaging a);
Averaging averaging_from_name(const std::string& name);

// Zero-division conventions: a metric whose denominator is zero reports 0
// and raises its flag, so CSV outputs never carry NaN.
struct MetricsReport {
    double accuracy = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    Averaging averaging = Averaging::PerClassPositive;
    bool precision_zero_division = false;
    bool recall_zero_division = false;
    bool f1_zero_division = false;
};

// PerClassPositive applies the standard accuracy/precision/recall/F1
// definitions with fall as the positive class. Micro pools both classes'
// per-class TP/FP/FN before dividing; for single-label binary data this
// makes precision = recall = F1 = accuracy. Weighted averages per-class
// metrics by class support; its recall reduces to pooled-correct/total,
// which is computed in that simplified form so the recall == accuracy
// identity holds exactly, not merely to rounding.
MetricsReport metrics(const ConfusionCounts& counts, Averaging averaging);

MetricsReport metrics(const std::vector<BinaryLabel>& predictions,
                      const std::vector<BinaryLabel>& truths, Averaging averaging);

}  // namespace fallfuse
