#include "fallfuse/metrics.hpp"

#include "fallfuse/error.hpp"

namespace fallfuse {

ConfusionCounts confusion(const std::vector<BinaryLabel>& predictions,
                          const std::vector<BinaryLabel>& truths) {
    if (predictions.size() != truths.size()) {
        throw InputError("confusion: " + std::to_string(predictions.size()) +
                         " predictions vs " + std::to_string(truths.size()) + " truths");
    }
    if (predictions.empty()) throw InputError("confusion: empty input");
    ConfusionCounts c;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        const bool pred = predictions[i].value != 0;
        const bool truth = truths[i].value != 0;
        if (pred && truth) ++c.tp;
        else if (pred && !truth) ++c.fp;
        else if (!pred && truth) ++c.fn;
        else ++c.tn;
    }
    return c;
}

std::string averaging_name(Averaging a) {
    switch (a) {
        case Averaging::PerClassPositive: return "per_class_positive";
        case Averaging::Micro: return "micro";
        case Averaging::Weighted: return "weighted";
    }
    return "unknown";
}

Averaging averaging_from_name(const std::string& name) {
    if (name == "per_class_positive") return Averaging::PerClassPositive;
    if (name == "micro") return Averaging::Micro;
    if (name == "weighted") return Averaging::Weighted;
    throw InputError("unknown averaging mode: " + name);
}

namespace {

struct Fraction {
    double value = 0.0;
    bool undefined = false;
};

Fraction ratio(std::int64_t num, std::int64_t den) {
    if (den == 0) return {0.0, true};
    return {static_cast<double>(num) / static_cast<double>(den), false};
}

// Harmonic mean of equal operands is the operand; short-circuiting keeps
// identities like micro F1 == accuracy bit-exact.
Fraction f1_of(Fraction precision, Fraction recall) {
    if (precision.value + recall.value == 0.0) return {0.0, true};
    if (precision.value == recall.value) return {precision.value, false};
    return {2.0 * precision.value * recall.value / (precision.value + recall.value), false};
}

}  // namespace

MetricsReport metrics(const ConfusionCounts& c, Averaging averaging) {
    const std::int64_t total = c.total();
    if (total == 0) throw InputError("metrics: empty confusion counts");

    MetricsReport r;
    r.averaging = averaging;
    r.accuracy = static_cast<double>(c.tp + c.tn) / static_cast<double>(total);

    // Per-class view: class 1 = fall (positive), class 0 = no-fall.
    const std::int64_t support1 = c.tp + c.fn;
    const std::int64_t support0 = c.tn + c.fp;

    switch (averaging) {
        case Averaging::PerClassPositive: {
            Fraction p = ratio(c.tp, c.tp + c.fp);
            Fraction rec = ratio(c.tp, c.tp + c.fn);
            Fraction f = f1_of(p, rec);
            r.precision = p.value;
            r.recall = rec.value;
            r.f1 = f.value;
            r.precision_zero_division = p.undefined;
            r.recall_zero_division = rec.undefined;
            r.f1_zero_division = f.undefined;
            break;
        }
        case Averaging::Micro: {
            // Pooled per-class TP is the number of correct predictions and
            // pooled FP = pooled FN = the number of wrong ones, so every
            // micro metric is the same division as accuracy.
            const std::int64_t correct = c.tp + c.tn;
            Fraction p = ratio(correct, total);
            Fraction rec = ratio(correct, total);
            Fraction f = f1_of(p, rec);
            r.precision = p.value;
            r.recall = rec.value;
            r.f1 = f.value;
            r.f1_zero_division = f.undefined;
            break;
        }
        case Averaging::Weighted: {
            Fraction p1 = ratio(c.tp, c.tp + c.fp);
            Fraction p0 = ratio(c.tn, c.tn + c.fn);
            Fraction r1 = ratio(c.tp, support1);
            Fraction r0 = ratio(c.tn, support0);
            Fraction f1c = f1_of(p1, r1);
            Fraction f0c = f1_of(p0, r0);
            const double n = static_cast<double>(total);
            r.precision = (static_cast<double>(support1) * p1.value +
                           static_cast<double>(support0) * p0.value) / n;
            // support_c * (tp_c / support_c) telescopes to tp_c, so
            // weighted recall is pooled-correct/total: identical to the
            // accuracy division, keeping the identity exact.
            r.recall = static_cast<double>(c.tp + c.tn) / n;
            r.f1 = (static_cast<double>(support1) * f1c.value +
                    static_cast<double>(support0) * f0c.value) / n;
            r.precision_zero_division = p1.undefined || p0.undefined;
            r.recall_zero_division = support1 == 0 || support0 == 0;
            r.f1_zero_division = f1c.undefined || f0c.undefined;
            break;
        }
    }
    return r;
}

MetricsReport metrics(const std::vector<BinaryLabel>& predictions,
                      const std::vector<BinaryLabel>& truths, Averaging averaging) {
    return metrics(confusion(predictions, truths), averaging);
}

}  // namespace fallfuse
