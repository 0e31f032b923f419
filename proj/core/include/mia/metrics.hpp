#pragma once

#include <cstddef>
#include <vector>

#include "mia/volume.hpp"

namespace mia {

/// Rows are true classes, columns predicted.
struct ConfusionMatrix {
    int class_count = 0;
    std::vector<std::size_t> counts;  // class_count x class_count, row-major

    std::size_t& at(int truth, int pred) { return counts[truth * class_count + pred]; }
    std::size_t at(int truth, int pred) const { return counts[truth * class_count + pred]; }
    std::size_t total() const;

    static ConfusionMatrix from_predictions(const std::vector<int>& truth,
                                            const std::vector<int>& pred, int class_count);
};

struct ClassificationReport {
    double accuracy = 0.0;
    std::vector<double> precision;       // per class
    std::vector<double> recall;          // per class
    std::vector<double> f1;              // per class
    std::vector<bool> undefined;         // zero-denominator flag per class
    double macro_precision = 0.0;
    double macro_recall = 0.0;
    double macro_f1 = 0.0;
    double balanced_accuracy = 0.0;      // == BMA, mean per-class recall
    double kappa = 0.0;
};

struct SegScore {
    std::vector<double> dice;       // per class 1..class_count-1
    std::vector<double> hausdorff;  // mm
    std::vector<double> avd;        // signed relative volume difference
    double mean_dice = 0.0;
    double mean_hausdorff = 0.0;
    double mean_avd = 0.0;
};

struct TreResult {
    double mean_mm = 0.0;
    double std_mm = 0.0;  // sample std
    std::vector<double> per_point_mm;
};

struct RocPoint {
    double fpr, tpr;
};

struct RocResult {
    double auc = 0.0;
    std::vector<RocPoint> points;
};

/// 2|A∩B| / (|A| + |B|) for the given class; 1 when both sides are empty.
double dice(const LabelVolume& a, const LabelVolume& b, int class_id);

/// Exact symmetric Hausdorff distance (mm) between 6-connectivity boundary
/// voxel sets of the given class.
double hausdorff(const LabelVolume& a, const LabelVolume& b, int class_id);

/// Signed relative volume difference (V_pred - V_ref) / V_ref.
double avd(const LabelVolume& pred, const LabelVolume& ref, int class_id,
           bool absolute = false);

/// Per-class Dice/HD/AVD plus averages over classes 1..class_count-1.
SegScore segmentation_score(const LabelVolume& pred, const LabelVolume& ref);

/// Per-point Euclidean distances of (p - q) ⊙ spacing, with mean and sample std.
TreResult tre(const LandmarkSet& predicted, const LandmarkSet& truth, const Vec3& spacing);

ClassificationReport classification_report(const ConfusionMatrix& cm);

/// ROC by descending-score threshold sweep; ties advance simultaneously, so
/// the trapezoid AUC equals the rank statistic with half credit for ties.
RocResult roc_auc(const std::vector<double>& scores, const std::vector<int>& labels);

}  // namespace mia
