#pragma once

#include <cstdint>
#include <vector>

namespace pathcons {

/// Row = true class, column = predicted class, background included as 0.
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(int n_classes_with_bg);

    void add(int true_class, int predicted_class);
    std::int64_t count(int true_class, int predicted_class) const;
    int classes() const { return k_; }

    /// TP / (TP + FP + FN); NaN when the union is empty.
    double iou(int class_id) const;
    /// Macro mean over foreground classes with nonempty union.
    double macro_foreground_iou() const;

private:
    int k_ = 0;
    std::vector<std::int64_t> counts_;
};

struct MetricsReport {
    std::vector<double> l3d_per_epoch;
    std::vector<double> lcons_per_epoch;
    std::vector<double> total_per_epoch;
    /// Mean absolute 3D-stage activation per epoch (gradient-stop ablation).
    std::vector<double> act_norm_3d_per_epoch;
    /// Max |d(alpha * L_cons)/d theta| over 3D backbone parameters, sampled
    /// once per epoch when diagnostics are on.
    std::vector<double> cons_grad3d_max_per_epoch;
    std::vector<double> per_class_iou;  // indexed by class id, 0 = background
    double mean_iou = 0.0;
    double wall_seconds = 0.0;
    std::uint64_t seed = 0;
    bool consistency_degenerate_seen = false;
};

struct SummaryStats {
    double mean = 0.0;
    double stddev = 0.0;  // population
    double min = 0.0;
    double max = 0.0;
    int count = 0;
};

SummaryStats summarize(const std::vector<double>& values);

}  // namespace pathcons
