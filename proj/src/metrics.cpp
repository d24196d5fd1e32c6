#include "pathcons/metrics.hpp"

#include <cmath>
#include <limits>

#include "pathcons/errors.hpp"

namespace pathcons {

ConfusionMatrix::ConfusionMatrix(int n_classes_with_bg) : k_(n_classes_with_bg) {
    if (k_ < 1) throw ConfigError("confusion matrix needs at least one class");
    counts_.assign(static_cast<std::size_t>(k_) * k_, 0);
}

void ConfusionMatrix::add(int true_class, int predicted_class) {
    if (true_class < 0 || true_class >= k_ || predicted_class < 0 || predicted_class >= k_) {
        throw UsageError("confusion matrix class out of range");
    }
    counts_[static_cast<std::size_t>(true_class) * k_ + predicted_class] += 1;
}

std::int64_t ConfusionMatrix::count(int true_class, int predicted_class) const {
    return counts_[static_cast<std::size_t>(true_class) * k_ + predicted_class];
}

double ConfusionMatrix::iou(int class_id) const {
    const std::int64_t tp = count(class_id, class_id);
    std::int64_t fp = 0, fn = 0;
    for (int t = 0; t < k_; ++t) {
        if (t != class_id) fp += count(t, class_id);
    }
    for (int p = 0; p < k_; ++p) {
        if (p != class_id) fn += count(class_id, p);
    }
    const std::int64_t uni = tp + fp + fn;
    if (uni == 0) return std::numeric_limits<double>::quiet_NaN();
    return static_cast<double>(tp) / static_cast<double>(uni);
}

double ConfusionMatrix::macro_foreground_iou() const {
    double sum = 0.0;
    int n = 0;
    for (int c = 1; c < k_; ++c) {
        const double v = iou(c);
        if (std::isnan(v)) continue;
        sum += v;
        n += 1;
    }
    return n == 0 ? 0.0 : sum / n;
}

SummaryStats summarize(const std::vector<double>& values) {
    SummaryStats s;
    s.count = static_cast<int>(values.size());
    if (values.empty()) return s;
    s.min = values[0];
    s.max = values[0];
    double sum = 0.0;
    for (const double v : values) {
        sum += v;
        s.min = std::min(s.min, v);
        s.max = std::max(s.max, v);
    }
    s.mean = sum / static_cast<double>(values.size());
    double var = 0.0;
    for (const double v : values) var += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(var / static_cast<double>(values.size()));
    return s;
}

}  // namespace pathcons
