#pragma once

#include <string>
#include <vector>

namespace pathcons {

struct ChartSeries {
    std::string label;
    std::vector<double> values;  // one per category / x position
};

/// Grouped bar chart as a standalone SVG document. Deterministic bytes for
/// fixed input. Missing cells are encoded as NaN and skipped.
std::string render_bar_chart(const std::string& title, const std::string& y_label,
                             const std::vector<std::string>& categories,
                             const std::vector<ChartSeries>& series);

/// Simple multi-series line chart (epoch curves).
std::string render_line_chart(const std::string& title, const std::string& y_label,
                              const std::vector<double>& xs, const std::vector<ChartSeries>& series);

}  // namespace pathcons
