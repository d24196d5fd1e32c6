#include "pathcons/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "pathcons/csvio.hpp"
#include "pathcons/errors.hpp"

namespace pathcons {

namespace {

const char* kPalette[] = {"#4878d0", "#ee854a", "#6acc64", "#d65f5f", "#956cb4", "#8c613c"};

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

std::string xml_escape(const std::string& s) {
    std::string out;
    for (const char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

struct Frame {
    double width = 760, height = 420;
    double left = 70, right = 150, top = 46, bottom = 64;
    double plot_w() const { return width - left - right; }
    double plot_h() const { return height - top - bottom; }
};

void open_doc(std::ostringstream& os, const Frame& f, const std::string& title, const std::string& y_label) {
    os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt(f.width) << "\" height=\"" << fmt(f.height)
       << "\" viewBox=\"0 0 " << fmt(f.width) << " " << fmt(f.height) << "\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << fmt(f.width / 2) << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" "
          "font-size=\"16\">"
       << xml_escape(title) << "</text>\n";
    os << "<text x=\"16\" y=\"" << fmt(f.top + f.plot_h() / 2)
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 16 "
       << fmt(f.top + f.plot_h() / 2) << ")\">" << xml_escape(y_label) << "</text>\n";
}

void axes_and_ticks(std::ostringstream& os, const Frame& f, double lo, double hi) {
    os << "<line x1=\"" << fmt(f.left) << "\" y1=\"" << fmt(f.top + f.plot_h()) << "\" x2=\""
       << fmt(f.left + f.plot_w()) << "\" y2=\"" << fmt(f.top + f.plot_h()) << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << fmt(f.left) << "\" y1=\"" << fmt(f.top) << "\" x2=\"" << fmt(f.left) << "\" y2=\""
       << fmt(f.top + f.plot_h()) << "\" stroke=\"black\"/>\n";
    for (int t = 0; t <= 5; ++t) {
        const double frac = t / 5.0;
        const double y = f.top + f.plot_h() * (1.0 - frac);
        const double value = lo + (hi - lo) * frac;
        os << "<line x1=\"" << fmt(f.left - 4) << "\" y1=\"" << fmt(y) << "\" x2=\"" << fmt(f.left) << "\" y2=\""
           << fmt(y) << "\" stroke=\"black\"/>\n";
        os << "<text x=\"" << fmt(f.left - 8) << "\" y=\"" << fmt(y + 4)
           << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << fmt(value) << "</text>\n";
    }
}

void legend(std::ostringstream& os, const Frame& f, const std::vector<ChartSeries>& series) {
    for (std::size_t s = 0; s < series.size(); ++s) {
        const double y = f.top + 16.0 * static_cast<double>(s);
        os << "<rect x=\"" << fmt(f.width - f.right + 12) << "\" y=\"" << fmt(y) << "\" width=\"12\" height=\"12\" fill=\""
           << kPalette[s % 6] << "\"/>\n";
        os << "<text x=\"" << fmt(f.width - f.right + 30) << "\" y=\"" << fmt(y + 10)
           << "\" font-family=\"sans-serif\" font-size=\"11\">" << xml_escape(series[s].label) << "</text>\n";
    }
}

std::pair<double, double> value_range(const std::vector<ChartSeries>& series, bool include_zero) {
    double lo = include_zero ? 0.0 : std::numeric_limits<double>::infinity();
    double hi = include_zero ? 0.0 : -std::numeric_limits<double>::infinity();
    bool any = false;
    for (const ChartSeries& s : series) {
        for (const double v : s.values) {
            if (!std::isfinite(v)) continue;
            lo = std::min(lo, v);
            hi = std::max(hi, v);
            any = true;
        }
    }
    if (!any) throw UsageError("chart has no finite values");
    if (hi <= lo) hi = lo + 1.0;
    return {lo, hi};
}

}  // namespace

std::string render_bar_chart(const std::string& title, const std::string& y_label,
                             const std::vector<std::string>& categories, const std::vector<ChartSeries>& series) {
    if (categories.empty() || series.empty()) throw UsageError("bar chart needs categories and series");
    for (const ChartSeries& s : series) {
        if (s.values.size() != categories.size()) throw UsageError("bar chart series length mismatch");
    }
    Frame f;
    const auto [lo, hi] = value_range(series, true);
    std::ostringstream os;
    open_doc(os, f, title, y_label);
    axes_and_ticks(os, f, lo, hi);

    const double slot = f.plot_w() / static_cast<double>(categories.size());
    const double group = slot * 0.8;
    const double bar = group / static_cast<double>(series.size());
    for (std::size_t c = 0; c < categories.size(); ++c) {
        const double x0 = f.left + slot * static_cast<double>(c) + slot * 0.1;
        for (std::size_t s = 0; s < series.size(); ++s) {
            const double v = series[s].values[c];
            if (!std::isfinite(v)) continue;
            const double frac = (v - lo) / (hi - lo);
            const double bh = f.plot_h() * frac;
            os << "<rect x=\"" << fmt(x0 + bar * static_cast<double>(s)) << "\" y=\"" << fmt(f.top + f.plot_h() - bh)
               << "\" width=\"" << fmt(bar * 0.92) << "\" height=\"" << fmt(bh) << "\" fill=\"" << kPalette[s % 6]
               << "\"><title>" << xml_escape(series[s].label) << " " << xml_escape(categories[c]) << " = "
               << format_double(v) << "</title></rect>\n";
        }
        os << "<text x=\"" << fmt(f.left + slot * (static_cast<double>(c) + 0.5)) << "\" y=\""
           << fmt(f.top + f.plot_h() + 16) << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">"
           << xml_escape(categories[c]) << "</text>\n";
    }
    legend(os, f, series);
    os << "</svg>\n";
    return os.str();
}

std::string render_line_chart(const std::string& title, const std::string& y_label, const std::vector<double>& xs,
                              const std::vector<ChartSeries>& series) {
    if (xs.empty() || series.empty()) throw UsageError("line chart needs points and series");
    for (const ChartSeries& s : series) {
        if (s.values.size() != xs.size()) throw UsageError("line chart series length mismatch");
    }
    Frame f;
    const auto [lo, hi] = value_range(series, false);
    const double xlo = xs.front(), xhi = xs.back() > xs.front() ? xs.back() : xs.front() + 1.0;
    std::ostringstream os;
    open_doc(os, f, title, y_label);
    axes_and_ticks(os, f, lo, hi);
    for (std::size_t s = 0; s < series.size(); ++s) {
        os << "<polyline fill=\"none\" stroke=\"" << kPalette[s % 6] << "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t i = 0; i < xs.size(); ++i) {
            const double px = f.left + f.plot_w() * (xs[i] - xlo) / (xhi - xlo);
            const double py = f.top + f.plot_h() * (1.0 - (series[s].values[i] - lo) / (hi - lo));
            os << fmt(px) << "," << fmt(py) << " ";
        }
        os << "\"/>\n";
    }
    legend(os, f, series);
    os << "</svg>\n";
    return os.str();
}

}  // namespace pathcons
