#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "fedsim/strings.hpp"

namespace fedsim {

// Minimal static SVG emitters for the two report figures: accuracy-vs-round
// lines and per-client selection-count bars.

struct SvgSeries {
    std::string label;
    std::vector<double> y;  // index = x
};

namespace detail {

inline const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                 "#9467bd", "#8c564b", "#17becf"};

inline std::string svg_header(int w, int h) {
    return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(w) +
           "\" height=\"" + std::to_string(h) + "\" viewBox=\"0 0 " + std::to_string(w) + " " +
           std::to_string(h) + "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
}

}  // namespace detail

inline std::string line_chart_svg(const std::vector<SvgSeries>& series, const std::string& title,
                                  const std::string& x_label, const std::string& y_label) {
    const int w = 860, h = 460, ml = 60, mr = 180, mt = 40, mb = 50;
    const double pw = w - ml - mr, ph = h - mt - mb;
    std::size_t n = 0;
    double lo = 0.0, hi = 1e-9;
    for (const auto& s : series) {
        n = std::max(n, s.y.size());
        for (double v : s.y) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    }
    std::string out = detail::svg_header(w, h);
    out += "<text x=\"" + std::to_string(w / 2) + "\" y=\"24\" text-anchor=\"middle\" "
           "font-family=\"sans-serif\" font-size=\"16\">" + title + "</text>\n";
    out += "<line x1=\"" + std::to_string(ml) + "\" y1=\"" + std::to_string(h - mb) + "\" x2=\"" +
           std::to_string(w - mr) + "\" y2=\"" + std::to_string(h - mb) +
           "\" stroke=\"black\"/>\n";
    out += "<line x1=\"" + std::to_string(ml) + "\" y1=\"" + std::to_string(mt) + "\" x2=\"" +
           std::to_string(ml) + "\" y2=\"" + std::to_string(h - mb) + "\" stroke=\"black\"/>\n";
    for (int tick = 0; tick <= 4; ++tick) {
        const double v = lo + (hi - lo) * tick / 4.0;
        const double y = h - mb - ph * tick / 4.0;
        out += "<text x=\"" + std::to_string(ml - 6) + "\" y=\"" + format_double(y + 4) +
               "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" +
               format_double(std::round(v * 1000.0) / 1000.0) + "</text>\n";
    }
    for (std::size_t si = 0; si < series.size(); ++si) {
        const auto& s = series[si];
        if (s.y.empty()) continue;
        const char* color = detail::kPalette[si % 7];
        std::string pts;
        for (std::size_t i = 0; i < s.y.size(); ++i) {
            const double x = ml + pw * (n > 1 ? static_cast<double>(i) / (n - 1) : 0.5);
            const double y = h - mb - ph * ((s.y[i] - lo) / (hi - lo));
            pts += format_double(x) + "," + format_double(y) + " ";
        }
        out += "<polyline fill=\"none\" stroke=\"" + std::string(color) +
               "\" stroke-width=\"1.5\" points=\"" + pts + "\"/>\n";
        const double ly = mt + 18.0 * static_cast<double>(si);
        out += "<rect x=\"" + std::to_string(w - mr + 10) + "\" y=\"" + format_double(ly) +
               "\" width=\"12\" height=\"12\" fill=\"" + color + "\"/>\n";
        out += "<text x=\"" + std::to_string(w - mr + 28) + "\" y=\"" + format_double(ly + 10) +
               "\" font-family=\"sans-serif\" font-size=\"12\">" + s.label + "</text>\n";
    }
    out += "<text x=\"" + std::to_string((ml + w - mr) / 2) + "\" y=\"" + std::to_string(h - 14) +
           "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" + x_label +
           "</text>\n";
    out += "<text x=\"16\" y=\"" + std::to_string((mt + h - mb) / 2) +
           "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" "
           "transform=\"rotate(-90 16 " + std::to_string((mt + h - mb) / 2) + ")\">" + y_label +
           "</text>\n";
    return out + "</svg>\n";
}

struct SvgBar {
    double value = 0.0;
    std::string group;  // color group label (noise kind)
};

inline std::string bar_chart_svg(const std::vector<SvgBar>& bars, const std::string& title,
                                 const std::string& x_label, const std::string& y_label) {
    const int w = 860, h = 420, ml = 60, mr = 150, mt = 40, mb = 50;
    const double pw = w - ml - mr, ph = h - mt - mb;
    double hi = 1e-9;
    for (const auto& b : bars) hi = std::max(hi, b.value);
    std::vector<std::string> groups;
    for (const auto& b : bars)
        if (std::find(groups.begin(), groups.end(), b.group) == groups.end())
            groups.push_back(b.group);
    std::string out = detail::svg_header(w, h);
    out += "<text x=\"" + std::to_string(w / 2) + "\" y=\"24\" text-anchor=\"middle\" "
           "font-family=\"sans-serif\" font-size=\"16\">" + title + "</text>\n";
    const double bw = pw / std::max<std::size_t>(bars.size(), 1);
    for (std::size_t i = 0; i < bars.size(); ++i) {
        const auto gi = static_cast<std::size_t>(
            std::find(groups.begin(), groups.end(), bars[i].group) - groups.begin());
        const double bh = ph * bars[i].value / hi;
        out += "<rect x=\"" + format_double(ml + bw * static_cast<double>(i)) + "\" y=\"" +
               format_double(h - mb - bh) + "\" width=\"" + format_double(std::max(bw - 1.0, 0.5)) +
               "\" height=\"" + format_double(bh) + "\" fill=\"" +
               detail::kPalette[gi % 7] + "\"/>\n";
    }
    out += "<line x1=\"" + std::to_string(ml) + "\" y1=\"" + std::to_string(h - mb) + "\" x2=\"" +
           std::to_string(w - mr) + "\" y2=\"" + std::to_string(h - mb) +
           "\" stroke=\"black\"/>\n";
    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
        const double ly = mt + 18.0 * static_cast<double>(gi);
        out += "<rect x=\"" + std::to_string(w - mr + 10) + "\" y=\"" + format_double(ly) +
               "\" width=\"12\" height=\"12\" fill=\"" + detail::kPalette[gi % 7] + "\"/>\n";
        out += "<text x=\"" + std::to_string(w - mr + 28) + "\" y=\"" + format_double(ly + 10) +
               "\" font-family=\"sans-serif\" font-size=\"12\">" + groups[gi] + "</text>\n";
    }
    out += "<text x=\"" + std::to_string((ml + w - mr) / 2) + "\" y=\"" + std::to_string(h - 14) +
           "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" + x_label +
           "</text>\n";
    out += "<text x=\"16\" y=\"" + std::to_string((mt + h - mb) / 2) +
           "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" "
           "transform=\"rotate(-90 16 " + std::to_string((mt + h - mb) / 2) + ")\">" + y_label +
           "</text>\n";
    return out + "</svg>\n";
}

}  // namespace fedsim
