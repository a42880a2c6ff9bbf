#pragma once

// Minimal standalone SVG charts: line plots with markers and a scalogram heatmap.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "csv.hpp"
#include "cwt.hpp"

namespace tidewave::svg {

struct Series {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
    std::string color = "#1f77b4";
};

struct Marker {
    double x = 0.0;
    double y = 0.0;
    bool square = false; ///< square for max flow, circle otherwise
    std::string color = "#d62728";
};

struct Chart {
    std::string title;
    std::string x_label = "time (h)";
    std::string y_label;
    std::string provenance; ///< embedded as an XML comment
    std::vector<Series> series;
    std::vector<Marker> markers;
    int width = 900;
    int height = 360;
};

namespace detail {

inline std::string esc(const std::string& s)
{
    std::string out;
    for (char c : s) {
        switch (c) {
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '&': out += "&amp;"; break;
        case '"': out += "&quot;"; break;
        case '-':
            // keep comments well formed
            out += (!out.empty() && out.back() == '-') ? " -" : "-";
            break;
        default: out += c;
        }
    }
    return out;
}

inline std::string num(double v)
{
    return csv::format_double(std::round(v * 100.0) / 100.0);
}

} // namespace detail

inline void write_chart(std::ostream& out, const Chart& c)
{
    constexpr double ml = 70, mr = 20, mt = 36, mb = 48;
    double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
    for (const auto& s : c.series) {
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (std::isfinite(s.x[i]) && std::isfinite(s.y[i])) {
                x0 = std::min(x0, s.x[i]);
                x1 = std::max(x1, s.x[i]);
                y0 = std::min(y0, s.y[i]);
                y1 = std::max(y1, s.y[i]);
            }
        }
    }
    if (!(x1 > x0)) {
        x0 = 0.0;
        x1 = 1.0;
    }
    if (!(y1 > y0)) {
        y0 = std::isfinite(y0) ? y0 - 1.0 : 0.0;
        y1 = y0 + 2.0;
    }
    const double pw = c.width - ml - mr;
    const double ph = c.height - mt - mb;
    auto px = [&](double x) { return ml + (x - x0) / (x1 - x0) * pw; };
    auto py = [&](double y) { return mt + (1.0 - (y - y0) / (y1 - y0)) * ph; };

    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << c.width << "\" height=\"" << c.height
        << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    if (!c.provenance.empty()) {
        out << "<!-- " << detail::esc(c.provenance) << " -->\n";
    }
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<text x=\"" << c.width / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << detail::esc(c.title)
        << "</text>\n";
    out << "<rect x=\"" << ml << "\" y=\"" << mt << "\" width=\"" << pw << "\" height=\"" << ph
        << "\" fill=\"none\" stroke=\"#444\"/>\n";
    for (int k = 0; k <= 4; ++k) {
        const double xv = x0 + (x1 - x0) * k / 4.0;
        const double yv = y0 + (y1 - y0) * k / 4.0;
        out << "<text x=\"" << detail::num(px(xv)) << "\" y=\"" << detail::num(mt + ph + 16)
            << "\" text-anchor=\"middle\">" << detail::num(xv) << "</text>\n";
        out << "<text x=\"" << ml - 6 << "\" y=\"" << detail::num(py(yv) + 4) << "\" text-anchor=\"end\">"
            << csv::format_double(std::round(yv * 1000.0) / 1000.0) << "</text>\n";
    }
    out << "<text x=\"" << detail::num(ml + pw / 2) << "\" y=\"" << c.height - 8 << "\" text-anchor=\"middle\">"
        << detail::esc(c.x_label) << "</text>\n";
    out << "<text x=\"14\" y=\"" << detail::num(mt + ph / 2) << "\" text-anchor=\"middle\" transform=\"rotate(-90 14 "
        << detail::num(mt + ph / 2) << ")\">" << detail::esc(c.y_label) << "</text>\n";
    for (const auto& s : c.series) {
        out << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"1.2\" points=\"";
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (std::isfinite(s.x[i]) && std::isfinite(s.y[i])) {
                out << detail::num(px(s.x[i])) << ',' << detail::num(py(s.y[i])) << ' ';
            }
        }
        out << "\"><title>" << detail::esc(s.label) << "</title></polyline>\n";
    }
    for (const auto& m : c.markers) {
        if (!std::isfinite(m.x) || !std::isfinite(m.y)) {
            continue;
        }
        if (m.square) {
            out << "<rect x=\"" << detail::num(px(m.x) - 5) << "\" y=\"" << detail::num(py(m.y) - 5)
                << "\" width=\"10\" height=\"10\" fill=\"none\" stroke=\"" << m.color << "\" stroke-width=\"2\"/>\n";
        } else {
            out << "<circle cx=\"" << detail::num(px(m.x)) << "\" cy=\"" << detail::num(py(m.y))
                << "\" r=\"5\" fill=\"none\" stroke=\"" << m.color << "\" stroke-width=\"2\"/>\n";
        }
    }
    out << "</svg>\n";
}

/// |W| heatmap, time on x (hours from start) and period on y (minutes, long periods at the top).
inline void write_scalogram(std::ostream& out, const cwt::Scalogram& sg, const std::string& title,
                            const std::string& provenance = {})
{
    constexpr int width = 900, height = 380, ml = 70, mr = 20, mt = 36, mb = 48;
    const double pw = width - ml - mr;
    const double ph = height - mt - mb;
    double vmax = 0.0;
    for (const auto& c : sg.coeffs) {
        vmax = std::max(vmax, std::abs(c));
    }
    if (!(vmax > 0.0)) {
        vmax = 1.0;
    }
    const std::size_t ns = sg.scale_count();
    const std::size_t nt = sg.time_count();
    const std::size_t stride = std::max<std::size_t>(1, nt / 600);
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
        << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    if (!provenance.empty()) {
        out << "<!-- " << detail::esc(provenance) << " -->\n";
    }
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<text x=\"" << width / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << detail::esc(title)
        << "</text>\n";
    const double cw = pw / static_cast<double>((nt + stride - 1) / stride);
    const double ch = ph / static_cast<double>(ns);
    for (std::size_t s = 0; s < ns; ++s) {
        const double y = mt + (ns - 1 - s) * ch;
        for (std::size_t m = 0, col = 0; m < nt; m += stride, ++col) {
            const double v = std::sqrt(sg.magnitude(s, m) / vmax);
            const int r = static_cast<int>(255 * std::min(1.0, 1.5 * v));
            const int g = static_cast<int>(255 * std::clamp(1.5 * v - 0.5, 0.0, 1.0));
            const int b = static_cast<int>(255 * std::clamp(0.5 - v, 0.0, 1.0) * 2.0 * 0.6);
            out << "<rect x=\"" << detail::num(ml + col * cw) << "\" y=\"" << detail::num(y) << "\" width=\""
                << detail::num(cw + 0.3) << "\" height=\"" << detail::num(ch + 0.3) << "\" fill=\"rgb(" << r << ','
                << g << ',' << b << ")\"/>\n";
        }
    }
    if (ns > 0 && nt > 0) {
        const double span_h = (sg.times.back() - sg.times.front()) / 3600.0;
        for (int k = 0; k <= 4; ++k) {
            out << "<text x=\"" << detail::num(ml + pw * k / 4.0) << "\" y=\"" << detail::num(mt + ph + 16)
                << "\" text-anchor=\"middle\">" << detail::num(span_h * k / 4.0) << "</text>\n";
        }
        for (std::size_t s = 0; s < ns; s += std::max<std::size_t>(1, ns / 5)) {
            const double period_min = 1.0 / sg.pseudo_freqs[s] / 60.0;
            out << "<text x=\"" << ml - 6 << "\" y=\"" << detail::num(mt + (ns - 1 - s) * ch + ch / 2 + 4)
                << "\" text-anchor=\"end\">" << detail::num(period_min) << "</text>\n";
        }
    }
    out << "<text x=\"" << detail::num(ml + pw / 2) << "\" y=\"" << height - 8
        << "\" text-anchor=\"middle\">time (h)</text>\n";
    out << "<text x=\"14\" y=\"" << detail::num(mt + ph / 2) << "\" text-anchor=\"middle\" transform=\"rotate(-90 14 "
        << detail::num(mt + ph / 2) << ")\">period (min)</text>\n";
    out << "</svg>\n";
}

} // namespace tidewave::svg
