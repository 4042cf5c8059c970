#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "eabcal/error.hpp"

namespace eabcal::svg {

struct Series {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
    bool markers = false;
};

struct Plot {
    std::string title;
    std::string x_label;
    std::string y_label;
    std::vector<Series> series;
    double width = 640;
    double height = 420;
};

namespace detail {

inline std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

inline std::string tick(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

inline std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (c == '<') out += "&lt;";
        else if (c == '>') out += "&gt;";
        else if (c == '&') out += "&amp;";
        else out += c;
    }
    return out;
}

}  // namespace detail

inline std::string render(const Plot& p) {
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
    double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
    for (const auto& s : p.series)
        for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
            if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
            x0 = std::min(x0, s.x[i]);
            x1 = std::max(x1, s.x[i]);
            y0 = std::min(y0, s.y[i]);
            y1 = std::max(y1, s.y[i]);
        }
    if (!std::isfinite(x0)) throw InputError("plot '" + p.title + "' has no finite data");
    if (x1 == x0) x1 = x0 + 1.0;
    if (y1 == y0) y1 = y0 + 1.0;
    const double ml = 70, mr = 20, mt = 36, mb = 50;
    const double pw = p.width - ml - mr, ph = p.height - mt - mb;
    auto sx = [&](double v) { return ml + (v - x0) / (x1 - x0) * pw; };
    auto sy = [&](double v) { return mt + ph - (v - y0) / (y1 - y0) * ph; };
    using detail::num;

    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(p.width) << "\" height=\"" << num(p.height)
       << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << num(p.width / 2) << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">"
       << detail::escape(p.title) << "</text>\n";
    os << "<rect x=\"" << num(ml) << "\" y=\"" << num(mt) << "\" width=\"" << num(pw) << "\" height=\"" << num(ph)
       << "\" fill=\"none\" stroke=\"#444\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double xv = x0 + (x1 - x0) * i / 4.0, yv = y0 + (y1 - y0) * i / 4.0;
        os << "<text x=\"" << num(sx(xv)) << "\" y=\"" << num(mt + ph + 16) << "\" text-anchor=\"middle\">"
           << detail::tick(xv) << "</text>\n";
        os << "<text x=\"" << num(ml - 6) << "\" y=\"" << num(sy(yv) + 4) << "\" text-anchor=\"end\">"
           << detail::tick(yv) << "</text>\n";
    }
    os << "<text x=\"" << num(ml + pw / 2) << "\" y=\"" << num(p.height - 10) << "\" text-anchor=\"middle\">"
       << detail::escape(p.x_label) << "</text>\n";
    os << "<text transform=\"translate(16," << num(mt + ph / 2) << ") rotate(-90)\" text-anchor=\"middle\">"
       << detail::escape(p.y_label) << "</text>\n";
    for (std::size_t k = 0; k < p.series.size(); ++k) {
        const auto& s = p.series[k];
        const char* c = colors[k % 6];
        os << "<polyline fill=\"none\" stroke=\"" << c << "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i)
            if (std::isfinite(s.x[i]) && std::isfinite(s.y[i])) os << num(sx(s.x[i])) << ',' << num(sy(s.y[i])) << ' ';
        os << "\"/>\n";
        if (s.markers)
            for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i)
                if (std::isfinite(s.x[i]) && std::isfinite(s.y[i]))
                    os << "<circle cx=\"" << num(sx(s.x[i])) << "\" cy=\"" << num(sy(s.y[i])) << "\" r=\"2.5\" fill=\"" << c
                       << "\"/>\n";
        if (!s.label.empty())
            os << "<text x=\"" << num(ml + pw - 8) << "\" y=\"" << num(mt + 14 + 14 * static_cast<double>(k))
               << "\" text-anchor=\"end\" fill=\"" << c << "\">" << detail::escape(s.label) << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

// Writes the plot; returns false instead of throwing so callers can treat
// plotting as best effort.
inline bool write(const std::string& path, const Plot& p) {
    try {
        const auto text = render(p);
        std::ofstream out(path);
        if (!out) return false;
        out << text;
        return static_cast<bool>(out);
    } catch (const std::exception&) {
        return false;
    }
}

}  // namespace eabcal::svg
