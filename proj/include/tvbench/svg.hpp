#pragma once

// Minimal deterministic SVG writers for curve and scatter plots. All numbers
// are printed with fixed precision so identical input gives identical bytes.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace tvbench::svg {

inline std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

inline std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
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

inline const char* color(std::size_t i) {
    static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
    return palette[i % 10];
}

struct Range {
    double lo = 0.0, hi = 1.0;
};

/// Step from {1, 2, 5} x 10^n giving roughly `target` intervals over span.
inline double nice_step(double span, int target = 6) {
    if (!(span > 0.0)) return 1.0;
    const double raw = span / target;
    const double mag = std::pow(10.0, std::floor(std::log10(raw)));
    const double f = raw / mag;
    return (f < 1.5 ? 1.0 : f < 3.5 ? 2.0 : f < 7.5 ? 5.0 : 10.0) * mag;
}

inline Range padded(double lo, double hi) {
    if (!(hi > lo)) return {lo - 1.0, hi + 1.0};
    const double step = nice_step(hi - lo);
    return {std::floor(lo / step) * step, std::ceil(hi / step) * step};
}

struct Series {
    std::string label;
    std::vector<double> x, y, lo, hi;  // lo/hi empty or same length as y
};

struct Frame {
    double width = 760, height = 480;
    double left = 70, right = 180, top = 40, bottom = 60;
    Range xr, yr;

    double px(double x) const { return left + (x - xr.lo) / (xr.hi - xr.lo) * (width - left - right); }
    double py(double y) const { return height - bottom - (y - yr.lo) / (yr.hi - yr.lo) * (height - top - bottom); }
};

inline void axes(std::ostringstream& os, const Frame& f, const std::string& title, const std::string& xlabel,
                 const std::string& ylabel) {
    const double x0 = f.left, x1 = f.width - f.right, y0 = f.height - f.bottom, y1 = f.top;
    os << "<rect x=\"0\" y=\"0\" width=\"" << num(f.width) << "\" height=\"" << num(f.height)
       << "\" fill=\"white\"/>\n";
    os << "<text x=\"" << num((x0 + x1) / 2) << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">"
       << escape(title) << "</text>\n";
    const double xs = nice_step(f.xr.hi - f.xr.lo), ys = nice_step(f.yr.hi - f.yr.lo);
    for (double t = std::ceil(f.xr.lo / xs - 1e-9) * xs; t <= f.xr.hi + 1e-9 * xs; t += xs) {
        const double p = f.px(t);
        os << "<line x1=\"" << num(p) << "\" y1=\"" << num(y0) << "\" x2=\"" << num(p) << "\" y2=\"" << num(y1)
           << "\" stroke=\"#e0e0e0\"/>\n";
        os << "<text x=\"" << num(p) << "\" y=\"" << num(y0 + 16) << "\" text-anchor=\"middle\" font-size=\"11\">"
           << num(std::abs(t) < 1e-12 ? 0.0 : t) << "</text>\n";
    }
    for (double t = std::ceil(f.yr.lo / ys - 1e-9) * ys; t <= f.yr.hi + 1e-9 * ys; t += ys) {
        const double p = f.py(t);
        os << "<line x1=\"" << num(x0) << "\" y1=\"" << num(p) << "\" x2=\"" << num(x1) << "\" y2=\"" << num(p)
           << "\" stroke=\"#e0e0e0\"/>\n";
        os << "<text x=\"" << num(x0 - 6) << "\" y=\"" << num(p + 4) << "\" text-anchor=\"end\" font-size=\"11\">"
           << num(std::abs(t) < 1e-12 ? 0.0 : t) << "</text>\n";
    }
    os << "<rect x=\"" << num(x0) << "\" y=\"" << num(y1) << "\" width=\"" << num(x1 - x0) << "\" height=\""
       << num(y0 - y1) << "\" fill=\"none\" stroke=\"black\"/>\n";
    os << "<text x=\"" << num((x0 + x1) / 2) << "\" y=\"" << num(f.height - 18)
       << "\" text-anchor=\"middle\" font-size=\"13\">" << escape(xlabel) << "</text>\n";
    os << "<text x=\"18\" y=\"" << num((y0 + y1) / 2) << "\" text-anchor=\"middle\" font-size=\"13\" "
       << "transform=\"rotate(-90 18 " << num((y0 + y1) / 2) << ")\">" << escape(ylabel) << "</text>\n";
}

inline std::string header(double w, double h) {
    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(w) << "\" height=\"" << num(h)
       << "\" viewBox=\"0 0 " << num(w) << ' ' << num(h) << "\" font-family=\"sans-serif\">\n";
    return os.str();
}

/// Line chart: one polyline per series, optional shaded band, legend on the right.
inline std::string line_chart(const std::vector<Series>& series, const std::string& title, const std::string& xlabel,
                              const std::string& ylabel, Range yr) {
    if (series.empty()) throw std::invalid_argument("line_chart: no series");
    double xlo = INFINITY, xhi = -INFINITY;
    for (const auto& s : series)
        for (double x : s.x) {
            xlo = std::min(xlo, x);
            xhi = std::max(xhi, x);
        }
    if (!std::isfinite(xlo)) throw std::invalid_argument("line_chart: no finite points");
    Frame f;
    f.xr = padded(xlo, xhi);
    f.yr = yr;
    std::ostringstream os;
    os << header(f.width, f.height);
    axes(os, f, title, xlabel, ylabel);
    for (std::size_t i = 0; i < series.size(); ++i) {
        const Series& s = series[i];
        const bool band = s.lo.size() == s.y.size() && s.hi.size() == s.y.size() && s.y.size() > 1;
        if (band) {
            os << "<polygon fill=\"" << color(i) << "\" fill-opacity=\"0.15\" stroke=\"none\" points=\"";
            for (std::size_t j = 0; j < s.x.size(); ++j) os << num(f.px(s.x[j])) << ',' << num(f.py(s.hi[j])) << ' ';
            for (std::size_t j = s.x.size(); j-- > 0;)
                os << num(f.px(s.x[j])) << ',' << num(f.py(s.lo[j])) << (j ? " " : "");
            os << "\"/>\n";
        }
        if (s.x.size() > 1) {
            os << "<polyline fill=\"none\" stroke=\"" << color(i) << "\" stroke-width=\"2\" points=\"";
            for (std::size_t j = 0; j < s.x.size(); ++j)
                os << num(f.px(s.x[j])) << ',' << num(f.py(s.y[j])) << (j + 1 < s.x.size() ? " " : "");
            os << "\"/>\n";
        }
        for (std::size_t j = 0; j < s.x.size(); ++j)
            os << "<circle cx=\"" << num(f.px(s.x[j])) << "\" cy=\"" << num(f.py(s.y[j])) << "\" r=\"3\" fill=\""
               << color(i) << "\"/>\n";
        const double ly = f.top + 10 + 20.0 * static_cast<double>(i);
        const double lx = f.width - f.right + 15;
        os << "<line x1=\"" << num(lx) << "\" y1=\"" << num(ly) << "\" x2=\"" << num(lx + 22) << "\" y2=\""
           << num(ly) << "\" stroke=\"" << color(i) << "\" stroke-width=\"3\"/>\n";
        os << "<text x=\"" << num(lx + 28) << "\" y=\"" << num(ly + 4) << "\" font-size=\"12\">" << escape(s.label)
           << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

/// Square scatter plot. Degenerate ranges (e.g. all points at the origin)
/// are widened to +-1 around the value.
inline std::string scatter(const std::vector<double>& x, const std::vector<double>& y, const std::string& title,
                           const std::string& xlabel, const std::string& ylabel) {
    if (x.size() != y.size()) throw std::invalid_argument("scatter: x and y differ in length");
    double lo = INFINITY, hi = -INFINITY;
    for (std::size_t i = 0; i < x.size(); ++i) {
        lo = std::min({lo, x[i], y[i]});
        hi = std::max({hi, x[i], y[i]});
    }
    if (!std::isfinite(lo)) lo = hi = 0.0;
    const double half = std::max(std::abs(lo), std::abs(hi));
    Frame f;
    f.width = 520;
    f.height = 520;
    f.right = 30;
    f.xr = f.yr = half > 0.0 ? padded(-half, half) : Range{-1.0, 1.0};
    std::ostringstream os;
    os << header(f.width, f.height);
    axes(os, f, title, xlabel, ylabel);
    for (std::size_t i = 0; i < x.size(); ++i)
        os << "<circle cx=\"" << num(f.px(x[i])) << "\" cy=\"" << num(f.py(y[i]))
           << "\" r=\"1.5\" fill=\"#1f77b4\" fill-opacity=\"0.5\"/>\n";
    os << "</svg>\n";
    return os.str();
}

}  // namespace tvbench::svg
