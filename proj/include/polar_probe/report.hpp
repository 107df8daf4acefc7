#pragma once

// Static figures (SVG) with their backing CSV files.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "polar_probe/error.hpp"
#include "polar_probe/geometry.hpp"
#include "polar_probe/metrics.hpp"

namespace polar {

namespace detail {

inline std::string xml_escape(std::string_view s) {
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

inline std::string fmt(double v, int digits = 2) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

// white -> dark blue ramp for values in [0, 1]
inline std::string ramp(double v) {
    v = std::clamp(v, 0.0, 1.0);
    const int r = static_cast<int>(std::lround(255 - v * (255 - 8)));
    const int g = static_cast<int>(std::lround(255 - v * (255 - 48)));
    const int b = static_cast<int>(std::lround(255 - v * (255 - 107)));
    char buf[16];
    std::snprintf(buf, sizeof buf, "#%02x%02x%02x", r, g, b);
    return buf;
}

// qualitative palette for categorical scatter plots
inline std::string palette(std::size_t i) {
    static const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                   "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
    return colors[i % 10];
}

inline std::ofstream open_out(const std::filesystem::path& p) {
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream f(p);
    if (!f) throw IoError("cannot write " + p.string());
    f.precision(10);
    return f;
}

}  // namespace detail

/// Long-format CSV of a cosine matrix: row,col,row_label,col_label,abs_cosine.
inline void write_cosine_csv(std::ostream& out, const CosineMatrix& m) {
    std::vector<std::string> owner(static_cast<std::size_t>(m.values.rows()));
    for (const auto& b : m.blocks)
        for (std::size_t i = b.begin; i < b.end; ++i) owner[i] = b.label;
    out << "row,col,row_label,col_label,abs_cosine\n";
    for (Eigen::Index i = 0; i < m.values.rows(); ++i)
        for (Eigen::Index j = 0; j < m.values.cols(); ++j)
            out << i << ',' << j << ',' << owner[static_cast<std::size_t>(i)] << ','
                << owner[static_cast<std::size_t>(j)] << ',' << m.values(i, j) << '\n';
}

/// Heatmap of |cosine| with label blocks outlined and named along the axes.
inline void write_cosine_svg(std::ostream& out, const CosineMatrix& m, const std::string& title = "") {
    const double n = static_cast<double>(std::max<Eigen::Index>(1, m.values.rows()));
    const double side = 600.0;
    const double cell = side / n;
    const double left = 110.0, top = 40.0;
    const double width = left + side + 80.0, height = top + side + 100.0;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
        << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    if (!title.empty())
        out << "<text x=\"" << left << "\" y=\"24\" font-size=\"14\">" << detail::xml_escape(title)
            << "</text>\n";
    for (Eigen::Index i = 0; i < m.values.rows(); ++i)
        for (Eigen::Index j = 0; j < m.values.cols(); ++j)
            out << "<rect x=\"" << detail::fmt(left + static_cast<double>(j) * cell, 3) << "\" y=\""
                << detail::fmt(top + static_cast<double>(i) * cell, 3) << "\" width=\""
                << detail::fmt(cell + 0.05, 3) << "\" height=\"" << detail::fmt(cell + 0.05, 3)
                << "\" fill=\"" << detail::ramp(m.values(i, j)) << "\"/>\n";
    for (const auto& b : m.blocks) {
        const double a = static_cast<double>(b.begin) * cell;
        const double w = static_cast<double>(b.end - b.begin) * cell;
        out << "<rect x=\"" << detail::fmt(left + a, 3) << "\" y=\"" << detail::fmt(top + a, 3)
            << "\" width=\"" << detail::fmt(w, 3) << "\" height=\"" << detail::fmt(w, 3)
            << "\" fill=\"none\" stroke=\"black\" stroke-width=\"1\"/>\n";
        const double mid = a + w / 2.0;
        out << "<text x=\"" << left - 6 << "\" y=\"" << detail::fmt(top + mid + 4, 3)
            << "\" text-anchor=\"end\">" << detail::xml_escape(b.label) << "</text>\n";
        out << "<text transform=\"translate(" << detail::fmt(left + mid + 4, 3) << ","
            << top + side + 8 << ") rotate(90)\">" << detail::xml_escape(b.label) << "</text>\n";
    }
    // color bar
    const double bx = left + side + 20.0;
    for (int s = 0; s < 50; ++s) {
        const double v = 1.0 - s / 49.0;
        out << "<rect x=\"" << bx << "\" y=\"" << detail::fmt(top + s * side / 50.0, 3)
            << "\" width=\"14\" height=\"" << detail::fmt(side / 50.0 + 0.5, 3) << "\" fill=\""
            << detail::ramp(v) << "\"/>\n";
    }
    out << "<text x=\"" << bx + 18 << "\" y=\"" << top + 8 << "\">1</text>\n";
    out << "<text x=\"" << bx + 18 << "\" y=\"" << top + side << "\">0</text>\n";
    out << "</svg>\n";
}

struct ScatterPoint {
    double x = 0.0;
    double y = 0.0;
    std::string group;
};

/// PCA of edge vectors down to two dimensions, one point per edge.
inline std::pair<std::vector<ScatterPoint>, PcaResult> pca_scatter(
    const std::map<std::string, std::vector<Vector>>& by_label) {
    std::vector<std::string> groups;
    std::vector<const Vector*> rows;
    for (const auto& [label, edges] : by_label)
        for (const auto& e : edges) {
            rows.push_back(&e);
            groups.push_back(label);
        }
    if (rows.size() < 2) throw Error("pca_scatter: need at least two edges");
    Eigen::MatrixXd pts(static_cast<Eigen::Index>(rows.size()), rows.front()->size());
    for (std::size_t i = 0; i < rows.size(); ++i) pts.row(static_cast<Eigen::Index>(i)) = rows[i]->transpose();
    PcaResult pca = pca_project(pts, 2);
    std::vector<ScatterPoint> out;
    for (std::size_t i = 0; i < rows.size(); ++i)
        out.push_back({pca.coordinates(static_cast<Eigen::Index>(i), 0),
                       pca.coordinates(static_cast<Eigen::Index>(i), 1), groups[i]});
    return {std::move(out), std::move(pca)};
}

inline void write_scatter_csv(std::ostream& out, const std::vector<ScatterPoint>& pts) {
    out << "group,pc1,pc2\n";
    for (const auto& p : pts) out << p.group << ',' << p.x << ',' << p.y << '\n';
}

inline void write_scatter_svg(std::ostream& out, const std::vector<ScatterPoint>& pts,
                              const std::string& title = "", const std::vector<double>& explained = {}) {
    const double w = 640.0, h = 520.0, pad = 50.0, legend = 130.0;
    double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
    if (!pts.empty()) {
        x0 = x1 = pts.front().x;
        y0 = y1 = pts.front().y;
        for (const auto& p : pts) {
            x0 = std::min(x0, p.x);
            x1 = std::max(x1, p.x);
            y0 = std::min(y0, p.y);
            y1 = std::max(y1, p.y);
        }
    }
    if (x1 - x0 < 1e-12) x1 = x0 + 1.0;
    if (y1 - y0 < 1e-12) y1 = y0 + 1.0;
    std::map<std::string, std::size_t> color;
    for (const auto& p : pts) color.emplace(p.group, 0);
    std::size_t c = 0;
    for (auto& [g, idx] : color) idx = c++;
    auto sx = [&](double x) { return pad + (x - x0) / (x1 - x0) * (w - 2 * pad); };
    auto sy = [&](double y) { return h - pad - (y - y0) / (y1 - y0) * (h - 2 * pad); };

    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w + legend << "\" height=\"" << h
        << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<rect x=\"" << pad << "\" y=\"" << pad << "\" width=\"" << w - 2 * pad << "\" height=\""
        << h - 2 * pad << "\" fill=\"none\" stroke=\"#999\"/>\n";
    if (!title.empty())
        out << "<text x=\"" << pad << "\" y=\"30\" font-size=\"14\">" << detail::xml_escape(title)
            << "</text>\n";
    std::string xl = "PC1", yl = "PC2";
    if (explained.size() >= 2) {
        xl += " (" + detail::fmt(100.0 * explained[0], 1) + "%)";
        yl += " (" + detail::fmt(100.0 * explained[1], 1) + "%)";
    }
    out << "<text x=\"" << w / 2 << "\" y=\"" << h - 15 << "\" text-anchor=\"middle\">" << xl << "</text>\n";
    out << "<text transform=\"translate(15," << h / 2 << ") rotate(-90)\" text-anchor=\"middle\">" << yl
        << "</text>\n";
    for (const auto& p : pts)
        out << "<circle cx=\"" << detail::fmt(sx(p.x), 2) << "\" cy=\"" << detail::fmt(sy(p.y), 2)
            << "\" r=\"2.5\" fill=\"" << detail::palette(color[p.group]) << "\" fill-opacity=\"0.7\"/>\n";
    double ly = pad;
    for (const auto& [g, idx] : color) {
        out << "<circle cx=\"" << w + 10 << "\" cy=\"" << ly << "\" r=\"4\" fill=\"" << detail::palette(idx)
            << "\"/>\n";
        out << "<text x=\"" << w + 20 << "\" y=\"" << ly + 4 << "\">" << detail::xml_escape(g) << "</text>\n";
        ly += 16;
    }
    out << "</svg>\n";
}

/// Simple line chart for sweep results: one series, x values as given.
inline void write_line_svg(std::ostream& out, const std::vector<double>& xs,
                           const std::vector<std::optional<double>>& ys, const std::string& xlabel,
                           const std::string& ylabel) {
    const double w = 560.0, h = 380.0, pad = 55.0;
    double x0 = 0, x1 = 1;
    if (!xs.empty()) {
        x0 = *std::min_element(xs.begin(), xs.end());
        x1 = *std::max_element(xs.begin(), xs.end());
    }
    if (x1 - x0 < 1e-12) x1 = x0 + 1.0;
    auto sx = [&](double x) { return pad + (x - x0) / (x1 - x0) * (w - 2 * pad); };
    auto sy = [&](double y) { return h - pad - std::clamp(y, 0.0, 1.0) * (h - 2 * pad); };
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
        << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<rect x=\"" << pad << "\" y=\"" << pad << "\" width=\"" << w - 2 * pad << "\" height=\""
        << h - 2 * pad << "\" fill=\"none\" stroke=\"#999\"/>\n";
    for (int t = 0; t <= 4; ++t) {
        const double v = t / 4.0;
        out << "<text x=\"" << pad - 6 << "\" y=\"" << detail::fmt(sy(v) + 4, 2)
            << "\" text-anchor=\"end\">" << detail::fmt(v, 2) << "</text>\n";
    }
    std::string path;
    for (std::size_t i = 0; i < xs.size() && i < ys.size(); ++i) {
        out << "<text x=\"" << detail::fmt(sx(xs[i]), 2) << "\" y=\"" << h - pad + 16
            << "\" text-anchor=\"middle\">" << detail::fmt(xs[i], 0) << "</text>\n";
        if (!ys[i]) continue;
        path += (path.empty() ? "M" : " L") + detail::fmt(sx(xs[i]), 2) + "," + detail::fmt(sy(*ys[i]), 2);
        out << "<circle cx=\"" << detail::fmt(sx(xs[i]), 2) << "\" cy=\"" << detail::fmt(sy(*ys[i]), 2)
            << "\" r=\"3\" fill=\"#1f77b4\"/>\n";
    }
    if (!path.empty()) out << "<path d=\"" << path << "\" fill=\"none\" stroke=\"#1f77b4\"/>\n";
    out << "<text x=\"" << w / 2 << "\" y=\"" << h - 15 << "\" text-anchor=\"middle\">"
        << detail::xml_escape(xlabel) << "</text>\n";
    out << "<text transform=\"translate(15," << h / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
        << detail::xml_escape(ylabel) << "</text>\n";
    out << "</svg>\n";
}

}  // namespace polar
