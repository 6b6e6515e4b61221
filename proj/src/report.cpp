#include "chaoscope/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "chaoscope/config.hpp"

namespace chaoscope {

void write_file_atomic(const std::string& path, const std::string& content) {
    namespace fs = std::filesystem;
    const fs::path target(path);
    if (target.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(target.parent_path(), ec);
    }
    const fs::path tmp = target.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw ConfigError("cannot write '" + tmp.string() + "'");
        out << content;
        if (!out) throw ConfigError("failed writing '" + tmp.string() + "'");
    }
    std::error_code ec;
    fs::rename(tmp, target, ec);
    if (ec) throw ConfigError("cannot rename '" + tmp.string() + "' to '" + path + "': " + ec.message());
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string trajectory_csv(const Trajectory& traj) {
    const std::size_t n = traj.states.empty() ? 0 : traj.states[0].size();
    const std::size_t m = traj.actions.empty() ? 0 : traj.actions[0].size();
    std::string out = "t";
    for (std::size_t i = 0; i < n; ++i) out += ",s_" + std::to_string(i);
    for (std::size_t i = 0; i < m; ++i) out += ",a_" + std::to_string(i);
    out += ",r\n";
    for (std::size_t t = 0; t < traj.rewards.size(); ++t) {
        out += std::to_string(t);
        for (double v : traj.states[t]) out += "," + format_double(v);
        for (double v : traj.actions[t]) out += "," + format_double(v);
        out += "," + format_double(traj.rewards[t]);
        out += "\n";
    }
    return out;
}

double SvgTransform::px(double x) const {
    const double span = x1 - x0;
    const double w = static_cast<double>(width - margin_left - margin_right);
    return margin_left + (x - x0) / span * w;
}

double SvgTransform::py(double y) const {
    const double span = y1 - y0;
    const double h = static_cast<double>(height - margin_top - margin_bottom);
    return height - margin_bottom - (y - y0) / span * h;
}

SvgTransform svg_transform_for(const std::vector<SvgSeries>& series, int width, int height) {
    SvgTransform t;
    t.width = width;
    t.height = height;
    bool first = true;
    for (const auto& s : series)
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (first) {
                t.x0 = t.x1 = s.x[i];
                t.y0 = t.y1 = s.y[i];
                first = false;
            }
            t.x0 = std::min(t.x0, s.x[i]);
            t.x1 = std::max(t.x1, s.x[i]);
            t.y0 = std::min(t.y0, s.y[i]);
            t.y1 = std::max(t.y1, s.y[i]);
        }
    if (t.x1 <= t.x0) t.x1 = t.x0 + 1.0;
    if (t.y1 <= t.y0) {
        t.y0 -= 1.0;
        t.y1 += 1.0;
    }
    return t;
}

namespace {

std::string fmt2(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

std::string fmt_tick(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

std::string escape_xml(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            default: out += c;
        }
    }
    return out;
}

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

}  // namespace

std::string svg_point(const SvgTransform& t, double x, double y) {
    return fmt2(t.px(x)) + "," + fmt2(t.py(y));
}

std::string svg_line_chart(const std::string& title, const std::string& x_label,
                           const std::string& y_label, const std::vector<SvgSeries>& series,
                           int width, int height) {
    const SvgTransform t = svg_transform_for(series, width, height);
    std::ostringstream out;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
        << height << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
    out << "<rect width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";
    out << "<text x=\"" << width / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\" "
        << "font-family=\"sans-serif\">" << escape_xml(title) << "</text>\n";

    // frame
    const double fx0 = t.margin_left, fx1 = width - t.margin_right;
    const double fy0 = t.margin_top, fy1 = height - t.margin_bottom;
    out << "<rect x=\"" << fmt2(fx0) << "\" y=\"" << fmt2(fy0) << "\" width=\""
        << fmt2(fx1 - fx0) << "\" height=\"" << fmt2(fy1 - fy0)
        << "\" fill=\"none\" stroke=\"#444\"/>\n";

    // ticks
    for (int i = 0; i <= 4; ++i) {
        const double fx = t.x0 + (t.x1 - t.x0) * i / 4.0;
        const double fy = t.y0 + (t.y1 - t.y0) * i / 4.0;
        out << "<line x1=\"" << fmt2(t.px(fx)) << "\" y1=\"" << fmt2(fy1) << "\" x2=\""
            << fmt2(t.px(fx)) << "\" y2=\"" << fmt2(fy1 + 5) << "\" stroke=\"#444\"/>\n";
        out << "<text x=\"" << fmt2(t.px(fx)) << "\" y=\"" << fmt2(fy1 + 20)
            << "\" text-anchor=\"middle\" font-size=\"11\" font-family=\"sans-serif\">"
            << fmt_tick(fx) << "</text>\n";
        out << "<line x1=\"" << fmt2(fx0 - 5) << "\" y1=\"" << fmt2(t.py(fy)) << "\" x2=\""
            << fmt2(fx0) << "\" y2=\"" << fmt2(t.py(fy)) << "\" stroke=\"#444\"/>\n";
        out << "<text x=\"" << fmt2(fx0 - 8) << "\" y=\"" << fmt2(t.py(fy) + 4)
            << "\" text-anchor=\"end\" font-size=\"11\" font-family=\"sans-serif\">"
            << fmt_tick(fy) << "</text>\n";
    }
    out << "<text x=\"" << (fx0 + fx1) / 2 << "\" y=\"" << height - 12
        << "\" text-anchor=\"middle\" font-size=\"13\" font-family=\"sans-serif\">"
        << escape_xml(x_label) << "</text>\n";
    out << "<text x=\"16\" y=\"" << (fy0 + fy1) / 2
        << "\" text-anchor=\"middle\" font-size=\"13\" font-family=\"sans-serif\" "
        << "transform=\"rotate(-90 16 " << (fy0 + fy1) / 2 << ")\">" << escape_xml(y_label)
        << "</text>\n";

    for (std::size_t s = 0; s < series.size(); ++s) {
        const auto& sr = series[s];
        const std::string color =
            sr.color.empty() ? kPalette[s % (sizeof(kPalette) / sizeof(kPalette[0]))] : sr.color;
        out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t i = 0; i < sr.x.size(); ++i) {
            if (i) out << ' ';
            out << svg_point(t, sr.x[i], sr.y[i]);
        }
        out << "\"/>\n";
        if (!sr.label.empty()) {
            const double ly = fy0 + 16 + 16 * static_cast<double>(s);
            out << "<line x1=\"" << fmt2(fx1 - 120) << "\" y1=\"" << fmt2(ly - 4) << "\" x2=\""
                << fmt2(fx1 - 100) << "\" y2=\"" << fmt2(ly - 4) << "\" stroke=\"" << color
                << "\" stroke-width=\"2\"/>\n";
            out << "<text x=\"" << fmt2(fx1 - 94) << "\" y=\"" << fmt2(ly)
                << "\" font-size=\"11\" font-family=\"sans-serif\">" << escape_xml(sr.label)
                << "</text>\n";
        }
    }
    out << "</svg>\n";
    return out.str();
}

}  // namespace chaoscope
