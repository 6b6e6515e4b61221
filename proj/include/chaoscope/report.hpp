// report.hpp — file emission: CSV, SVG line charts, atomic writes.
//
// CSV files are the machine contract; SVG plots are conveniences rendered
// from exactly the same data points. All output is deterministic: rerunning
// a command with the same config and seed produces byte-identical files.
#pragma once

#include <string>
#include <vector>

#include "chaoscope/dynsys.hpp"
#include "chaoscope/linalg.hpp"

namespace chaoscope {

// Writes content to `path` via a temp file in the same directory + rename.
void write_file_atomic(const std::string& path, const std::string& content);

std::string read_file(const std::string& path);

// Header `t,s_0..s_{N-1},a_0..a_{M-1},r`; one row per step (the final state
// has no action/reward row).
std::string trajectory_csv(const Trajectory& traj);

struct SvgSeries {
    std::string label;
    Vec x;
    Vec y;
    std::string color;
};

// Pixel mapping used by svg_line_chart; exposed so tests can reproduce the
// exact coordinates emitted for a data point.
struct SvgTransform {
    double x0 = 0.0, x1 = 1.0, y0 = 0.0, y1 = 1.0;
    int width = 800, height = 500;
    int margin_left = 70, margin_right = 20, margin_top = 40, margin_bottom = 50;

    double px(double x) const;
    double py(double y) const;
};

SvgTransform svg_transform_for(const std::vector<SvgSeries>& series, int width = 800,
                               int height = 500);

// Fixed-format coordinate string "%.2f,%.2f" as emitted into polylines.
std::string svg_point(const SvgTransform& t, double x, double y);

std::string svg_line_chart(const std::string& title, const std::string& x_label,
                           const std::string& y_label, const std::vector<SvgSeries>& series,
                           int width = 800, int height = 500);

}  // namespace chaoscope
