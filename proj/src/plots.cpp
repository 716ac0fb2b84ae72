#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "latflow/error.hpp"
#include "latflow/evaluation.hpp"
#include "latflow/metrics.hpp"

// Overlay figures are written as hand-rolled SVG: a couple of polylines per
// entity need no plotting library, and the output stays byte-deterministic.

namespace latflow::eval {

namespace {

constexpr double kPanel = 320.0;  // drawable square per trajectory
constexpr double kMargin = 36.0;  // outer border and inter-panel gap
constexpr double kTitleBand = 24.0;

const char* kSampleColors[] = {"#d62728", "#1f77b4", "#2ca02c",
                               "#9467bd", "#ff7f0e", "#17becf"};

std::string fmt(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

// planar projection: coordinate dims (0, 1), or (frame index, value) when
// the system is one-dimensional
struct Point {
    double x = 0, y = 0;
};

Point project(const Tensor& X, std::int64_t f, std::int64_t i, std::int64_t frame_offset) {
    const auto D = X.shape[2];
    const auto* row = X.data.data() + (f * X.shape[1] + i) * D;
    if (D >= 2) return {static_cast<double>(row[0]), static_cast<double>(row[1])};
    return {static_cast<double>(frame_offset + f), static_cast<double>(row[0])};
}

struct Bounds {
    double xlo = 1e300, xhi = -1e300, ylo = 1e300, yhi = -1e300;
    void add(const Point& p) {
        xlo = std::min(xlo, p.x);
        xhi = std::max(xhi, p.x);
        ylo = std::min(ylo, p.y);
        yhi = std::max(yhi, p.y);
    }
    void pad() {
        const double dx = std::max(xhi - xlo, 1e-9), dy = std::max(yhi - ylo, 1e-9);
        xlo -= 0.05 * dx;
        xhi += 0.05 * dx;
        ylo -= 0.05 * dy;
        yhi += 0.05 * dy;
    }
};

class Panel {
  public:
    Panel(Bounds b, double ox, double oy) : b_(b), ox_(ox), oy_(oy) {}

    Point pixel(const Point& p) const {
        // SVG y grows downward
        return {ox_ + (p.x - b_.xlo) / (b_.xhi - b_.xlo) * kPanel,
                oy_ + (1.0 - (p.y - b_.ylo) / (b_.yhi - b_.ylo)) * kPanel};
    }

    std::string map(const Point& p) const {
        const Point px = pixel(p);
        return fmt(px.x) + "," + fmt(px.y);
    }

    // polyline over frames [0, F) of X at entity i; lead, when given, is a
    // point prepended so future paths connect to the observed stub
    std::string polyline(const Tensor& X, std::int64_t i, std::int64_t frame_offset,
                         const Point* lead, const std::string& style) const {
        std::string pts;
        if (lead) pts += map(*lead) + " ";
        for (std::int64_t f = 0; f < X.shape[0]; ++f)
            pts += map(project(X, f, i, frame_offset)) + " ";
        pts.pop_back();
        return "  <polyline fill=\"none\" points=\"" + pts + "\" " + style + "/>\n";
    }

  private:
    Bounds b_;
    double ox_, oy_;
};

std::string render_panel(const TrajectoryForecasts& tf, double ox, double oy) {
    const auto N = tf.observed.shape[1];
    const auto T_o = tf.observed.shape[0];

    Bounds b;
    for (std::int64_t f = 0; f < T_o; ++f)
        for (std::int64_t i = 0; i < N; ++i) b.add(project(tf.observed, f, i, 0));
    for (std::int64_t f = 0; f < tf.future.shape[0]; ++f)
        for (std::int64_t i = 0; i < N; ++i) b.add(project(tf.future, f, i, T_o));
    for (const auto& s : tf.samples)
        for (std::int64_t f = 0; f < s.shape[0]; ++f)
            for (std::int64_t i = 0; i < N; ++i) b.add(project(s, f, i, T_o));
    b.pad();
    const Panel panel(b, ox, oy);

    std::string svg;
    svg += "  <rect x=\"" + fmt(ox) + "\" y=\"" + fmt(oy) + "\" width=\"" + fmt(kPanel) +
           "\" height=\"" + fmt(kPanel) + "\" fill=\"#fcfcfc\" stroke=\"#c0c0c0\"/>\n";
    svg += "  <text x=\"" + fmt(ox) + "\" y=\"" + fmt(oy - 8.0) +
           "\" font-family=\"monospace\" font-size=\"13\">trajectory " +
           std::to_string(tf.traj_id) + "</text>\n";

    for (std::int64_t i = 0; i < N; ++i) {
        const Point seam = project(tf.observed, T_o - 1, i, 0);
        // samples first so truth and the observed stub stay on top
        for (std::size_t k = 0; k < tf.samples.size(); ++k) {
            const auto* color = kSampleColors[k % std::size(kSampleColors)];
            svg += panel.polyline(tf.samples[k], i, T_o, &seam,
                                  "stroke=\"" + std::string(color) +
                                      "\" stroke-width=\"1\" stroke-opacity=\"0.75\"");
        }
        svg += panel.polyline(tf.future, i, T_o, &seam,
                              "stroke=\"#202020\" stroke-width=\"2\"");
        svg += panel.polyline(tf.observed, i, 0, nullptr,
                              "stroke=\"#8a8a8a\" stroke-width=\"1.5\"");
        const Point seam_px = panel.pixel(seam);
        svg += "  <circle cx=\"" + fmt(seam_px.x) + "\" cy=\"" + fmt(seam_px.y) +
               "\" r=\"2.5\" fill=\"#8a8a8a\"/>\n";
    }
    return svg;
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw IoError("short write to " + path);
}

} // namespace

std::vector<std::string> emit_plots(const metrics::MetricReport& report,
                                    const std::vector<TrajectoryForecasts>& forecasts,
                                    const std::string& scenario, std::uint64_t seed,
                                    const std::string& out_dir) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create " + out_dir + ": " + ec.message());

    std::vector<std::string> written;
    const std::string csv_path = out_dir + "/metrics.csv";
    write_file(csv_path, metrics::metrics_csv(report, scenario, seed));
    written.push_back(csv_path);

    if (forecasts.empty()) return written;

    const auto n = static_cast<std::int64_t>(forecasts.size());
    const std::int64_t cols = std::min<std::int64_t>(2, n);
    const std::int64_t rows = (n + cols - 1) / cols;
    const double width = kMargin + static_cast<double>(cols) * (kPanel + kMargin);
    const double height =
        kMargin + kTitleBand + static_cast<double>(rows) * (kPanel + kMargin + kTitleBand);

    std::string svg;
    svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt(width) +
           "\" height=\"" + fmt(height) + "\" viewBox=\"0 0 " + fmt(width) + " " +
           fmt(height) + "\">\n";
    svg += "  <rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n";
    svg += "  <text x=\"" + fmt(kMargin) + "\" y=\"" + fmt(kMargin - 12.0) +
           "\" font-family=\"monospace\" font-size=\"14\">" + scenario +
           " forecasts: observed in gray, truth in black, samples in color</text>\n";

    for (std::int64_t idx = 0; idx < n; ++idx) {
        const double ox = kMargin + static_cast<double>(idx % cols) * (kPanel + kMargin);
        const double oy = kMargin + kTitleBand +
                          static_cast<double>(idx / cols) * (kPanel + kMargin + kTitleBand);
        svg += render_panel(forecasts[static_cast<std::size_t>(idx)], ox, oy);
    }
    svg += "</svg>\n";

    const std::string svg_path = out_dir + "/forecast_" + scenario + ".svg";
    write_file(svg_path, svg);
    written.push_back(svg_path);
    return written;
}

} // namespace latflow::eval
