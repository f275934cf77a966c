#pragma once

// Bare-bones line charts written as binary PPM. Enough to eyeball
// convergence curves without pulling in a plotting stack.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "tta/error.hpp"

namespace tta::plot {

using Rgb = std::array<std::uint8_t, 3>;

struct Series {
    std::vector<double> x, y;
    Rgb color{0, 0, 0};
};

class Canvas {
public:
    Canvas(int w, int h) : w_(w), h_(h), px_(static_cast<std::size_t>(w) * h, Rgb{255, 255, 255}) {}

    void set(int x, int y, Rgb c) {
        if (x >= 0 && y >= 0 && x < w_ && y < h_) px_[static_cast<std::size_t>(y) * w_ + x] = c;
    }

    Rgb get(int x, int y) const { return px_[static_cast<std::size_t>(y) * w_ + x]; }

    // Bresenham
    void line(int x0, int y0, int x1, int y1, Rgb c) {
        const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
        const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
        int err = dx + dy;
        while (true) {
            set(x0, y0, c);
            if (x0 == x1 && y0 == y1) break;
            const int e2 = 2 * err;
            if (e2 >= dy) {
                err += dy;
                x0 += sx;
            }
            if (e2 <= dx) {
                err += dx;
                y0 += sy;
            }
        }
    }

    void write_ppm(const std::filesystem::path& p) const {
        std::ofstream out(p, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + p.string());
        out << "P6\n" << w_ << ' ' << h_ << "\n255\n";
        for (const auto& c : px_) out.write(reinterpret_cast<const char*>(c.data()), 3);
    }

    int width() const { return w_; }
    int height() const { return h_; }

private:
    int w_, h_;
    std::vector<Rgb> px_;
};

/// Axes box plus polylines; y is fixed to [y_lo, y_hi], x spans the data.
inline Canvas line_chart(const std::vector<Series>& series, double y_lo = 0.0, double y_hi = 1.0, int w = 480,
                         int h = 320) {
    Canvas c(w, h);
    const int left = 30, right = w - 10, top = 10, bottom = h - 25;
    double x_lo = 0.0, x_hi = 1.0;
    bool any = false;
    for (const auto& s : series)
        for (double x : s.x) {
            x_lo = any ? std::min(x_lo, x) : x;
            x_hi = any ? std::max(x_hi, x) : x;
            any = true;
        }
    if (x_hi <= x_lo) x_hi = x_lo + 1.0;
    const Rgb grey{160, 160, 160}, black{0, 0, 0};
    for (int q = 0; q <= 4; ++q) {
        const int y = bottom - (bottom - top) * q / 4;
        c.line(left, y, right, y, grey);
    }
    c.line(left, top, left, bottom, black);
    c.line(left, bottom, right, bottom, black);
    auto px = [&](double x) { return left + static_cast<int>(std::lround((x - x_lo) / (x_hi - x_lo) * (right - left))); };
    auto py = [&](double y) {
        const double t = std::clamp((y - y_lo) / (y_hi - y_lo), 0.0, 1.0);
        return bottom - static_cast<int>(std::lround(t * (bottom - top)));
    };
    for (const auto& s : series)
        for (std::size_t i = 0; i + 1 < s.x.size() && i + 1 < s.y.size(); ++i)
            c.line(px(s.x[i]), py(s.y[i]), px(s.x[i + 1]), py(s.y[i + 1]), s.color);
    return c;
}

}  // namespace tta::plot
