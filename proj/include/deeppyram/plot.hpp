#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "deeppyram/common.hpp"
#include "deeppyram/png_io.hpp"

namespace deeppyram {

struct Color {
    uint8_t r = 0, g = 0, b = 0;
};

inline constexpr std::array<Color, 6> kPalette = {{{31, 119, 180},
                                                   {255, 127, 14},
                                                   {44, 160, 44},
                                                   {214, 39, 40},
                                                   {148, 103, 189},
                                                   {127, 127, 127}}};

namespace detail {

// 5x7 bitmap glyphs; each entry is 7 rows of 5 bits (msb = leftmost column).
// Lowercase letters reuse the uppercase shapes.
inline const uint8_t* glyph5x7(char c) {
    static const struct {
        char ch;
        uint8_t rows[7];
    } table[] = {
        {' ', {0, 0, 0, 0, 0, 0, 0}},
        {'0', {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E}},
        {'1', {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E}},
        {'2', {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F}},
        {'3', {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E}},
        {'4', {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02}},
        {'5', {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E}},
        {'6', {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E}},
        {'7', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
        {'8', {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E}},
        {'9', {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C}},
        {'A', {0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}},
        {'B', {0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E}},
        {'C', {0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E}},
        {'D', {0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C}},
        {'E', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F}},
        {'F', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10}},
        {'G', {0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F}},
        {'H', {0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}},
        {'I', {0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E}},
        {'J', {0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C}},
        {'K', {0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11}},
        {'L', {0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F}},
        {'M', {0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11}},
        {'N', {0x11, 0x19, 0x15, 0x13, 0x11, 0x11, 0x11}},
        {'O', {0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}},
        {'P', {0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10}},
        {'Q', {0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D}},
        {'R', {0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11}},
        {'S', {0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E}},
        {'T', {0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04}},
        {'U', {0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}},
        {'V', {0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04}},
        {'W', {0x11, 0x11, 0x11, 0x15, 0x15, 0x1B, 0x11}},
        {'X', {0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11}},
        {'Y', {0x11, 0x11, 0x0A, 0x04, 0x04, 0x04, 0x04}},
        {'Z', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F}},
        {'.', {0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C}},
        {',', {0x00, 0x00, 0x00, 0x00, 0x0C, 0x04, 0x08}},
        {':', {0x00, 0x0C, 0x0C, 0x00, 0x0C, 0x0C, 0x00}},
        {'-', {0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00}},
        {'+', {0x00, 0x04, 0x04, 0x1F, 0x04, 0x04, 0x00}},
        {'_', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1F}},
        {'=', {0x00, 0x00, 0x1F, 0x00, 0x1F, 0x00, 0x00}},
        {'%', {0x18, 0x19, 0x02, 0x04, 0x08, 0x13, 0x03}},
        {'/', {0x01, 0x01, 0x02, 0x04, 0x08, 0x10, 0x10}},
        {'(', {0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02}},
        {')', {0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08}},
        {'e', {0x00, 0x00, 0x0E, 0x11, 0x1F, 0x10, 0x0E}},
    };
    const char up = (c >= 'a' && c <= 'z' && c != 'e')
                        ? static_cast<char>(c - 'a' + 'A')
                        : c;
    for (const auto& g : table)
        if (g.ch == up) return g.rows;
    return table[0].rows;  // unknown characters render as space
}

} // namespace detail

// Fixed-size RGB raster with the handful of primitives the plots need.
class Canvas {
public:
    Canvas(int width, int height, Color bg = {255, 255, 255})
        : w_(width), h_(height), px_(static_cast<size_t>(width) * height * 3) {
        for (int i = 0; i < w_ * h_; ++i) {
            px_[3 * i + 0] = bg.r;
            px_[3 * i + 1] = bg.g;
            px_[3 * i + 2] = bg.b;
        }
    }

    int width() const { return w_; }
    int height() const { return h_; }

    void set(int x, int y, Color c) {
        if (x < 0 || x >= w_ || y < 0 || y >= h_) return;
        const size_t at = 3 * (static_cast<size_t>(y) * w_ + x);
        px_[at] = c.r;
        px_[at + 1] = c.g;
        px_[at + 2] = c.b;
    }

    void fill_rect(int x0, int y0, int x1, int y1, Color c) {
        if (x0 > x1) std::swap(x0, x1);
        if (y0 > y1) std::swap(y0, y1);
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) set(x, y, c);
    }

    void line(int x0, int y0, int x1, int y1, Color c) {
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

    void text(int x, int y, const std::string& s, Color c, int scale = 1) {
        int cx = x;
        for (char ch : s) {
            const uint8_t* rows = detail::glyph5x7(ch);
            for (int r = 0; r < 7; ++r)
                for (int col = 0; col < 5; ++col)
                    if (rows[r] & (1 << (4 - col)))
                        fill_rect(cx + col * scale, y + r * scale,
                                  cx + col * scale + scale - 1, y + r * scale + scale - 1,
                                  c);
            cx += 6 * scale;
        }
    }

    static int text_width(const std::string& s, int scale = 1) {
        return static_cast<int>(s.size()) * 6 * scale;
    }

    void save(const std::string& path) const {
        ImageU8 img;
        img.width = w_;
        img.height = h_;
        img.channels = 3;
        img.pixels = px_;
        write_png(path, img);
    }

private:
    int w_, h_;
    std::vector<uint8_t> px_;
};

struct Series {
    std::string label;
    std::vector<double> xs;
    std::vector<double> ys;
};

namespace detail {

inline std::string tick_label(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4g", v);
    return buf;
}

struct AxisRange {
    double lo = 0.0, hi = 1.0;
    double map(double v, int px_lo, int px_hi) const {
        const double t = (v - lo) / (hi - lo);
        return px_lo + t * (px_hi - px_lo);
    }
};

inline AxisRange fit_range(double lo, double hi) {
    if (!(lo < hi)) {
        lo -= 1.0;
        hi += 1.0;
    }
    const double pad = 0.05 * (hi - lo);
    return {lo - pad, hi + pad};
}

} // namespace detail

// Line chart with axes, ticks, grid, and a legend. Deterministic rasteriser:
// identical inputs give identical PNG bytes.
inline void plot_lines(const std::string& path, const std::string& title,
                       const std::string& xlabel, const std::string& ylabel,
                       const std::vector<Series>& series) {
    if (series.empty()) throw ConfigError("plot_lines: no series");
    Canvas cv(900, 540);
    const int left = 70, right = 880, top = 40, bottom = 490;

    double xlo = 1e300, xhi = -1e300, ylo = 1e300, yhi = -1e300;
    for (const auto& s : series) {
        if (s.xs.size() != s.ys.size())
            throw ConfigError("plot_lines: series '" + s.label + "' xs/ys length mismatch");
        for (double v : s.xs) {
            xlo = std::min(xlo, v);
            xhi = std::max(xhi, v);
        }
        for (double v : s.ys) {
            ylo = std::min(ylo, v);
            yhi = std::max(yhi, v);
        }
    }
    if (xlo > xhi) {
        xlo = 0.0;
        xhi = 1.0;
    }
    const auto xr = detail::fit_range(xlo, xhi);
    const auto yr = detail::fit_range(ylo, yhi);

    const Color axis{40, 40, 40}, grid{225, 225, 225};
    for (int t = 0; t <= 5; ++t) {
        const double fx = xr.lo + (xr.hi - xr.lo) * t / 5.0;
        const double fy = yr.lo + (yr.hi - yr.lo) * t / 5.0;
        const int px = static_cast<int>(std::lround(xr.map(fx, left, right)));
        const int py = static_cast<int>(std::lround(yr.map(fy, bottom, top)));
        cv.line(px, top, px, bottom, grid);
        cv.line(left, py, right, py, grid);
        const std::string xl = detail::tick_label(fx);
        cv.text(px - Canvas::text_width(xl) / 2, bottom + 8, xl, axis);
        const std::string yl = detail::tick_label(fy);
        cv.text(left - Canvas::text_width(yl) - 6, py - 3, yl, axis);
    }
    cv.line(left, top, left, bottom, axis);
    cv.line(left, bottom, right, bottom, axis);
    cv.text((left + right) / 2 - Canvas::text_width(title, 2) / 2, 10, title, axis, 2);
    cv.text((left + right) / 2 - Canvas::text_width(xlabel) / 2, 520, xlabel, axis);
    cv.text(6, 10, ylabel, axis);

    for (size_t si = 0; si < series.size(); ++si) {
        const Color c = kPalette[si % kPalette.size()];
        const auto& s = series[si];
        for (size_t i = 1; i < s.xs.size(); ++i) {
            const int x0 = static_cast<int>(std::lround(xr.map(s.xs[i - 1], left, right)));
            const int y0 = static_cast<int>(std::lround(yr.map(s.ys[i - 1], bottom, top)));
            const int x1 = static_cast<int>(std::lround(xr.map(s.xs[i], left, right)));
            const int y1 = static_cast<int>(std::lround(yr.map(s.ys[i], bottom, top)));
            cv.line(x0, y0, x1, y1, c);
            cv.line(x0, y0 + 1, x1, y1 + 1, c);  // 2 px stroke
        }
        // legend entry
        const int ly = top + 8 + static_cast<int>(si) * 14;
        cv.fill_rect(right - 150, ly, right - 138, ly + 8, c);
        cv.text(right - 132, ly, s.label, axis);
    }
    cv.save(path);
}

// Grouped bar chart (one group per configuration, one bar per metric).
inline void plot_bars(const std::string& path, const std::string& title,
                      const std::vector<std::string>& group_names,
                      const std::vector<std::string>& metric_names,
                      const std::vector<std::vector<double>>& values_percent) {
    if (group_names.empty()) throw ConfigError("plot_bars: no groups");
    if (values_percent.size() != group_names.size())
        throw ConfigError("plot_bars: values/groups mismatch");
    Canvas cv(940, 560);
    const int left = 60, right = 920, top = 40, bottom = 460;
    const Color axis{40, 40, 40}, grid{225, 225, 225};

    for (int t = 0; t <= 5; ++t) {
        const double v = 20.0 * t;
        const int py = bottom - static_cast<int>(std::lround((bottom - top) * v / 100.0));
        cv.line(left, py, right, py, grid);
        const std::string yl = detail::tick_label(v);
        cv.text(left - Canvas::text_width(yl) - 6, py - 3, yl, axis);
    }
    cv.line(left, top, left, bottom, axis);
    cv.line(left, bottom, right, bottom, axis);
    cv.text((left + right) / 2 - Canvas::text_width(title, 2) / 2, 10, title, axis, 2);

    const int ng = static_cast<int>(group_names.size());
    const int nm = static_cast<int>(metric_names.size());
    const int group_w = (right - left) / ng;
    const int bar_w = std::max(4, (group_w - 16) / std::max(nm, 1));
    for (int g = 0; g < ng; ++g) {
        const auto& vals = values_percent[static_cast<size_t>(g)];
        if (static_cast<int>(vals.size()) != nm)
            throw ConfigError("plot_bars: group '" + group_names[static_cast<size_t>(g)] +
                              "' has wrong metric count");
        const int gx = left + g * group_w + 8;
        for (int m = 0; m < nm; ++m) {
            const double v = std::clamp(vals[static_cast<size_t>(m)], 0.0, 100.0);
            const int bh = static_cast<int>(std::lround((bottom - top) * v / 100.0));
            const Color c = kPalette[static_cast<size_t>(m) % kPalette.size()];
            cv.fill_rect(gx + m * bar_w, bottom - bh, gx + (m + 1) * bar_w - 3, bottom - 1, c);
            const std::string lbl = detail::tick_label(v);
            cv.text(gx + m * bar_w, bottom - bh - 10, lbl, axis);
        }
        // group caption, truncated to the group cell
        std::string name = group_names[static_cast<size_t>(g)];
        const size_t max_chars = static_cast<size_t>(std::max(1, (group_w - 4) / 6));
        if (name.size() > max_chars) name = name.substr(0, max_chars);
        cv.text(left + g * group_w + 2, bottom + 10 + (g % 2) * 12, name, axis);
    }
    for (int m = 0; m < nm; ++m) {
        const int ly = top + 8 + m * 14;
        const Color c = kPalette[static_cast<size_t>(m) % kPalette.size()];
        cv.fill_rect(right - 130, ly, right - 118, ly + 8, c);
        cv.text(right - 112, ly, metric_names[static_cast<size_t>(m)], axis);
    }
    cv.save(path);
}

} // namespace deeppyram
