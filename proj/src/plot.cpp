#include "plot.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <stdexcept>
#include <unordered_map>

namespace astropretext::plot {

namespace {

// 5x7 glyphs, one byte per row, bit 4 is the leftmost column.
const std::unordered_map<char, std::array<std::uint8_t, 7>>& glyphs() {
    static const std::unordered_map<char, std::array<std::uint8_t, 7>> table = {
    {'0', {0x0e, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0e}},
    {'1', {0x04, 0x0c, 0x04, 0x04, 0x04, 0x04, 0x0e}},
    {'2', {0x0e, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1f}},
    {'3', {0x1f, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0e}},
    {'4', {0x02, 0x06, 0x0a, 0x12, 0x1f, 0x02, 0x02}},
    {'5', {0x1f, 0x10, 0x1e, 0x01, 0x01, 0x11, 0x0e}},
    {'6', {0x06, 0x08, 0x10, 0x1e, 0x11, 0x11, 0x0e}},
    {'7', {0x1f, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
    {'8', {0x0e, 0x11, 0x11, 0x0e, 0x11, 0x11, 0x0e}},
    {'9', {0x0e, 0x11, 0x11, 0x0f, 0x01, 0x02, 0x0c}},
    {'A', {0x0e, 0x11, 0x11, 0x1f, 0x11, 0x11, 0x11}},
    {'B', {0x1e, 0x11, 0x11, 0x1e, 0x11, 0x11, 0x1e}},
    {'C', {0x0e, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0e}},
    {'D', {0x1c, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1c}},
    {'E', {0x1f, 0x10, 0x10, 0x1e, 0x10, 0x10, 0x1f}},
    {'F', {0x1f, 0x10, 0x10, 0x1e, 0x10, 0x10, 0x10}},
    {'G', {0x0e, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0f}},
    {'H', {0x11, 0x11, 0x11, 0x1f, 0x11, 0x11, 0x11}},
    {'I', {0x0e, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0e}},
    {'J', {0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0c}},
    {'K', {0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11}},
    {'L', {0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1f}},
    {'M', {0x11, 0x1b, 0x15, 0x15, 0x11, 0x11, 0x11}},
    {'N', {0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11}},
    {'O', {0x0e, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0e}},
    {'P', {0x1e, 0x11, 0x11, 0x1e, 0x10, 0x10, 0x10}},
    {'Q', {0x0e, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0d}},
    {'R', {0x1e, 0x11, 0x11, 0x1e, 0x14, 0x12, 0x11}},
    {'S', {0x0f, 0x10, 0x10, 0x0e, 0x01, 0x01, 0x1e}},
    {'T', {0x1f, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04}},
    {'U', {0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0e}},
    {'V', {0x11, 0x11, 0x11, 0x11, 0x11, 0x0a, 0x04}},
    {'W', {0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0a}},
    {'X', {0x11, 0x11, 0x0a, 0x04, 0x0a, 0x11, 0x11}},
    {'Y', {0x11, 0x11, 0x0a, 0x04, 0x04, 0x04, 0x04}},
    {'Z', {0x1f, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1f}},
    {'.', {0x00, 0x00, 0x00, 0x00, 0x00, 0x0c, 0x0c}},
    {',', {0x00, 0x00, 0x00, 0x00, 0x0c, 0x04, 0x08}},
    {'-', {0x00, 0x00, 0x00, 0x1f, 0x00, 0x00, 0x00}},
    {'+', {0x00, 0x04, 0x04, 0x1f, 0x04, 0x04, 0x00}},
    {':', {0x00, 0x0c, 0x0c, 0x00, 0x0c, 0x0c, 0x00}},
    {'(', {0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02}},
    {')', {0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08}},
    {'=', {0x00, 0x00, 0x1f, 0x00, 0x1f, 0x00, 0x00}},
    {'%', {0x18, 0x19, 0x02, 0x04, 0x08, 0x13, 0x03}},
    {'/', {0x00, 0x01, 0x02, 0x04, 0x08, 0x10, 0x00}},
    {'_', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1f}},
    {'*', {0x00, 0x04, 0x15, 0x0e, 0x15, 0x04, 0x00}},
    {'x', {0x00, 0x00, 0x11, 0x0a, 0x04, 0x0a, 0x11}},
    };
    return table;
}

const std::array<std::uint8_t, 7>* glyph(char ch) {
    const auto& table = glyphs();
    auto it = table.find(ch);
    if (it == table.end()) {
        it = table.find(static_cast<char>(std::toupper(static_cast<unsigned char>(ch))));
    }
    return it == table.end() ? nullptr : &it->second;
}

}  // namespace

Colour palette(std::size_t k) {
    static constexpr Colour colours[] = {{31, 119, 180}, {255, 127, 14}, {44, 160, 44},  {214, 39, 40},
                                         {148, 103, 189}, {140, 86, 75}, {227, 119, 194}, {127, 127, 127}};
    return colours[k % std::size(colours)];
}

Canvas::Canvas(int width, int height, Colour background) {
    if (width <= 0 || height <= 0) {
        throw std::invalid_argument("canvas dimensions must be positive");
    }
    image_.width = width;
    image_.height = height;
    image_.pixels.resize(static_cast<std::size_t>(width) * height * 3);
    for (std::size_t k = 0; k < image_.pixels.size(); k += 3) {
        std::copy(background.begin(), background.end(), image_.pixels.begin() + static_cast<std::ptrdiff_t>(k));
    }
}

void Canvas::pixel(int x, int y, Colour c) {
    if (x < 0 || y < 0 || x >= image_.width || y >= image_.height) {
        return;
    }
    const std::size_t at = (static_cast<std::size_t>(y) * image_.width + x) * 3;
    std::copy(c.begin(), c.end(), image_.pixels.begin() + static_cast<std::ptrdiff_t>(at));
}

void Canvas::fill_rect(int x0, int y0, int x1, int y1, Colour c) {
    for (int y = std::min(y0, y1); y <= std::max(y0, y1); ++y) {
        for (int x = std::min(x0, x1); x <= std::max(x0, x1); ++x) {
            pixel(x, y, c);
        }
    }
}

void Canvas::line(double x0, double y0, double x1, double y1, Colour c, int thickness, int dash) {
    const double length = std::hypot(x1 - x0, y1 - y0);
    const int steps = std::max(1, static_cast<int>(std::ceil(length * 2)));
    const int half = thickness / 2;
    for (int s = 0; s <= steps; ++s) {
        const double t = static_cast<double>(s) / steps;
        if (dash > 0) {
            const double along = dash_phase_ + t * length;
            if (static_cast<long>(along / dash) % 2 == 1) {
                continue;
            }
        }
        const int x = static_cast<int>(std::lround(x0 + t * (x1 - x0)));
        const int y = static_cast<int>(std::lround(y0 + t * (y1 - y0)));
        fill_rect(x - half, y - half, x - half + thickness - 1, y - half + thickness - 1, c);
    }
    dash_phase_ = dash > 0 ? dash_phase_ + length : 0.0;
}

void Canvas::marker(double x, double y, Colour c, int radius) {
    const int cx = static_cast<int>(std::lround(x));
    const int cy = static_cast<int>(std::lround(y));
    for (int dy = -radius; dy <= radius; ++dy) {
        for (int dx = -radius; dx <= radius; ++dx) {
            if (dx * dx + dy * dy <= radius * radius) {
                pixel(cx + dx, cy + dy, c);
            }
        }
    }
}

void Canvas::text(int x, int y, const std::string& s, Colour c, int scale) {
    for (std::size_t k = 0; k < s.size(); ++k) {
        const auto* g = glyph(s[k]);
        if (!g) {
            continue;
        }
        const int ox = x + static_cast<int>(k) * 6 * scale;
        for (int row = 0; row < 7; ++row) {
            for (int col = 0; col < 5; ++col) {
                if ((*g)[row] & (0x10 >> col)) {
                    fill_rect(ox + col * scale, y + row * scale, ox + (col + 1) * scale - 1,
                              y + (row + 1) * scale - 1, c);
                }
            }
        }
    }
}

void Canvas::text_vertical(int x, int y, const std::string& s, Colour c, int scale) {
    // reads bottom to top, anchor is the bottom-left corner
    for (std::size_t k = 0; k < s.size(); ++k) {
        const auto* g = glyph(s[k]);
        if (!g) {
            continue;
        }
        const int oy = y - static_cast<int>(k) * 6 * scale;
        for (int row = 0; row < 7; ++row) {
            for (int col = 0; col < 5; ++col) {
                if ((*g)[row] & (0x10 >> col)) {
                    const int px = x + row * scale;
                    const int py = oy - col * scale;
                    fill_rect(px, py - scale + 1, px + scale - 1, py, c);
                }
            }
        }
    }
}

}  // namespace astropretext::plot
