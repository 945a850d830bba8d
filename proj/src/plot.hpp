// Minimal RGB raster for report figures: lines, markers, 5x7 text.
#ifndef ASTROPRETEXT_PLOT_HPP
#define ASTROPRETEXT_PLOT_HPP

#include "astropretext/image_io.hpp"

#include <array>
#include <cstdint>
#include <string>

namespace astropretext::plot {

using Colour = std::array<std::uint8_t, 3>;

inline constexpr Colour kBlack{0, 0, 0};
inline constexpr Colour kGrey{200, 200, 200};
inline constexpr Colour kWhite{255, 255, 255};

/// Distinct colours cycled by series index.
Colour palette(std::size_t k);

class Canvas {
public:
    Canvas(int width, int height, Colour background = kWhite);

    int width() const { return image_.width; }
    int height() const { return image_.height; }

    void pixel(int x, int y, Colour c);
    void fill_rect(int x0, int y0, int x1, int y1, Colour c);
    /// `dash` > 0 alternates drawn and skipped runs of that many pixels.
    void line(double x0, double y0, double x1, double y1, Colour c, int thickness = 1, int dash = 0);
    void marker(double x, double y, Colour c, int radius = 3);
    /// Text at scale `scale`; anchor is the top-left corner.
    void text(int x, int y, const std::string& s, Colour c, int scale = 1);
    static int text_width(const std::string& s, int scale = 1) { return static_cast<int>(s.size()) * 6 * scale; }
    void text_vertical(int x, int y, const std::string& s, Colour c, int scale = 1);

    const RgbImage& image() const { return image_; }

private:
    RgbImage image_;
    double dash_phase_ = 0.0;
};

}  // namespace astropretext::plot

#endif  // ASTROPRETEXT_PLOT_HPP
