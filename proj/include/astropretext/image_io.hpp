#ifndef ASTROPRETEXT_IMAGE_IO_HPP
#define ASTROPRETEXT_IMAGE_IO_HPP

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

namespace astropretext {

/// 8-bit interleaved RGB raster, row-major.
struct RgbImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;  // width * height * 3

    RgbImage() = default;
    RgbImage(int w, int h, std::uint8_t fill = 0)
        : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, fill) {}

    std::uint8_t& at(int x, int y, int channel) {
        return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + channel];
    }
    std::uint8_t at(int x, int y, int channel) const {
        return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + channel];
    }
};

class ImageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

RgbImage read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const RgbImage& image);

}  // namespace astropretext

#endif  // ASTROPRETEXT_IMAGE_IO_HPP
