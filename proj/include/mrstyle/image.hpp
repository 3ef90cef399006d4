#pragma once

#include <cstddef>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace mrstyle {

class ImageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Interleaved RGB raster, one float per channel, nominally in [0,1].
struct Image {
    int width = 0;
    int height = 0;
    std::vector<float> data;

    Image() = default;
    Image(int w, int h, float fill = 0.0f);

    [[nodiscard]] bool empty() const { return width <= 0 || height <= 0; }
    [[nodiscard]] std::size_t pixel_count() const {
        return static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
    }
    [[nodiscard]] std::size_t byte_size() const { return data.size() * sizeof(float); }

    float* pixel(int x, int y) { return data.data() + (static_cast<std::size_t>(y) * width + x) * 3; }
    const float* pixel(int x, int y) const {
        return data.data() + (static_cast<std::size_t>(y) * width + x) * 3;
    }

    bool operator==(const Image& other) const = default;
};

/// Bilinear resampling with half-pixel centers (align_corners = false).
Image resize_bilinear(const Image& src, int out_w, int out_h);

/// Copy of the w x h window starting at (x0, y0).
Image crop(const Image& src, int x0, int y0, int w, int h);

/// Rounds to 8 bits and back; what a PPM/PNG round trip does to the data.
Image quantize_8bit(const Image& src);

Image read_image(const std::filesystem::path& path);
void write_image(const Image& img, const std::filesystem::path& path);

Image read_ppm(const std::filesystem::path& path);
void write_ppm(const Image& img, const std::filesystem::path& path);
Image read_png(const std::filesystem::path& path);
void write_png(const Image& img, const std::filesystem::path& path);

}  // namespace mrstyle
