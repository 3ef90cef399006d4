#include "mrstyle/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>

#include <png.h>

namespace mrstyle {

Image::Image(int w, int h, float fill) : width(w), height(h) {
    if (w < 0 || h < 0) throw ImageError("negative image dimensions");
    data.assign(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 3, fill);
}

Image resize_bilinear(const Image& src, int out_w, int out_h) {
    if (src.empty()) throw ImageError("resize of an empty image");
    if (out_w < 1 || out_h < 1) throw ImageError("resize target must be at least 1x1");
    Image out(out_w, out_h);
    const double sx = static_cast<double>(src.width) / out_w;
    const double sy = static_cast<double>(src.height) / out_h;
    for (int y = 0; y < out_h; ++y) {
        double fy = std::max(0.0, (y + 0.5) * sy - 0.5);
        int y0 = std::min(static_cast<int>(fy), src.height - 1);
        int y1 = std::min(y0 + 1, src.height - 1);
        double ty = fy - y0;
        for (int x = 0; x < out_w; ++x) {
            double fx = std::max(0.0, (x + 0.5) * sx - 0.5);
            int x0 = std::min(static_cast<int>(fx), src.width - 1);
            int x1 = std::min(x0 + 1, src.width - 1);
            double tx = fx - x0;
            const float* p00 = src.pixel(x0, y0);
            const float* p01 = src.pixel(x1, y0);
            const float* p10 = src.pixel(x0, y1);
            const float* p11 = src.pixel(x1, y1);
            float* o = out.pixel(x, y);
            for (int c = 0; c < 3; ++c) {
                double top = p00[c] + (p01[c] - p00[c]) * tx;
                double bot = p10[c] + (p11[c] - p10[c]) * tx;
                o[c] = static_cast<float>(top + (bot - top) * ty);
            }
        }
    }
    return out;
}

Image crop(const Image& src, int x0, int y0, int w, int h) {
    if (x0 < 0 || y0 < 0 || w < 1 || h < 1 || x0 + w > src.width || y0 + h > src.height)
        throw ImageError("crop window outside the image");
    Image out(w, h);
    for (int y = 0; y < h; ++y)
        std::copy_n(src.pixel(x0, y0 + y), static_cast<std::size_t>(w) * 3, out.pixel(0, y));
    return out;
}

namespace {

std::uint8_t to_u8(float v) {
    if (!(v > 0.0f)) return 0;
    if (v >= 1.0f) return 255;
    return static_cast<std::uint8_t>(std::lround(v * 255.0f));
}

// Skips whitespace and '#' comments in a PNM header.
void skip_pnm_space(std::istream& in) {
    for (;;) {
        int c = in.peek();
        if (c == '#') {
            std::string dummy;
            std::getline(in, dummy);
        } else if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
            in.get();
        } else {
            return;
        }
    }
}

int read_pnm_int(std::istream& in, const std::filesystem::path& path) {
    skip_pnm_space(in);
    int v = 0;
    if (!(in >> v)) throw ImageError("malformed PPM header in " + path.string());
    return v;
}

std::string lower_ext(const std::filesystem::path& path) {
    std::string ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext;
}

}  // namespace

Image quantize_8bit(const Image& src) {
    Image out = src;
    for (float& v : out.data) v = to_u8(v) / 255.0f;
    return out;
}

Image read_ppm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ImageError("cannot open " + path.string());
    char magic[2] = {0, 0};
    in.read(magic, 2);
    if (magic[0] != 'P' || (magic[1] != '6' && magic[1] != '3'))
        throw ImageError("not a P3/P6 PPM file: " + path.string());
    const bool binary = magic[1] == '6';
    int w = read_pnm_int(in, path);
    int h = read_pnm_int(in, path);
    int maxval = read_pnm_int(in, path);
    if (w < 1 || h < 1 || maxval < 1 || maxval > 65535)
        throw ImageError("invalid PPM dimensions or maxval in " + path.string());
    Image img(w, h);
    const std::size_t n = img.data.size();
    const auto maxf = static_cast<float>(maxval);
    if (binary) {
        in.get();  // single whitespace byte after maxval
        const std::size_t bpc = maxval > 255 ? 2 : 1;
        std::vector<unsigned char> raw(n * bpc);
        in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
        if (static_cast<std::size_t>(in.gcount()) != raw.size())
            throw ImageError("truncated PPM pixel data in " + path.string());
        for (std::size_t i = 0; i < n; ++i) {
            unsigned v = bpc == 2 ? (unsigned(raw[2 * i]) << 8) | raw[2 * i + 1] : raw[i];
            img.data[i] = static_cast<float>(v) / maxf;
        }
    } else {
        for (std::size_t i = 0; i < n; ++i) img.data[i] = static_cast<float>(read_pnm_int(in, path)) / maxf;
    }
    return img;
}

void write_ppm(const Image& img, const std::filesystem::path& path) {
    if (img.empty()) throw ImageError("cannot write an empty image");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ImageError("cannot open " + path.string() + " for writing");
    out << "P6\n" << img.width << ' ' << img.height << "\n255\n";
    std::vector<unsigned char> raw(img.data.size());
    std::transform(img.data.begin(), img.data.end(), raw.begin(), to_u8);
    out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!out) throw ImageError("write failed for " + path.string());
}

Image read_png(const std::filesystem::path& path) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.string().c_str()))
        throw ImageError("cannot read PNG " + path.string() + ": " + image.message);
    image.format = PNG_FORMAT_RGB;
    std::vector<unsigned char> raw(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, raw.data(), 0, nullptr)) {
        png_image_free(&image);
        throw ImageError("cannot decode PNG " + path.string() + ": " + image.message);
    }
    Image img(static_cast<int>(image.width), static_cast<int>(image.height));
    for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = raw[i] / 255.0f;
    return img;
}

void write_png(const Image& img, const std::filesystem::path& path) {
    if (img.empty()) throw ImageError("cannot write an empty image");
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(img.width);
    image.height = static_cast<png_uint_32>(img.height);
    image.format = PNG_FORMAT_RGB;
    std::vector<unsigned char> raw(img.data.size());
    std::transform(img.data.begin(), img.data.end(), raw.begin(), to_u8);
    if (!png_image_write_to_file(&image, path.string().c_str(), 0, raw.data(), 0, nullptr))
        throw ImageError("cannot write PNG " + path.string() + ": " + image.message);
}

Image read_image(const std::filesystem::path& path) {
    const std::string ext = lower_ext(path);
    if (ext == ".png") return read_png(path);
    if (ext == ".ppm" || ext == ".pnm") return read_ppm(path);
    throw ImageError("unsupported image extension '" + ext + "' (expected .ppm or .png)");
}

void write_image(const Image& img, const std::filesystem::path& path) {
    const std::string ext = lower_ext(path);
    if (ext == ".png") return write_png(img, path);
    if (ext == ".ppm" || ext == ".pnm") return write_ppm(img, path);
    throw ImageError("unsupported image extension '" + ext + "' (expected .ppm or .png)");
}

}  // namespace mrstyle
