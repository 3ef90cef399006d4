#include "mrstyle/toy_data.hpp"

#include <algorithm>
#include <cmath>

namespace mrstyle {

namespace {

using Rgb3 = std::array<double, 3>;

// Shared scene palette (sky, foliage, soil, stone, skin, shadow, highlight)
// so that color differences between samples come mostly from the filters.
constexpr std::array<Rgb3, 7> kPalette{{{0.55, 0.70, 0.90},
                                        {0.30, 0.55, 0.25},
                                        {0.50, 0.38, 0.25},
                                        {0.55, 0.55, 0.52},
                                        {0.85, 0.65, 0.50},
                                        {0.15, 0.15, 0.18},
                                        {0.92, 0.90, 0.85}}};

Rgb3 random_color(std::mt19937_64& rng) {
    std::uniform_int_distribution<std::size_t> pick(0, kPalette.size() - 1);
    std::uniform_real_distribution<double> jitter(-0.08, 0.08);
    Rgb3 c = kPalette[pick(rng)];
    for (double& v : c) v = std::clamp(v + jitter(rng), 0.0, 1.0);
    return c;
}

}  // namespace

Image toy_image(int width, int height, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const Rgb3 top = random_color(rng);
    const Rgb3 bottom = random_color(rng);
    const double angle = u(rng) * 6.283185307179586;
    const double gx = std::cos(angle), gy = std::sin(angle);

    std::vector<double> buf(static_cast<std::size_t>(width) * height * 3);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            const double t = std::clamp(0.5 + 0.5 * (gx * (2.0 * x / width - 1.0) + gy * (2.0 * y / height - 1.0)), 0.0, 1.0);
            for (int c = 0; c < 3; ++c)
                buf[(static_cast<std::size_t>(y) * width + x) * 3 + c] = top[c] * (1 - t) + bottom[c] * t;
        }

    // Many small shapes, so every crop sees the palette in similar proportions.
    const int base = std::max(1, width * height / 12);
    const int shapes = base + static_cast<int>(u(rng) * base / 5);
    for (int s = 0; s < shapes; ++s) {
        const Rgb3 col = random_color(rng);
        const double cx = u(rng) * width, cy = u(rng) * height;
        const double rx = (0.015 + 0.035 * u(rng)) * width, ry = (0.015 + 0.035 * u(rng)) * height;
        const bool rect = u(rng) < 0.4;
        const double opacity = 0.6 + 0.4 * u(rng);
        const int x0 = std::max(0, static_cast<int>(cx - rx) - 1), x1 = std::min(width, static_cast<int>(cx + rx) + 2);
        const int y0 = std::max(0, static_cast<int>(cy - ry) - 1), y1 = std::min(height, static_cast<int>(cy + ry) + 2);
        for (int y = y0; y < y1; ++y)
            for (int x = x0; x < x1; ++x) {
                const double dx = (x + 0.5 - cx) / rx, dy = (y + 0.5 - cy) / ry;
                double a;
                if (rect)
                    a = (std::abs(dx) <= 1.0 && std::abs(dy) <= 1.0) ? 1.0 : 0.0;
                else
                    a = std::clamp(1.5 - 1.5 * std::sqrt(dx * dx + dy * dy), 0.0, 1.0);
                a *= opacity;
                if (a == 0.0) continue;
                double* px = &buf[(static_cast<std::size_t>(y) * width + x) * 3];
                for (int c = 0; c < 3; ++c) px[c] = px[c] * (1 - a) + col[c] * a;
            }
    }

    // Low-frequency shading so histograms are spread like photographs.
    struct Wave {
        double fx, fy, phase, amp;
    };
    std::array<Wave, 4> waves{};
    for (Wave& w : waves) w = {(u(rng) - 0.5) * 12.0, (u(rng) - 0.5) * 12.0, u(rng) * 6.283185307179586, 0.04 + 0.06 * u(rng)};
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            double shade = 0.0;
            for (const Wave& w : waves)
                shade += w.amp * std::sin(w.fx * x / width + w.fy * y / height + w.phase);
            double* px = &buf[(static_cast<std::size_t>(y) * width + x) * 3];
            for (int c = 0; c < 3; ++c) px[c] *= 1.0 + 0.3 * shade;
        }

    std::normal_distribution<double> noise(0.0, 0.04);
    Image img(width, height);
    for (std::size_t i = 0; i < buf.size(); ++i) img.data[i] = static_cast<float>(std::clamp(buf[i] + noise(rng), 0.0, 1.0));
    return img;
}

std::vector<Image> toy_corpus(int count, int width, int height, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<Image> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) out.push_back(toy_image(width, height, rng));
    return out;
}

lut::Lut3d toy_filter(int size, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Rgb3 gain, offset, gamma, tint;
    for (int c = 0; c < 3; ++c) {
        gain[c] = 0.6 + 0.7 * u(rng);
        offset[c] = -0.12 + 0.24 * u(rng);
        gamma[c] = std::exp(std::log(0.5) + (std::log(2.0) - std::log(0.5)) * u(rng));
        tint[c] = -0.1 + 0.2 * u(rng);
    }
    const double saturation = 0.2 + 1.6 * u(rng);
    std::array<Rgb3, 3> mix{};
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) mix[r][c] = (r == c ? 1.0 : 0.0) + (u(rng) - 0.5) * 0.2;

    std::vector<float> lattice;
    lattice.reserve(static_cast<std::size_t>(size) * size * size * 3);
    for (int b = 0; b < size; ++b)
        for (int g = 0; g < size; ++g)
            for (int r = 0; r < size; ++r) {
                const Rgb3 in{lut::identity_value(r, size), lut::identity_value(g, size), lut::identity_value(b, size)};
                Rgb3 v{};
                for (int k = 0; k < 3; ++k) {
                    double m = 0.0;
                    for (int c = 0; c < 3; ++c) m += mix[k][c] * in[c];
                    v[k] = std::pow(std::clamp(m, 0.0, 1.0), gamma[k]) * gain[k] + offset[k];
                }
                const double luma = 0.299 * v[0] + 0.587 * v[1] + 0.114 * v[2];
                for (int k = 0; k < 3; ++k)
                    lattice.push_back(static_cast<float>(std::clamp(luma + (v[k] - luma) * saturation + tint[k], 0.0, 1.0)));
            }
    return lut::Lut3d(size, std::move(lattice));
}

std::vector<lut::Lut3d> toy_filters(int count, int size, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<lut::Lut3d> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) out.push_back(toy_filter(size, rng));
    return out;
}

}  // namespace mrstyle
