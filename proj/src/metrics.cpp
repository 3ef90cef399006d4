#include "mrstyle/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "mrstyle/lut_ops.hpp"
#include "mrstyle/ops.hpp"

namespace mrstyle {

EncoderConfig metric_encoder_config() { return EncoderConfig{128, {16, 32, 64, 64}}; }

Encoder make_metric_network() {
    Encoder net(metric_encoder_config(), 0x6e7a1c5ULL, "metric");
    nn::set_frozen(net.parameters(), true);
    return net;
}

double gram_style_loss(const FeaturePyramid& a, const FeaturePyramid& b) {
    nn::NoGradGuard guard;
    double total = 0.0;
    for (std::size_t i = 0; i < a.levels.size(); ++i)
        total += nn::mse(nn::gram(a.levels[i]), nn::gram(b.levels[i])).item();
    return total;
}

double gram_style_loss(const Image& a, const Image& b, const Encoder& net) {
    nn::NoGradGuard guard;
    return gram_style_loss(net.encode_resized(nn::image_to_tensor(a)), net.encode_resized(nn::image_to_tensor(b)));
}

std::vector<double> luma(const Image& img) {
    std::vector<double> y(img.pixel_count());
    for (std::size_t i = 0; i < y.size(); ++i)
        y[i] = 0.299 * img.data[3 * i] + 0.587 * img.data[3 * i + 1] + 0.114 * img.data[3 * i + 2];
    return y;
}

namespace {

std::vector<double> gaussian_taps(int size, double sigma) {
    std::vector<double> g(static_cast<std::size_t>(size));
    const int half = size / 2;
    double sum = 0.0;
    for (int i = 0; i < size; ++i) {
        const double d = i - half;
        g[static_cast<std::size_t>(i)] = std::exp(-d * d / (2 * sigma * sigma));
        sum += g[static_cast<std::size_t>(i)];
    }
    for (double& v : g) v /= sum;
    return g;
}

// Separable "valid" filtering: (h, w) -> (h-k+1, w-k+1).
std::vector<double> filter_valid(const std::vector<double>& src, int w, int h, const std::vector<double>& taps) {
    const int k = static_cast<int>(taps.size());
    const int ow = w - k + 1, oh = h - k + 1;
    std::vector<double> rows(static_cast<std::size_t>(h) * ow);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (int t = 0; t < k; ++t) acc += taps[static_cast<std::size_t>(t)] * src[static_cast<std::size_t>(y) * w + x + t];
            rows[static_cast<std::size_t>(y) * ow + x] = acc;
        }
    std::vector<double> out(static_cast<std::size_t>(oh) * ow);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (int t = 0; t < k; ++t) acc += taps[static_cast<std::size_t>(t)] * rows[static_cast<std::size_t>(y + t) * ow + x];
            out[static_cast<std::size_t>(y) * ow + x] = acc;
        }
    return out;
}

}  // namespace

double content_ssim(const Image& a, const Image& b) {
    if (a.width != b.width || a.height != b.height)
        throw std::invalid_argument("content_ssim: " + std::to_string(a.width) + "x" + std::to_string(a.height) + " vs " +
                                    std::to_string(b.width) + "x" + std::to_string(b.height));
    if (a.empty()) throw std::invalid_argument("content_ssim of an empty image");
    constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    int k = std::min({11, a.width, a.height});
    if (k % 2 == 0) --k;
    const auto taps = gaussian_taps(k, 1.5);

    const std::vector<double> x = luma(a), y = luma(b);
    std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        xx[i] = x[i] * x[i];
        yy[i] = y[i] * y[i];
        xy[i] = x[i] * y[i];
    }
    const auto mx = filter_valid(x, a.width, a.height, taps), my = filter_valid(y, a.width, a.height, taps);
    const auto sxx = filter_valid(xx, a.width, a.height, taps), syy = filter_valid(yy, a.width, a.height, taps);
    const auto sxy = filter_valid(xy, a.width, a.height, taps);
    double total = 0.0;
    for (std::size_t i = 0; i < mx.size(); ++i) {
        const double vx = sxx[i] - mx[i] * mx[i], vy = syy[i] - my[i] * my[i], cov = sxy[i] - mx[i] * my[i];
        total += ((2 * mx[i] * my[i] + c1) * (2 * cov + c2)) / ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
    }
    return total / static_cast<double>(mx.size());
}

std::array<double, 3> srgb_to_lab(double r, double g, double b) {
    auto decode = [](double c) {
        c = std::clamp(c, 0.0, 1.0);
        return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
    };
    const double lr = decode(r), lg = decode(g), lb = decode(b);
    const double x = (0.4124564 * lr + 0.3575761 * lg + 0.1804375 * lb) / 0.95047;
    const double y = 0.2126729 * lr + 0.7151522 * lg + 0.0721750 * lb;
    const double z = (0.0193339 * lr + 0.1191920 * lg + 0.9503041 * lb) / 1.08883;
    auto f = [](double t) {
        constexpr double d = 6.0 / 29.0;
        return t > d * d * d ? std::cbrt(t) : t / (3 * d * d) + 4.0 / 29.0;
    };
    const double fx = f(x), fy = f(y), fz = f(z);
    return {116 * fy - 16, 500 * (fx - fy), 200 * (fy - fz)};
}

namespace {

std::array<std::array<double, kLabBins>, 3> lab_histograms(const Image& img) {
    if (img.empty()) throw std::invalid_argument("Lab histogram of an empty frame");
    std::array<std::array<double, kLabBins>, 3> h{};
    auto bin = [](double v, double lo, double hi) {
        return std::clamp(static_cast<int>(std::floor((v - lo) / (hi - lo) * kLabBins)), 0, kLabBins - 1);
    };
    for (std::size_t i = 0; i < img.pixel_count(); ++i) {
        const auto lab = srgb_to_lab(img.data[3 * i], img.data[3 * i + 1], img.data[3 * i + 2]);
        h[0][static_cast<std::size_t>(bin(lab[0], 0.0, 100.0))] += 1;
        h[1][static_cast<std::size_t>(bin(lab[1], -128.0, 127.0))] += 1;
        h[2][static_cast<std::size_t>(bin(lab[2], -128.0, 127.0))] += 1;
    }
    const double inv = 1.0 / static_cast<double>(img.pixel_count());
    for (auto& ch : h)
        for (double& v : ch) v *= inv;
    return h;
}

}  // namespace

std::array<double, 3> lab_histogram_distances(const Image& f1, const Image& f2) {
    const auto h1 = lab_histograms(f1), h2 = lab_histograms(f2);
    std::array<double, 3> d{};
    for (std::size_t c = 0; c < 3; ++c) {
        for (std::size_t j = 0; j < static_cast<std::size_t>(kLabBins); ++j) d[c] += std::abs(h1[c][j] - h2[c][j]);
        d[c] *= 0.5;
    }
    return d;
}

double lab_histogram_distance(const Image& f1, const Image& f2) {
    const auto d = lab_histogram_distances(f1, f2);
    return (d[0] + d[1] + d[2]) / 3.0;
}

}  // namespace mrstyle
