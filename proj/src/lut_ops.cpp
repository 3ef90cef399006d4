#include "mrstyle/lut_ops.hpp"

#include <algorithm>
#include <cmath>

namespace mrstyle::nn {

Tensor clut_lattice(const Tensor& weights, const Tensor& basis, int size) {
    if (basis.rank() != 2) throw TensorError("clut_lattice: basis must be (K, L)");
    const int k = basis.dim(0);
    const std::size_t len = static_cast<std::size_t>(basis.dim(1));
    if (len != static_cast<std::size_t>(size) * size * size * 3)
        throw TensorError("clut_lattice: basis table length does not match LUT size " + std::to_string(size));
    if (weights.numel() != static_cast<std::size_t>(k))
        throw TensorError("clut_lattice: " + std::to_string(weights.numel()) + " weights for " + std::to_string(k) +
                          " basis tables");
    auto out = make_result({static_cast<int>(len)}, {&weights, &basis});
    const lut::Lut3d ident = lut::identity_lut(size);
    const auto base = ident.lattice();
    const double* w = weights.node().data.data();
    const double* bs = basis.node().data.data();
    for (std::size_t i = 0; i < len; ++i) out->data[i] = base[i];
    for (int j = 0; j < k; ++j) {
        const double wj = w[j];
        if (wj == 0.0) continue;
        const double* table = bs + static_cast<std::size_t>(j) * len;
        for (std::size_t i = 0; i < len; ++i) out->data[i] += wj * table[i];
    }
    // Entries pinned by the clamp pass no gradient.
    std::vector<unsigned char> live(len);
    for (std::size_t i = 0; i < len; ++i) {
        double& v = out->data[i];
        live[i] = v >= 0.0 && v <= 1.0;
        v = std::clamp(v, 0.0, 1.0);
    }
    if (out->requires_grad)
        out->backward = [k, len, live = std::move(live)](Node& self) {
            Node& pw = *self.parents[0];
            Node& pb = *self.parents[1];
            for (int j = 0; j < k; ++j) {
                const double* table = pb.data.data() + static_cast<std::size_t>(j) * len;
                double* gtable = pb.requires_grad ? pb.grad.data() + static_cast<std::size_t>(j) * len : nullptr;
                const double wj = pw.data[static_cast<std::size_t>(j)];
                double acc = 0.0;
                for (std::size_t i = 0; i < len; ++i) {
                    if (!live[i]) continue;
                    const double g = self.grad[i];
                    acc += g * table[i];
                    if (gtable) gtable[i] += g * wj;
                }
                if (pw.requires_grad) pw.grad[static_cast<std::size_t>(j)] += acc;
            }
        };
    return Tensor(out);
}

Tensor apply_lut(const Tensor& lattice, int size, const Tensor& image) {
    if (image.rank() != 4 || image.dim(0) != 1 || image.dim(1) != 3)
        throw TensorError("apply_lut: image must be (1,3,H,W), got " + shape_string(image.shape()));
    if (lattice.numel() != static_cast<std::size_t>(size) * size * size * 3)
        throw TensorError("apply_lut: lattice length does not match LUT size " + std::to_string(size));
    const std::size_t plane = static_cast<std::size_t>(image.dim(2)) * image.dim(3);
    auto out = make_result(image.shape(), {&lattice, &image});
    const double* lat = lattice.node().data.data();
    const double* img = image.node().data.data();
    for (std::size_t p = 0; p < plane; ++p)
        if (std::isnan(img[p]) || std::isnan(img[plane + p]) || std::isnan(img[2 * plane + p]))
            throw TensorError("apply_lut: NaN pixel");

    const double scale_d = size - 1;
    const std::size_t sr = 3, sg = 3 * static_cast<std::size_t>(size), sb = sg * static_cast<std::size_t>(size);
    const std::size_t offs[8] = {0, sr, sg, sr + sg, sb, sr + sb, sg + sb, sr + sg + sb};

    auto cell_of = [=](const double* im, std::size_t p, std::size_t& base, double* f, bool* inside) {
        int idx[3];
        for (int c = 0; c < 3; ++c) {
            const double v = im[static_cast<std::size_t>(c) * plane + p];
            inside[c] = v >= 0.0 && v <= 1.0;
            const double pos = std::clamp(v, 0.0, 1.0) * scale_d;
            idx[c] = std::min(static_cast<int>(pos), size - 2);
            f[c] = pos - idx[c];
        }
        base = idx[0] * sr + idx[1] * sg + idx[2] * sb;
    };
    auto corner_weights = [](const double* f, double* w) {
        const double r0 = 1 - f[0], g0 = 1 - f[1], b0 = 1 - f[2];
        w[0] = r0 * g0 * b0;
        w[1] = f[0] * g0 * b0;
        w[2] = r0 * f[1] * b0;
        w[3] = f[0] * f[1] * b0;
        w[4] = r0 * g0 * f[2];
        w[5] = f[0] * g0 * f[2];
        w[6] = r0 * f[1] * f[2];
        w[7] = f[0] * f[1] * f[2];
    };

    for (std::size_t p = 0; p < plane; ++p) {
        std::size_t base;
        double f[3], w[8];
        bool inside[3];
        cell_of(img, p, base, f, inside);
        corner_weights(f, w);
        for (int c = 0; c < 3; ++c) {
            double v = 0.0;
            for (int k = 0; k < 8; ++k) v += w[k] * lat[base + offs[k] + static_cast<std::size_t>(c)];
            out->data[static_cast<std::size_t>(c) * plane + p] = std::clamp(v, 0.0, 1.0);
        }
    }

    if (out->requires_grad)
        out->backward = [=](Node& self) {
            Node& pl = *self.parents[0];
            Node& pi = *self.parents[1];
            const double* im = pi.data.data();
            const double* la = pl.data.data();
            for (std::size_t p = 0; p < plane; ++p) {
                std::size_t base;
                double f[3], w[8];
                bool inside[3];
                cell_of(im, p, base, f, inside);
                corner_weights(f, w);
                const double g[3] = {self.grad[p], self.grad[plane + p], self.grad[2 * plane + p]};
                if (pl.requires_grad)
                    for (int k = 0; k < 8; ++k)
                        for (int c = 0; c < 3; ++c) pl.grad[base + offs[k] + static_cast<std::size_t>(c)] += w[k] * g[c];
                if (pi.requires_grad) {
                    // d(weights)/d(frac) per axis, times d(frac)/dx = size - 1.
                    const double r0 = 1 - f[0], g0 = 1 - f[1], b0 = 1 - f[2];
                    const double dr[8] = {-g0 * b0, g0 * b0, -f[1] * b0, f[1] * b0, -g0 * f[2], g0 * f[2], -f[1] * f[2], f[1] * f[2]};
                    const double dg[8] = {-r0 * b0, -f[0] * b0, r0 * b0, f[0] * b0, -r0 * f[2], -f[0] * f[2], r0 * f[2], f[0] * f[2]};
                    const double db[8] = {-r0 * g0, -f[0] * g0, -r0 * f[1], -f[0] * f[1], r0 * g0, f[0] * g0, r0 * f[1], f[0] * f[1]};
                    const double* dws[3] = {dr, dg, db};
                    for (int axis = 0; axis < 3; ++axis) {
                        if (!inside[axis]) continue;
                        double acc = 0.0;
                        for (int k = 0; k < 8; ++k) {
                            const double* corner = la + base + offs[k];
                            acc += dws[axis][k] * (g[0] * corner[0] + g[1] * corner[1] + g[2] * corner[2]);
                        }
                        pi.grad[static_cast<std::size_t>(axis) * plane + p] += acc * scale_d;
                    }
                }
            }
        };
    return Tensor(out);
}

Tensor image_to_tensor(const Image& img) {
    const std::size_t plane = img.pixel_count();
    std::vector<double> data(plane * 3);
    for (std::size_t p = 0; p < plane; ++p)
        for (std::size_t c = 0; c < 3; ++c) data[c * plane + p] = img.data[p * 3 + c];
    return Tensor::from({1, 3, img.height, img.width}, std::move(data));
}

Image tensor_to_image(const Tensor& t) {
    if (t.rank() != 4 || t.dim(0) != 1 || t.dim(1) != 3)
        throw TensorError("tensor_to_image: expected (1,3,H,W), got " + shape_string(t.shape()));
    Image img(t.dim(3), t.dim(2));
    const std::size_t plane = img.pixel_count();
    const auto d = t.data();
    for (std::size_t p = 0; p < plane; ++p)
        for (std::size_t c = 0; c < 3; ++c) img.data[p * 3 + c] = static_cast<float>(d[c * plane + p]);
    return img;
}

lut::Lut3d lattice_to_lut(const Tensor& lattice, int size) {
    std::vector<float> values(lattice.numel());
    const auto d = lattice.data();
    std::transform(d.begin(), d.end(), values.begin(), [](double v) { return static_cast<float>(v); });
    return lut::Lut3d(size, std::move(values));
}

Tensor lut_to_lattice(const lut::Lut3d& lut) {
    const auto l = lut.lattice();
    return Tensor::from({static_cast<int>(l.size())}, std::vector<double>(l.begin(), l.end()));
}

}  // namespace mrstyle::nn
