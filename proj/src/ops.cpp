#include "mrstyle/ops.hpp"

#include <algorithm>
#include <cmath>

namespace mrstyle::nn {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw TensorError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                          shape_string(b.shape()));
}

void require_rank(const Tensor& x, int rank, const char* op) {
    if (x.rank() != rank)
        throw TensorError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                          shape_string(x.shape()));
}

Node& parent(Node& self, std::size_t i) { return *self.parents[i]; }

template <typename Fwd, typename Bwd>
Tensor unary(const Tensor& a, Fwd fwd, Bwd bwd) {
    auto out = make_result(a.shape(), {&a});
    const auto& in = a.node().data;
    for (std::size_t i = 0; i < in.size(); ++i) out->data[i] = fwd(in[i]);
    if (out->requires_grad)
        out->backward = [bwd](Node& self) {
            Node& p = parent(self, 0);
            if (!p.requires_grad) return;
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                p.grad[i] += self.grad[i] * bwd(p.data[i], self.data[i]);
        };
    return Tensor(out);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    auto out = make_result(a.shape(), {&a, &b});
    const auto& x = a.node().data;
    const auto& y = b.node().data;
    for (std::size_t i = 0; i < x.size(); ++i) out->data[i] = x[i] + y[i];
    if (out->requires_grad)
        out->backward = [](Node& self) {
            for (std::size_t k = 0; k < 2; ++k) {
                Node& p = parent(self, k);
                if (!p.requires_grad) continue;
                for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
            }
        };
    return Tensor(out);
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    auto out = make_result(a.shape(), {&a, &b});
    const auto& x = a.node().data;
    const auto& y = b.node().data;
    for (std::size_t i = 0; i < x.size(); ++i) out->data[i] = x[i] - y[i];
    if (out->requires_grad)
        out->backward = [](Node& self) {
            Node& pa = parent(self, 0);
            Node& pb = parent(self, 1);
            if (pa.requires_grad)
                for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
            if (pb.requires_grad)
                for (std::size_t i = 0; i < self.grad.size(); ++i) pb.grad[i] -= self.grad[i];
        };
    return Tensor(out);
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    auto out = make_result(a.shape(), {&a, &b});
    const auto& x = a.node().data;
    const auto& y = b.node().data;
    for (std::size_t i = 0; i < x.size(); ++i) out->data[i] = x[i] * y[i];
    if (out->requires_grad)
        out->backward = [](Node& self) {
            Node& pa = parent(self, 0);
            Node& pb = parent(self, 1);
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                if (pa.requires_grad) pa.grad[i] += self.grad[i] * pb.data[i];
                if (pb.requires_grad) pb.grad[i] += self.grad[i] * pa.data[i];
            }
        };
    return Tensor(out);
}

Tensor div(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "div");
    auto out = make_result(a.shape(), {&a, &b});
    const auto& x = a.node().data;
    const auto& y = b.node().data;
    for (std::size_t i = 0; i < x.size(); ++i) out->data[i] = x[i] / y[i];
    if (out->requires_grad)
        out->backward = [](Node& self) {
            Node& pa = parent(self, 0);
            Node& pb = parent(self, 1);
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                const double inv = 1.0 / pb.data[i];
                if (pa.requires_grad) pa.grad[i] += self.grad[i] * inv;
                if (pb.requires_grad) pb.grad[i] -= self.grad[i] * pa.data[i] * inv * inv;
            }
        };
    return Tensor(out);
}

Tensor scale(const Tensor& a, double s) {
    return unary(a, [s](double v) { return v * s; }, [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& a, double s) {
    return unary(a, [s](double v) { return v + s; }, [](double, double) { return 1.0; });
}

Tensor sqrt(const Tensor& a) {
    return unary(a, [](double v) { return std::sqrt(v); }, [](double, double y) { return 0.5 / y; });
}

Tensor relu(const Tensor& x) {
    return unary(x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sum(const Tensor& a) {
    auto out = make_result({1}, {&a});
    double acc = 0.0;
    for (double v : a.node().data) acc += v;
    out->data[0] = acc;
    if (out->requires_grad)
        out->backward = [](Node& self) {
            Node& p = parent(self, 0);
            if (!p.requires_grad) return;
            for (double& g : p.grad) g += self.grad[0];
        };
    return Tensor(out);
}

Tensor mean(const Tensor& a) {
    if (a.numel() == 0) throw TensorError("mean of an empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor mse(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mse");
    if (a.numel() == 0) throw TensorError("mse of empty tensors");
    auto out = make_result({1}, {&a, &b});
    const auto& x = a.node().data;
    const auto& y = b.node().data;
    double acc = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = x[i] - y[i];
        acc += d * d;
    }
    const double n = static_cast<double>(x.size());
    out->data[0] = acc / n;
    if (out->requires_grad)
        out->backward = [n](Node& self) {
            Node& pa = parent(self, 0);
            Node& pb = parent(self, 1);
            const double g = self.grad[0] * 2.0 / n;
            for (std::size_t i = 0; i < pa.data.size(); ++i) {
                const double d = g * (pa.data[i] - pb.data[i]);
                if (pa.requires_grad) pa.grad[i] += d;
                if (pb.requires_grad) pb.grad[i] -= d;
            }
        };
    return Tensor(out);
}

Tensor l2_distance(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "l2_distance");
    auto out = make_result({1}, {&a, &b});
    const auto& x = a.node().data;
    const auto& y = b.node().data;
    double acc = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) acc += (x[i] - y[i]) * (x[i] - y[i]);
    out->data[0] = std::sqrt(acc);
    if (out->requires_grad)
        out->backward = [](Node& self) {
            const double dist = self.data[0];
            if (dist == 0.0) return;
            Node& pa = parent(self, 0);
            Node& pb = parent(self, 1);
            const double g = self.grad[0] / dist;
            for (std::size_t i = 0; i < pa.data.size(); ++i) {
                const double d = g * (pa.data[i] - pb.data[i]);
                if (pa.requires_grad) pa.grad[i] += d;
                if (pb.requires_grad) pb.grad[i] -= d;
            }
        };
    return Tensor(out);
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel())
        throw TensorError("reshape from " + shape_string(x.shape()) + " to " + shape_string(shape));
    auto out = make_result(std::move(shape), {&x});
    out->data = x.node().data;
    if (out->requires_grad)
        out->backward = [](Node& self) {
            Node& p = parent(self, 0);
            if (!p.requires_grad) return;
            for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
        };
    return Tensor(out);
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride, int padding) {
    require_rank(x, 4, "conv2d input");
    require_rank(weight, 4, "conv2d weight");
    const int n = x.dim(0), ci = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int co = weight.dim(0), k = weight.dim(2);
    if (weight.dim(1) != ci || weight.dim(3) != k)
        throw TensorError("conv2d: weight " + shape_string(weight.shape()) + " incompatible with input " +
                          shape_string(x.shape()));
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != co))
        throw TensorError("conv2d: bias shape " + shape_string(bias.shape()) + " for " + std::to_string(co) +
                          " output channels");
    if (stride < 1 || padding < 0) throw TensorError("conv2d: invalid stride or padding");
    const int oh = (h + 2 * padding - k) / stride + 1;
    const int ow = (w + 2 * padding - k) / stride + 1;
    if (oh < 1 || ow < 1) throw TensorError("conv2d: kernel larger than padded input");

    std::shared_ptr<Node> out = bias.defined() ? make_result({n, co, oh, ow}, {&x, &weight, &bias})
                                               : make_result({n, co, oh, ow}, {&x, &weight});

    // Valid output-column range for kernel column kx.
    std::vector<int> ox_lo(static_cast<std::size_t>(k)), ox_hi(static_cast<std::size_t>(k));
    for (int kx = 0; kx < k; ++kx) {
        int lo = 0;
        while (lo < ow && lo * stride - padding + kx < 0) ++lo;
        int hi = ow;
        while (hi > lo && (hi - 1) * stride - padding + kx >= w) --hi;
        ox_lo[static_cast<std::size_t>(kx)] = lo;
        ox_hi[static_cast<std::size_t>(kx)] = hi;
    }

    const double* in = x.node().data.data();
    const double* wt = weight.node().data.data();
    double* o = out->data.data();
    const std::size_t in_plane = static_cast<std::size_t>(h) * w;
    const std::size_t out_plane = static_cast<std::size_t>(oh) * ow;
    for (int b = 0; b < n; ++b)
        for (int oc = 0; oc < co; ++oc) {
            double* op = o + (static_cast<std::size_t>(b) * co + oc) * out_plane;
            if (bias.defined()) std::fill(op, op + out_plane, bias.node().data[static_cast<std::size_t>(oc)]);
            for (int ic = 0; ic < ci; ++ic) {
                const double* ip = in + (static_cast<std::size_t>(b) * ci + ic) * in_plane;
                const double* wp = wt + (static_cast<std::size_t>(oc) * ci + ic) * k * k;
                for (int ky = 0; ky < k; ++ky)
                    for (int oy = 0; oy < oh; ++oy) {
                        const int iy = oy * stride - padding + ky;
                        if (iy < 0 || iy >= h) continue;
                        const double* irow = ip + static_cast<std::size_t>(iy) * w;
                        double* orow = op + static_cast<std::size_t>(oy) * ow;
                        for (int kx = 0; kx < k; ++kx) {
                            const double wv = wp[ky * k + kx];
                            const int lo = ox_lo[static_cast<std::size_t>(kx)];
                            const int hi = ox_hi[static_cast<std::size_t>(kx)];
                            const double* src = irow + (kx - padding);
                            if (stride == 1) {
                                for (int ox = lo; ox < hi; ++ox) orow[ox] += wv * src[ox];
                            } else {
                                for (int ox = lo; ox < hi; ++ox) orow[ox] += wv * src[ox * stride];
                            }
                        }
                    }
            }
        }

    if (out->requires_grad)
        out->backward = [=](Node& self) {
            Node& px = parent(self, 0);
            Node& pw = parent(self, 1);
            const double* g = self.grad.data();
            if (self.parents.size() > 2) {
                Node& pb = parent(self, 2);
                if (pb.requires_grad)
                    for (int b = 0; b < n; ++b)
                        for (int oc = 0; oc < co; ++oc) {
                            const double* gp = g + (static_cast<std::size_t>(b) * co + oc) * out_plane;
                            double acc = 0.0;
                            for (std::size_t i = 0; i < out_plane; ++i) acc += gp[i];
                            pb.grad[static_cast<std::size_t>(oc)] += acc;
                        }
            }
            const double* xin = px.data.data();
            const double* wv_all = pw.data.data();
            for (int b = 0; b < n; ++b)
                for (int oc = 0; oc < co; ++oc) {
                    const double* gp = g + (static_cast<std::size_t>(b) * co + oc) * out_plane;
                    for (int ic = 0; ic < ci; ++ic) {
                        const std::size_t in_off = (static_cast<std::size_t>(b) * ci + ic) * in_plane;
                        const std::size_t w_off = (static_cast<std::size_t>(oc) * ci + ic) * k * k;
                        for (int ky = 0; ky < k; ++ky)
                            for (int oy = 0; oy < oh; ++oy) {
                                const int iy = oy * stride - padding + ky;
                                if (iy < 0 || iy >= h) continue;
                                const std::size_t row = in_off + static_cast<std::size_t>(iy) * w;
                                const double* grow = gp + static_cast<std::size_t>(oy) * ow;
                                for (int kx = 0; kx < k; ++kx) {
                                    const int lo = ox_lo[static_cast<std::size_t>(kx)];
                                    const int hi = ox_hi[static_cast<std::size_t>(kx)];
                                    const std::ptrdiff_t shift = kx - padding;
                                    if (pw.requires_grad) {
                                        const double* src = xin + row + shift;
                                        double acc = 0.0;
                                        for (int ox = lo; ox < hi; ++ox) acc += grow[ox] * src[ox * stride];
                                        pw.grad[w_off + static_cast<std::size_t>(ky * k + kx)] += acc;
                                    }
                                    if (px.requires_grad) {
                                        const double wv = wv_all[w_off + static_cast<std::size_t>(ky * k + kx)];
                                        double* dst = px.grad.data() + row + shift;
                                        for (int ox = lo; ox < hi; ++ox) dst[ox * stride] += wv * grow[ox];
                                    }
                                }
                            }
                    }
                }
        };
    return Tensor(out);
}

namespace {

struct AxisTaps {
    std::vector<int> i0, i1;
    std::vector<double> t;
};

AxisTaps bilinear_taps(int in, int out) {
    AxisTaps taps;
    taps.i0.resize(static_cast<std::size_t>(out));
    taps.i1.resize(static_cast<std::size_t>(out));
    taps.t.resize(static_cast<std::size_t>(out));
    const double s = static_cast<double>(in) / out;
    for (int o = 0; o < out; ++o) {
        double f = std::max(0.0, (o + 0.5) * s - 0.5);
        int a = std::min(static_cast<int>(f), in - 1);
        taps.i0[static_cast<std::size_t>(o)] = a;
        taps.i1[static_cast<std::size_t>(o)] = std::min(a + 1, in - 1);
        taps.t[static_cast<std::size_t>(o)] = f - a;
    }
    return taps;
}

}  // namespace

Tensor resize_bilinear(const Tensor& x, int out_h, int out_w) {
    require_rank(x, 4, "resize_bilinear");
    if (out_h < 1 || out_w < 1) throw TensorError("resize_bilinear: output must be at least 1x1");
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (h == out_h && w == out_w) {
        auto out = make_result(x.shape(), {&x});
        out->data = x.node().data;
        if (out->requires_grad)
            out->backward = [](Node& self) {
                Node& p = parent(self, 0);
                for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
            };
        return Tensor(out);
    }
    auto out = make_result({n, c, out_h, out_w}, {&x});
    const AxisTaps ty = bilinear_taps(h, out_h);
    const AxisTaps tx = bilinear_taps(w, out_w);
    const std::size_t planes = static_cast<std::size_t>(n) * c;
    const std::size_t in_plane = static_cast<std::size_t>(h) * w;
    const std::size_t out_plane = static_cast<std::size_t>(out_h) * out_w;
    const double* in = x.node().data.data();
    for (std::size_t p = 0; p < planes; ++p) {
        const double* ip = in + p * in_plane;
        double* op = out->data.data() + p * out_plane;
        for (int oy = 0; oy < out_h; ++oy) {
            const auto yy = static_cast<std::size_t>(oy);
            const double* r0 = ip + static_cast<std::size_t>(ty.i0[yy]) * w;
            const double* r1 = ip + static_cast<std::size_t>(ty.i1[yy]) * w;
            for (int ox = 0; ox < out_w; ++ox) {
                const auto xx = static_cast<std::size_t>(ox);
                const double top = r0[tx.i0[xx]] + (r0[tx.i1[xx]] - r0[tx.i0[xx]]) * tx.t[xx];
                const double bot = r1[tx.i0[xx]] + (r1[tx.i1[xx]] - r1[tx.i0[xx]]) * tx.t[xx];
                op[static_cast<std::size_t>(oy) * out_w + xx] = top + (bot - top) * ty.t[yy];
            }
        }
    }
    if (out->requires_grad)
        out->backward = [=](Node& self) {
            Node& px = parent(self, 0);
            for (std::size_t p = 0; p < planes; ++p) {
                double* gp = px.grad.data() + p * in_plane;
                const double* go = self.grad.data() + p * out_plane;
                for (int oy = 0; oy < out_h; ++oy) {
                    const auto yy = static_cast<std::size_t>(oy);
                    double* r0 = gp + static_cast<std::size_t>(ty.i0[yy]) * w;
                    double* r1 = gp + static_cast<std::size_t>(ty.i1[yy]) * w;
                    const double wy1 = ty.t[yy], wy0 = 1.0 - wy1;
                    for (int ox = 0; ox < out_w; ++ox) {
                        const auto xx = static_cast<std::size_t>(ox);
                        const double g = go[static_cast<std::size_t>(oy) * out_w + xx];
                        const double wx1 = tx.t[xx], wx0 = 1.0 - wx1;
                        r0[tx.i0[xx]] += g * wy0 * wx0;
                        r0[tx.i1[xx]] += g * wy0 * wx1;
                        r1[tx.i0[xx]] += g * wy1 * wx0;
                        r1[tx.i1[xx]] += g * wy1 * wx1;
                    }
                }
            }
        };
    return Tensor(out);
}

Tensor concat_channels(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw TensorError("concat_channels: no inputs");
    for (const auto& p : parts) require_rank(p, 4, "concat_channels");
    const int n = parts[0].dim(0), h = parts[0].dim(2), w = parts[0].dim(3);
    int c_total = 0;
    for (const auto& p : parts) {
        if (p.dim(0) != n || p.dim(2) != h || p.dim(3) != w)
            throw TensorError("concat_channels: mismatched shapes " + shape_string(parts[0].shape()) + " and " +
                              shape_string(p.shape()));
        c_total += p.dim(1);
    }
    auto out = make_result({n, c_total, h, w}, parts);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    std::vector<int> channels;
    for (const auto& p : parts) channels.push_back(p.dim(1));
    for (int b = 0; b < n; ++b) {
        int c_off = 0;
        for (std::size_t k = 0; k < parts.size(); ++k) {
            const std::size_t len = static_cast<std::size_t>(channels[k]) * plane;
            const double* src = parts[k].node().data.data() + static_cast<std::size_t>(b) * len;
            std::copy_n(src, len, out->data.data() + (static_cast<std::size_t>(b) * c_total + c_off) * plane);
            c_off += channels[k];
        }
    }
    if (out->requires_grad)
        out->backward = [=](Node& self) {
            for (int b = 0; b < n; ++b) {
                int c_off = 0;
                for (std::size_t k = 0; k < channels.size(); ++k) {
                    Node& p = parent(self, k);
                    const std::size_t len = static_cast<std::size_t>(channels[k]) * plane;
                    if (p.requires_grad) {
                        const double* src = self.grad.data() + (static_cast<std::size_t>(b) * c_total + c_off) * plane;
                        double* dst = p.grad.data() + static_cast<std::size_t>(b) * len;
                        for (std::size_t i = 0; i < len; ++i) dst[i] += src[i];
                    }
                    c_off += channels[k];
                }
            }
        };
    return Tensor(out);
}

Tensor channel_mean(const Tensor& x) {
    require_rank(x, 4, "channel_mean");
    const int n = x.dim(0), c = x.dim(1);
    const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
    auto out = make_result({n, c}, {&x});
    const double* in = x.node().data.data();
    for (std::size_t p = 0; p < static_cast<std::size_t>(n) * c; ++p) {
        double acc = 0.0;
        for (std::size_t i = 0; i < plane; ++i) acc += in[p * plane + i];
        out->data[p] = acc / static_cast<double>(plane);
    }
    if (out->requires_grad)
        out->backward = [plane](Node& self) {
            Node& px = parent(self, 0);
            const double inv = 1.0 / static_cast<double>(plane);
            for (std::size_t p = 0; p < self.grad.size(); ++p) {
                const double g = self.grad[p] * inv;
                for (std::size_t i = 0; i < plane; ++i) px.grad[p * plane + i] += g;
            }
        };
    return Tensor(out);
}

Tensor global_avg_pool(const Tensor& x) { return channel_mean(x); }

Tensor channel_var(const Tensor& x) {
    require_rank(x, 4, "channel_var");
    const int n = x.dim(0), c = x.dim(1);
    const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
    auto out = make_result({n, c}, {&x});
    const double* in = x.node().data.data();
    std::vector<double> means(static_cast<std::size_t>(n) * c);
    for (std::size_t p = 0; p < means.size(); ++p) {
        double acc = 0.0;
        for (std::size_t i = 0; i < plane; ++i) acc += in[p * plane + i];
        const double mu = acc / static_cast<double>(plane);
        double var = 0.0;
        for (std::size_t i = 0; i < plane; ++i) {
            const double d = in[p * plane + i] - mu;
            var += d * d;
        }
        means[p] = mu;
        out->data[p] = var / static_cast<double>(plane);
    }
    if (out->requires_grad)
        out->backward = [plane, means](Node& self) {
            Node& px = parent(self, 0);
            const double k = 2.0 / static_cast<double>(plane);
            for (std::size_t p = 0; p < self.grad.size(); ++p) {
                const double g = self.grad[p] * k;
                for (std::size_t i = 0; i < plane; ++i)
                    px.grad[p * plane + i] += g * (px.data[p * plane + i] - means[p]);
            }
        };
    return Tensor(out);
}

Tensor channel_std(const Tensor& x, double eps) { return sqrt(add_scalar(channel_var(x), eps)); }

Tensor channel_affine(const Tensor& x, const Tensor& scale_t, const Tensor& shift) {
    require_rank(x, 4, "channel_affine");
    const Shape nc{x.dim(0), x.dim(1)};
    if (scale_t.shape() != nc || shift.shape() != nc)
        throw TensorError("channel_affine: scale/shift must have shape " + shape_string(nc));
    const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
    auto out = make_result(x.shape(), {&x, &scale_t, &shift});
    const double* in = x.node().data.data();
    for (std::size_t p = 0; p < shape_numel(nc); ++p) {
        const double a = scale_t.node().data[p], b = shift.node().data[p];
        for (std::size_t i = 0; i < plane; ++i) out->data[p * plane + i] = in[p * plane + i] * a + b;
    }
    if (out->requires_grad)
        out->backward = [plane](Node& self) {
            Node& px = parent(self, 0);
            Node& ps = parent(self, 1);
            Node& pt = parent(self, 2);
            for (std::size_t p = 0; p < ps.data.size(); ++p) {
                const double a = ps.data[p];
                double gs = 0.0, gt = 0.0;
                for (std::size_t i = 0; i < plane; ++i) {
                    const double g = self.grad[p * plane + i];
                    gs += g * px.data[p * plane + i];
                    gt += g;
                    if (px.requires_grad) px.grad[p * plane + i] += g * a;
                }
                if (ps.requires_grad) ps.grad[p] += gs;
                if (pt.requires_grad) pt.grad[p] += gt;
            }
        };
    return Tensor(out);
}

Tensor adain(const Tensor& content, const Tensor& style, double eps) {
    require_rank(content, 4, "adain content");
    require_rank(style, 4, "adain style");
    if (content.dim(0) != style.dim(0) || content.dim(1) != style.dim(1))
        throw TensorError("adain: content " + shape_string(content.shape()) + " and style " +
                          shape_string(style.shape()) + " disagree on batch or channels");
    const Tensor mu_c = channel_mean(content);
    const Tensor mu_s = channel_mean(style);
    const Tensor sd_c = channel_std(content, eps);
    const Tensor sd_s = channel_std(style, eps);
    const Tensor gain = div(sd_s, sd_c);
    const Tensor shift = sub(mu_s, mul(mu_c, gain));
    return channel_affine(content, gain, shift);
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    require_rank(x, 2, "linear input");
    require_rank(weight, 2, "linear weight");
    const int n = x.dim(0), in_f = x.dim(1), out_f = weight.dim(0);
    if (weight.dim(1) != in_f) throw TensorError("linear: weight " + shape_string(weight.shape()) +
                                                 " incompatible with input " + shape_string(x.shape()));
    if (bias.shape() != Shape{out_f}) throw TensorError("linear: bias shape " + shape_string(bias.shape()));
    auto out = make_result({n, out_f}, {&x, &weight, &bias});
    const double* xi = x.node().data.data();
    const double* wt = weight.node().data.data();
    for (int b = 0; b < n; ++b)
        for (int o = 0; o < out_f; ++o) {
            double acc = bias.node().data[static_cast<std::size_t>(o)];
            for (int i = 0; i < in_f; ++i)
                acc += wt[static_cast<std::size_t>(o) * in_f + i] * xi[static_cast<std::size_t>(b) * in_f + i];
            out->data[static_cast<std::size_t>(b) * out_f + o] = acc;
        }
    if (out->requires_grad)
        out->backward = [n, in_f, out_f](Node& self) {
            Node& px = parent(self, 0);
            Node& pw = parent(self, 1);
            Node& pb = parent(self, 2);
            for (int b = 0; b < n; ++b)
                for (int o = 0; o < out_f; ++o) {
                    const double g = self.grad[static_cast<std::size_t>(b) * out_f + o];
                    if (pb.requires_grad) pb.grad[static_cast<std::size_t>(o)] += g;
                    for (int i = 0; i < in_f; ++i) {
                        const std::size_t wi = static_cast<std::size_t>(o) * in_f + i;
                        const std::size_t xi_idx = static_cast<std::size_t>(b) * in_f + i;
                        if (pw.requires_grad) pw.grad[wi] += g * px.data[xi_idx];
                        if (px.requires_grad) px.grad[xi_idx] += g * pw.data[wi];
                    }
                }
        };
    return Tensor(out);
}

Tensor gram(const Tensor& x) {
    require_rank(x, 4, "gram");
    const int n = x.dim(0), c = x.dim(1);
    const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
    const double norm = 1.0 / (static_cast<double>(c) * static_cast<double>(plane));
    auto out = make_result({n, c, c}, {&x});
    const double* in = x.node().data.data();
    for (int b = 0; b < n; ++b)
        for (int i = 0; i < c; ++i)
            for (int j = i; j < c; ++j) {
                const double* fi = in + (static_cast<std::size_t>(b) * c + i) * plane;
                const double* fj = in + (static_cast<std::size_t>(b) * c + j) * plane;
                double acc = 0.0;
                for (std::size_t p = 0; p < plane; ++p) acc += fi[p] * fj[p];
                acc *= norm;
                out->data[(static_cast<std::size_t>(b) * c + i) * c + j] = acc;
                out->data[(static_cast<std::size_t>(b) * c + j) * c + i] = acc;
            }
    if (out->requires_grad)
        out->backward = [n, c, plane, norm](Node& self) {
            Node& px = parent(self, 0);
            for (int b = 0; b < n; ++b)
                for (int i = 0; i < c; ++i)
                    for (int j = 0; j < c; ++j) {
                        const std::size_t gi = (static_cast<std::size_t>(b) * c + i) * c + j;
                        const double g = (self.grad[gi]) * norm;
                        double* di = px.grad.data() + (static_cast<std::size_t>(b) * c + i) * plane;
                        double* dj = px.grad.data() + (static_cast<std::size_t>(b) * c + j) * plane;
                        const double* fi = px.data.data() + (static_cast<std::size_t>(b) * c + i) * plane;
                        const double* fj = px.data.data() + (static_cast<std::size_t>(b) * c + j) * plane;
                        for (std::size_t p = 0; p < plane; ++p) {
                            di[p] += g * fj[p];
                            dj[p] += g * fi[p];
                        }
                    }
        };
    return Tensor(out);
}

Tensor blend(const Tensor& a, const Tensor& b, double w) {
    require_same_shape(a, b, "blend");
    auto out = make_result(a.shape(), {&a, &b});
    const auto& x = a.node().data;
    const auto& y = b.node().data;
    const double v = 1.0 - w;
    for (std::size_t i = 0; i < x.size(); ++i) out->data[i] = w * x[i] + v * y[i];
    if (out->requires_grad)
        out->backward = [w, v](Node& self) {
            Node& pa = parent(self, 0);
            Node& pb = parent(self, 1);
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                if (pa.requires_grad) pa.grad[i] += w * self.grad[i];
                if (pb.requires_grad) pb.grad[i] += v * self.grad[i];
            }
        };
    return Tensor(out);
}

}  // namespace mrstyle::nn
