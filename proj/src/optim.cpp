#include "mrstyle/optim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <unordered_map>

#include "mrstyle/binary_io.hpp"

namespace mrstyle::nn {

void set_frozen(const ParameterList& params, bool frozen) {
    for (Parameter* p : params) p->set_frozen(frozen);
}

void zero_grad(const ParameterList& params) {
    for (Parameter* p : params) p->tensor.zero_grad();
}

std::size_t parameter_count(const ParameterList& params) {
    std::size_t n = 0;
    for (const Parameter* p : params) n += p->tensor.numel();
    return n;
}

Tensor kaiming_uniform(Shape shape, int fan_in, std::mt19937_64& rng) {
    const double bound = std::sqrt(6.0 / std::max(1, fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> values(shape_numel(shape));
    for (double& v : values) v = dist(rng);
    return Tensor::from(std::move(shape), std::move(values));
}

void adam_update(std::span<double> param, std::span<const double> grad, std::span<double> m, std::span<double> v,
                 const AdamOptions& opts, int t) {
    if (t < 1) throw TensorError("Adam step index must start at 1");
    const double bc1 = 1.0 - std::pow(opts.beta1, t);
    const double bc2 = 1.0 - std::pow(opts.beta2, t);
    for (std::size_t i = 0; i < param.size(); ++i) {
        m[i] = opts.beta1 * m[i] + (1.0 - opts.beta1) * grad[i];
        v[i] = opts.beta2 * v[i] + (1.0 - opts.beta2) * grad[i] * grad[i];
        const double m_hat = m[i] / bc1;
        const double v_hat = v[i] / bc2;
        param[i] -= opts.lr * m_hat / (std::sqrt(v_hat) + opts.eps);
    }
}

Adam::Adam(ParameterList params, AdamOptions opts) : params_(std::move(params)), opts_(opts) {
    for (const Parameter* p : params_) {
        m_.emplace_back(p->tensor.numel(), 0.0);
        v_.emplace_back(p->tensor.numel(), 0.0);
    }
}

void Adam::step() {
    ++t_;
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Parameter& p = *params_[i];
        if (p.frozen) continue;
        auto grad = p.tensor.grad();
        if (grad.empty()) continue;  // never reached by a backward pass
        adam_update(p.tensor.data(), grad, m_[i], v_[i], opts_, t_);
    }
}

void Adam::zero_grad() { nn::zero_grad(params_); }

namespace {
constexpr char kMagic[4] = {'M', 'R', 'S', 'W'};
constexpr std::uint32_t kVersion = 1;
}  // namespace

std::string encode_checkpoint(const std::vector<NamedTensor>& tensors) {
    std::string out(kMagic, 4);
    io::put_u32(out, kVersion);
    io::put_u32(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& t : tensors) {
        io::put_u32(out, static_cast<std::uint32_t>(t.name.size()));
        out += t.name;
        io::put_u32(out, static_cast<std::uint32_t>(t.dims.size()));
        std::size_t n = 1;
        for (auto d : t.dims) {
            io::put_u32(out, d);
            n *= d;
        }
        if (n != t.values.size()) throw CheckpointError("tensor '" + t.name + "' data does not match its dims");
        for (float f : t.values) io::put_f32(out, f);
    }
    return out;
}

std::vector<NamedTensor> decode_checkpoint(std::string_view bytes) {
    io::ByteReader in(bytes);
    try {
        auto magic = in.take(4, "magic");
        if (magic != std::string_view(kMagic, 4))
            throw CheckpointError("at byte offset 0: bad magic '" + std::string(magic) + "', expected 'MRSW'");
        const std::uint32_t version = in.u32("version");
        if (version != kVersion) throw CheckpointError("at byte offset 4: unsupported MRSW version " + std::to_string(version));
        const std::uint32_t count = in.u32("tensor count");
        std::vector<NamedTensor> out;
        for (std::uint32_t i = 0; i < count; ++i) {
            NamedTensor t;
            const std::uint32_t name_len = in.u32("name length");
            t.name = std::string(in.take(name_len, "name"));
            const std::uint32_t rank = in.u32("rank");
            if (rank > 8) in.fail("implausible rank " + std::to_string(rank) + " for '" + t.name + "'");
            std::size_t n = 1;
            for (std::uint32_t r = 0; r < rank; ++r) {
                t.dims.push_back(in.u32("dims"));
                n *= t.dims.back();
            }
            if (n * 4 > in.remaining()) in.fail("truncated data for tensor '" + t.name + "'");
            t.values.resize(n);
            for (float& f : t.values) f = in.f32("tensor data");
            out.push_back(std::move(t));
        }
        if (in.remaining() != 0) in.fail("trailing bytes after the last tensor");
        return out;
    } catch (const CheckpointError&) {
        throw;
    } catch (const std::runtime_error& e) {
        throw CheckpointError(std::string("MRSW: ") + e.what());
    }
}

std::vector<NamedTensor> snapshot(const ParameterList& params) {
    std::vector<NamedTensor> out;
    for (const Parameter* p : params) {
        NamedTensor t;
        t.name = p->name;
        for (int d : p->tensor.shape()) t.dims.push_back(static_cast<std::uint32_t>(d));
        const auto data = p->tensor.data();
        t.values.resize(data.size());
        std::transform(data.begin(), data.end(), t.values.begin(), [](double v) { return static_cast<float>(v); });
        out.push_back(std::move(t));
    }
    return out;
}

void restore(const ParameterList& params, const std::vector<NamedTensor>& tensors) {
    std::unordered_map<std::string, const NamedTensor*> by_name;
    for (const auto& t : tensors) by_name[t.name] = &t;
    for (Parameter* p : params) {
        auto it = by_name.find(p->name);
        if (it == by_name.end()) throw CheckpointError("checkpoint has no tensor named '" + p->name + "'");
        const NamedTensor& t = *it->second;
        const Shape& shape = p->tensor.shape();
        bool same = t.dims.size() == shape.size();
        for (std::size_t i = 0; same && i < shape.size(); ++i) same = t.dims[i] == static_cast<std::uint32_t>(shape[i]);
        if (!same) throw CheckpointError("shape mismatch for '" + p->name + "': model expects " + shape_string(shape));
        auto data = p->tensor.data();
        for (std::size_t i = 0; i < data.size(); ++i) {
            if (!std::isfinite(t.values[i])) throw CheckpointError("non-finite value in '" + p->name + "'");
            data[i] = t.values[i];
        }
    }
}

void save_checkpoint(const ParameterList& params, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CheckpointError("cannot open " + path.string() + " for writing");
    const std::string bytes = encode_checkpoint(snapshot(params));
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("write failed for " + path.string());
}

void load_checkpoint(const ParameterList& params, const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open " + path.string());
    const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    restore(params, decode_checkpoint(bytes));
}

}  // namespace mrstyle::nn
