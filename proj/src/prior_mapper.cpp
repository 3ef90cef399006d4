#include "mrstyle/prior_mapper.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "mrstyle/binary_io.hpp"
#include "mrstyle/lut_ops.hpp"
#include "mrstyle/ops.hpp"

namespace mrstyle {

namespace {

constexpr std::string_view kMagic = "MRSF";
constexpr std::string_view kMetaTag = "META";
constexpr std::uint32_t kMaxRank = 4;

std::string printable(std::string_view bytes) {
    std::string out;
    for (unsigned char c : bytes) {
        if (c >= 0x20 && c < 0x7f) {
            out.push_back(static_cast<char>(c));
        } else {
            static const char* hex = "0123456789abcdef";
            out += "\\x";
            out.push_back(hex[c >> 4]);
            out.push_back(hex[c & 15]);
        }
    }
    return out;
}

std::size_t numel(const std::vector<std::uint32_t>& dims) {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return n;
}

}  // namespace

std::string encode_feature_file(const PriorFeatureFile& file) {
    std::string out(kMagic);
    io::put_u32(out, kFeatureFileVersion);
    io::put_u32(out, kPyramidLevels);
    for (const FeatureTensor& t : file.tensors) {
        if (numel(t.dims) != t.values.size())
            throw FeatureFileError("feature tensor dims do not match its value count");
        io::put_u32(out, static_cast<std::uint32_t>(t.dims.size()));
        for (auto d : t.dims) io::put_u32(out, d);
        for (float v : t.values) io::put_f32(out, v);
    }
    if (file.metadata) {
        out += kMetaTag;
        io::put_u32(out, static_cast<std::uint32_t>(file.metadata->seed & 0xFFFFFFFFu));
        io::put_u32(out, static_cast<std::uint32_t>(file.metadata->seed >> 32));
        io::put_u32(out, file.metadata->timestep);
    }
    return out;
}

PriorFeatureFile decode_feature_file(std::string_view bytes) {
    io::ByteReader in(bytes);
    try {
        if (bytes.size() < kMagic.size() || bytes.substr(0, kMagic.size()) != kMagic)
            in.fail("bad magic '" + printable(bytes.substr(0, kMagic.size())) + "', expected 'MRSF'");
        in.take(kMagic.size(), "magic");
        const std::size_t version_at = in.offset();
        const std::uint32_t version = in.u32("version");
        if (version != kFeatureFileVersion)
            throw std::runtime_error("at byte offset " + std::to_string(version_at) + ": unsupported version " +
                                     std::to_string(version));
        const std::size_t count_at = in.offset();
        const std::uint32_t count = in.u32("tensor count");
        if (count != kPyramidLevels)
            throw std::runtime_error("at byte offset " + std::to_string(count_at) + ": expected 4 tensors, found " +
                                     std::to_string(count));
        PriorFeatureFile file;
        for (FeatureTensor& t : file.tensors) {
            const std::size_t rank_at = in.offset();
            const std::uint32_t rank = in.u32("rank");
            if (rank == 0 || rank > kMaxRank)
                throw std::runtime_error("at byte offset " + std::to_string(rank_at) + ": unsupported rank " +
                                         std::to_string(rank));
            t.dims.resize(rank);
            for (auto& d : t.dims) d = in.u32("dims");
            const std::size_t n = numel(t.dims);
            if (n > in.remaining() / 4) in.fail("truncated tensor data (" + std::to_string(n) + " values declared)");
            t.values.resize(n);
            for (float& v : t.values) {
                const std::size_t at = in.offset();
                v = in.f32("tensor data");
                if (!std::isfinite(v))
                    throw std::runtime_error("at byte offset " + std::to_string(at) + ": non-finite value");
            }
        }
        if (in.remaining() > 0) {
            if (in.remaining() < kMetaTag.size() || bytes.substr(in.offset(), kMetaTag.size()) != kMetaTag)
                in.fail("unexpected trailing bytes");
            in.take(kMetaTag.size(), "metadata tag");
            PriorMetadata meta;
            const std::uint64_t lo = in.u32("metadata seed");
            const std::uint64_t hi = in.u32("metadata seed");
            meta.seed = lo | (hi << 32);
            meta.timestep = in.u32("metadata timestep");
            if (in.remaining() > 0) in.fail("unexpected trailing bytes");
            file.metadata = meta;
        }
        return file;
    } catch (const FeatureFileError&) {
        throw;
    } catch (const std::runtime_error& e) {
        throw FeatureFileError(std::string("feature file: ") + e.what());
    }
}

void write_feature_file(const PriorFeatureFile& file, const std::filesystem::path& path) {
    const std::string bytes = encode_feature_file(file);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FeatureFileError("cannot open " + path.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FeatureFileError("write failed for " + path.string());
}

PriorFeatureFile read_feature_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FeatureFileError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    try {
        return decode_feature_file(ss.str());
    } catch (const FeatureFileError& e) {
        throw FeatureFileError(path.string() + ": " + e.what());
    }
}

std::array<nn::Tensor, kPyramidLevels> feature_tensors(const PriorFeatureFile& file) {
    std::array<nn::Tensor, kPyramidLevels> out;
    for (std::size_t i = 0; i < out.size(); ++i) {
        const FeatureTensor& t = file.tensors[i];
        nn::Shape shape;
        if (t.dims.size() == 3) {
            shape = {1, static_cast<int>(t.dims[0]), static_cast<int>(t.dims[1]), static_cast<int>(t.dims[2])};
        } else if (t.dims.size() == 4 && t.dims[0] == 1) {
            shape = {1, static_cast<int>(t.dims[1]), static_cast<int>(t.dims[2]), static_cast<int>(t.dims[3])};
        } else {
            throw FeatureFileError("feature tensor " + std::to_string(i) + " must be (C,H,W) or (1,C,H,W)");
        }
        out[i] = nn::Tensor::from(std::move(shape), std::vector<double>(t.values.begin(), t.values.end()));
    }
    return out;
}

PriorFeatureFile to_feature_file(const std::array<nn::Tensor, kPyramidLevels>& levels,
                                 std::optional<PriorMetadata> metadata) {
    PriorFeatureFile file;
    file.metadata = metadata;
    for (std::size_t i = 0; i < levels.size(); ++i) {
        const nn::Tensor& t = levels[i];
        if (t.rank() != 4 || t.dim(0) != 1)
            throw FeatureFileError("prior level " + std::to_string(i) + " must be (1,C,H,W)");
        file.tensors[i].dims = {static_cast<std::uint32_t>(t.dim(1)), static_cast<std::uint32_t>(t.dim(2)),
                                static_cast<std::uint32_t>(t.dim(3))};
        file.tensors[i].values.assign(t.data().begin(), t.data().end());
    }
    return file;
}

PriorMapper::PriorMapper(const std::array<nn::Shape, kPyramidLevels>& input_shapes, const EncoderConfig& target,
                         std::uint64_t seed)
    : input_shapes_(input_shapes), output_shapes_(pyramid_shapes(target)) {
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        if (input_shapes_[i].size() != 3) throw nn::TensorError("mapper input shapes must be (C,H,W)");
        const int in_c = input_shapes_[i][0];
        const int out_c = output_shapes_[i][0];
        const std::string base = "mapper.block" + std::to_string(i);
        Block& b = blocks_[i];
        b.w1 = nn::Parameter(base + ".conv1.weight", nn::kaiming_uniform({out_c, in_c, 3, 3}, in_c * 9, rng));
        b.b1 = nn::Parameter(base + ".conv1.bias", nn::Tensor::zeros({out_c}));
        b.w2 = nn::Parameter(base + ".conv2.weight", nn::kaiming_uniform({out_c, out_c, 3, 3}, out_c * 9, rng));
        b.b2 = nn::Parameter(base + ".conv2.bias", nn::Tensor::zeros({out_c}));
    }
}

FeaturePyramid PriorMapper::map(const std::array<nn::Tensor, kPyramidLevels>& priors) const {
    FeaturePyramid out;
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        const nn::Tensor& x = priors[i];
        const nn::Shape& want = input_shapes_[i];
        if (x.rank() != 4 || x.dim(0) != 1 || x.dim(1) != want[0] || x.dim(2) != want[1] || x.dim(3) != want[2])
            throw nn::TensorError("prior level " + std::to_string(i) + " has shape " + nn::shape_string(x.shape()) +
                                  ", mapper expects (1," + std::to_string(want[0]) + "," + std::to_string(want[1]) +
                                  "," + std::to_string(want[2]) + ")");
        const Block& b = blocks_[i];
        nn::Tensor h = nn::relu(nn::conv2d(x, b.w1.tensor, b.b1.tensor, 1, 1));
        h = nn::conv2d(h, b.w2.tensor, b.b2.tensor, 1, 1);
        const nn::Shape& target = output_shapes_[i];
        if (h.dim(2) != target[1] || h.dim(3) != target[2]) h = nn::resize_bilinear(h, target[1], target[2]);
        out.levels[i] = h;
    }
    return out;
}

nn::ParameterList PriorMapper::parameters() {
    nn::ParameterList out;
    for (Block& b : blocks_)
        for (nn::Parameter* p : {&b.w1, &b.b1, &b.w2, &b.b2}) out.push_back(p);
    return out;
}

void PriorMapper::save(const std::filesystem::path& path) { nn::save_checkpoint(parameters(), path); }
void PriorMapper::load(const std::filesystem::path& path) { nn::load_checkpoint(parameters(), path); }

FeaturePyramid map_prior_features(const PriorFeatureFile& priors, const PriorMapper& mapper) {
    return mapper.map(feature_tensors(priors));
}

FeaturePyramid blend_style_features(const FeaturePyramid& image_features, const FeaturePyramid& mapped, double w) {
    if (!(w >= 0.0 && w <= 1.0)) throw std::invalid_argument("blend weight must lie in [0, 1], got " + std::to_string(w));
    FeaturePyramid out;
    for (std::size_t i = 0; i < out.levels.size(); ++i) {
        // Endpoints return the inputs themselves so single-reference results
        // are reproduced bit for bit.
        if (w == 1.0) {
            if (image_features.levels[i].shape() != mapped.levels[i].shape())
                throw nn::TensorError("blend: level " + std::to_string(i) + " shape mismatch");
            out.levels[i] = image_features.levels[i];
        } else if (w == 0.0) {
            if (image_features.levels[i].shape() != mapped.levels[i].shape())
                throw nn::TensorError("blend: level " + std::to_string(i) + " shape mismatch");
            out.levels[i] = mapped.levels[i];
        } else {
            out.levels[i] = nn::blend(image_features.levels[i], mapped.levels[i], w);
        }
    }
    return out;
}

PriorSource::PriorSource(EncoderConfig cfg, std::uint64_t seed) : encoder_(cfg, seed, "prior"), seed_(seed) {
    nn::set_frozen(encoder_.parameters(), true);
}

PriorFeatureFile PriorSource::features(const Image& style) const {
    nn::NoGradGuard guard;
    const FeaturePyramid p = encoder_.encode(make_thumbnail(style, encoder_.config().thumbnail));
    return to_feature_file(p.levels, PriorMetadata{seed_, 0});
}

EncoderConfig default_prior_config(const ModelConfig& model) {
    EncoderConfig cfg;
    cfg.thumbnail = std::max(16, model.encoder.thumbnail / 2);
    for (std::size_t i = 0; i < cfg.channels.size(); ++i) cfg.channels[i] = 2 * model.encoder.channels[i];
    return cfg;
}

Triplet make_distillation_triplet(const IrStyleModel& model, const PriorSource& source, const Image& content,
                                  const Image& style) {
    return {content, source.features(style), transfer(content, style, model).output};
}

MapperTrainConfig MapperTrainConfig::full_scale(std::size_t dataset_size, int epochs) {
    MapperTrainConfig cfg;
    cfg.batch = 8;
    cfg.lr = 5e-4;
    const std::size_t per_epoch = std::max<std::size_t>(1, dataset_size / 8);
    cfg.steps = static_cast<int>(per_epoch * static_cast<std::size_t>(epochs));
    cfg.halve_after = static_cast<int>(per_epoch * 30);
    return cfg;
}

MapperTrainConfig mapper_config_from(const KeyValueConfig& kv, MapperTrainConfig d) {
    d.seed = static_cast<std::uint64_t>(kv.get_int("seed", static_cast<long long>(d.seed)));
    d.lr = kv.get_double("lr", d.lr);
    d.steps = static_cast<int>(kv.get_int("steps", d.steps));
    d.batch = static_cast<int>(kv.get_int("batch", d.batch));
    d.halve_after = static_cast<int>(kv.get_int("halve_after", d.halve_after));
    if (d.steps < 0 || d.batch < 1 || d.lr < 0 || d.halve_after < 0) throw ConfigError("mapper config out of range");
    return d;
}

namespace {

nn::Tensor triplet_loss(const PriorMapper& mapper, const IrStyleModel& model, const Triplet& t) {
    if (t.content.width != t.target.width || t.content.height != t.target.height)
        throw std::invalid_argument("triplet target dims differ from content dims");
    const nn::Tensor content = nn::image_to_tensor(t.content);
    const FeaturePyramid content_pyr = model.encoder().encode_resized(content);
    const LutTensors luts = model.forward_features(content_pyr, map_prior_features(t.priors, mapper));
    return nn::mse(model.apply(luts, content).first, nn::image_to_tensor(t.target));
}

}  // namespace

nn::Tensor teach_loss(const PriorMapper& mapper, const IrStyleModel& model, std::span<const Triplet> batch) {
    if (batch.empty()) throw std::invalid_argument("teach_loss on an empty batch");
    nn::Tensor total;
    for (const Triplet& t : batch) {
        nn::Tensor l = triplet_loss(mapper, model, t);
        total = total.defined() ? nn::add(total, l) : l;
    }
    return nn::scale(total, 1.0 / static_cast<double>(batch.size()));
}

double train_mapper_step(PriorMapper& mapper, std::span<const Triplet> batch, IrStyleModel& frozen_model,
                         nn::Adam& optimizer) {
    if (batch.empty()) throw std::invalid_argument("train_mapper_step on an empty batch");
    for (const nn::Parameter* p : frozen_model.parameters())
        if (!p->frozen) throw std::invalid_argument("irstyle parameter " + p->name + " is not frozen");
    optimizer.zero_grad();
    const double inv = 1.0 / static_cast<double>(batch.size());
    double mean = 0.0;
    for (const Triplet& t : batch) {
        nn::Tensor l = triplet_loss(mapper, frozen_model, t);
        const double v = l.item();
        if (!std::isfinite(v)) throw TrainingError("non-finite teach loss " + std::to_string(v));
        nn::scale(l, inv).backward();
        mean += v * inv;
    }
    optimizer.step();
    return mean;
}

LutSet predict_luts_from_priors(const Image& content_thumb, const PriorFeatureFile& priors, const PriorMapper& mapper,
                                const IrStyleModel& model, const Image* blend_style_thumb, double w) {
    nn::NoGradGuard guard;
    FeaturePyramid style = map_prior_features(priors, mapper);
    if (blend_style_thumb) style = blend_style_features(model.encoder().encode(*blend_style_thumb), style, w);
    return predict_luts(content_thumb, style, model);
}

}  // namespace mrstyle
