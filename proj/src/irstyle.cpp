#include "mrstyle/irstyle.hpp"

#include <algorithm>
#include <cmath>

#include "mrstyle/lut_ops.hpp"
#include "mrstyle/ops.hpp"

namespace mrstyle {

std::string_view variant_name(ArchVariant v) {
    switch (v) {
        case ArchVariant::InteractionDirect: return "direct";
        case ArchVariant::NonInteractionDual: return "dual";
        case ArchVariant::InteractionDual: return "interaction-dual";
    }
    return "unknown";
}

ArchVariant parse_variant(std::string_view name) {
    if (name == "direct") return ArchVariant::InteractionDirect;
    if (name == "dual") return ArchVariant::NonInteractionDual;
    if (name == "interaction-dual") return ArchVariant::InteractionDual;
    throw std::invalid_argument("unknown variant '" + std::string(name) +
                                "' (expected direct, dual or interaction-dual)");
}

LutHead::LutHead(const std::string& prefix, int in_channels, int width, int basis_count, std::mt19937_64& rng)
    : in_channels_(in_channels) {
    int c = in_channels;
    for (std::size_t i = 0; i < conv_w_.size(); ++i) {
        const std::string base = prefix + ".conv" + std::to_string(i);
        conv_w_[i] = nn::Parameter(base + ".weight", nn::kaiming_uniform({width, c, 3, 3}, c * 9, rng));
        conv_b_[i] = nn::Parameter(base + ".bias", nn::Tensor::zeros({width}));
        c = width;
    }
    fc_w_ = nn::Parameter(prefix + ".fc.weight", nn::Tensor::zeros({basis_count, width}));
    fc_b_ = nn::Parameter(prefix + ".fc.bias", nn::Tensor::zeros({basis_count}));
}

nn::Tensor LutHead::forward(const nn::Tensor& features) const {
    nn::Tensor h = features;
    for (std::size_t i = 0; i < conv_w_.size(); ++i)
        h = nn::relu(nn::conv2d(h, conv_w_[i].tensor, conv_b_[i].tensor, 2, 1));
    return nn::linear(nn::global_avg_pool(h), fc_w_.tensor, fc_b_.tensor);
}

nn::ParameterList LutHead::parameters() {
    nn::ParameterList out;
    for (std::size_t i = 0; i < conv_w_.size(); ++i) {
        out.push_back(&conv_w_[i]);
        out.push_back(&conv_b_[i]);
    }
    out.push_back(&fc_w_);
    out.push_back(&fc_b_);
    return out;
}

lut::Lut3d LutSet::composed() const { return content ? lut::compose_luts(*content, style) : style; }

namespace {

// Random quadratic polynomial in (r,g,b) per output channel, rescaled so its peak is `scale`.
// Smooth residuals keep early non-zero weights from injecting lattice noise.
void smooth_basis(std::vector<double>& basis, int count, int size, double scale, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const std::size_t table = static_cast<std::size_t>(size) * size * size * 3;
    for (int k = 0; k < count; ++k) {
        double* t = basis.data() + static_cast<std::size_t>(k) * table;
        double coef[3][10];
        for (auto& ch : coef)
            for (double& a : ch) a = u(rng);
        double peak = 0;
        for (int b = 0; b < size; ++b)
            for (int g = 0; g < size; ++g)
                for (int r = 0; r < size; ++r) {
                    const double x = static_cast<double>(r) / (size - 1) - 0.5, y = static_cast<double>(g) / (size - 1) - 0.5,
                                 z = static_cast<double>(b) / (size - 1) - 0.5;
                    const double phi[10] = {1, x, y, z, x * x, y * y, z * z, x * y, x * z, y * z};
                    const std::size_t at = ((static_cast<std::size_t>(b) * size + g) * size + r) * 3;
                    for (int c = 0; c < 3; ++c) {
                        double v = 0;
                        for (int m = 0; m < 10; ++m) v += coef[c][m] * phi[m];
                        t[at + c] = v;
                        peak = std::max(peak, std::abs(v));
                    }
                }
        if (peak > 0)
            for (std::size_t i = 0; i < table; ++i) t[i] *= scale / peak;
    }
}

}  // namespace

IrStyleModel::IrStyleModel(ModelConfig cfg, std::uint64_t seed) : cfg_(cfg), encoder_(cfg.encoder, seed) {
    if (cfg_.interaction_size < 1 || cfg_.head_width < 1 || cfg_.clut_basis < 1)
        throw std::invalid_argument("invalid model configuration");
    std::mt19937_64 rng(seed ^ 0x9E3779B97F4A7C15ull);
    int feature_channels = 0;
    for (int c : cfg_.encoder.channels) feature_channels += c;
    const bool interact = cfg_.variant != ArchVariant::NonInteractionDual;
    const int in_channels = interact ? 2 * feature_channels : feature_channels;
    const std::vector<std::string> names = cfg_.variant == ArchVariant::InteractionDirect
                                               ? std::vector<std::string>{"direct"}
                                               : std::vector<std::string>{"content", "style"};
    const std::size_t table = static_cast<std::size_t>(cfg_.lut_size) * cfg_.lut_size * cfg_.lut_size * 3;
    heads_.reserve(names.size());
    banks_.reserve(names.size());
    for (const auto& name : names) {
        heads_.emplace_back(name + "_head", in_channels, cfg_.head_width, cfg_.clut_basis, rng);
        std::vector<double> basis(table * static_cast<std::size_t>(cfg_.clut_basis));
        smooth_basis(basis, cfg_.clut_basis, cfg_.lut_size, cfg_.basis_init_scale, rng);
        banks_.emplace_back(name + "_bank.basis",
                            nn::Tensor::from({cfg_.clut_basis, static_cast<int>(table)}, std::move(basis)));
    }
}

nn::Tensor IrStyleModel::head_input(const FeaturePyramid& own, const FeaturePyramid& other, bool interact) const {
    std::vector<nn::Tensor> parts;
    const int s = cfg_.interaction_size;
    for (int i = 0; i < kPyramidLevels; ++i) {
        const nn::Tensor& f = own.levels[static_cast<std::size_t>(i)];
        nn::Tensor level = interact ? nn::concat_channels({f, nn::adain(f, other.levels[static_cast<std::size_t>(i)])}) : f;
        parts.push_back(nn::resize_bilinear(level, s, s));
    }
    return nn::concat_channels(parts);
}

LutTensors IrStyleModel::forward(const nn::Tensor& content_thumb, const nn::Tensor& style_thumb) const {
    return forward_features(encoder_.encode(content_thumb), encoder_.encode(style_thumb));
}

LutTensors IrStyleModel::forward_features(const FeaturePyramid& content, const FeaturePyramid& style) const {
    const auto shapes = pyramid_shapes(cfg_.encoder);
    for (int i = 0; i < kPyramidLevels; ++i) {
        const auto& want = shapes[static_cast<std::size_t>(i)];
        for (const FeaturePyramid* p : {&content, &style}) {
            const nn::Tensor& t = p->levels[static_cast<std::size_t>(i)];
            if (t.rank() != 4 || t.dim(1) != want[0] || t.dim(2) != want[1] || t.dim(3) != want[2])
                throw nn::TensorError("pyramid level " + std::to_string(i) + " has shape " + nn::shape_string(t.shape()) +
                                      ", expected (N," + std::to_string(want[0]) + "," + std::to_string(want[1]) + "," +
                                      std::to_string(want[2]) + ")");
        }
    }
    std::vector<nn::Tensor> inputs;
    switch (cfg_.variant) {
        case ArchVariant::InteractionDual:
            inputs = {head_input(content, style, true), head_input(style, content, true)};
            break;
        case ArchVariant::NonInteractionDual:
            inputs = {head_input(content, style, false), head_input(style, content, false)};
            break;
        case ArchVariant::InteractionDirect:
            inputs = {head_input(content, style, true)};
            break;
    }
    LutTensors out;
    for (std::size_t h = 0; h < heads_.size(); ++h) {
        nn::Tensor w = heads_[h].forward(inputs[h]);
        out.lattices.push_back(nn::clut_lattice(w, banks_[h].tensor, cfg_.lut_size));
        out.weights.push_back(std::move(w));
    }
    return out;
}

std::pair<nn::Tensor, nn::Tensor> IrStyleModel::apply(const LutTensors& luts, const nn::Tensor& image) const {
    if (luts.dual()) {
        nn::Tensor content_map = nn::apply_lut(luts.lattices[0], cfg_.lut_size, image);
        nn::Tensor output = nn::apply_lut(luts.lattices[1], cfg_.lut_size, content_map);
        return {output, content_map};
    }
    return {nn::apply_lut(luts.lattices.at(0), cfg_.lut_size, image), nn::Tensor()};
}

nn::ParameterList IrStyleModel::head_parameters() {
    nn::ParameterList out;
    for (auto& h : heads_)
        for (nn::Parameter* p : h.parameters()) out.push_back(p);
    for (auto& b : banks_) out.push_back(&b);
    return out;
}

nn::ParameterList IrStyleModel::parameters() {
    nn::ParameterList out = encoder_.parameters();
    for (nn::Parameter* p : head_parameters()) out.push_back(p);
    return out;
}

void IrStyleModel::save(const std::filesystem::path& path) { nn::save_checkpoint(parameters(), path); }
void IrStyleModel::load(const std::filesystem::path& path) { nn::load_checkpoint(parameters(), path); }

Image make_thumbnail(const Image& img, int size) {
    if (img.width == size && img.height == size) return img;
    return resize_bilinear(img, size, size);
}

namespace {

LutSet to_lut_set(const LutTensors& t, int size) {
    std::vector<lut::LutWeights> weights;
    for (const auto& w : t.weights) weights.push_back({std::vector<double>(w.data().begin(), w.data().end())});
    if (t.dual())
        return LutSet{nn::lattice_to_lut(t.lattices[0], size), nn::lattice_to_lut(t.lattices[1], size), std::move(weights)};
    return LutSet{std::nullopt, nn::lattice_to_lut(t.lattices[0], size), std::move(weights)};
}

void require_thumbnail(const Image& img, int size, const char* role) {
    if (img.width != size || img.height != size)
        throw std::invalid_argument(std::string(role) + " thumbnail must be " + std::to_string(size) + "x" +
                                    std::to_string(size) + ", got " + std::to_string(img.width) + "x" +
                                    std::to_string(img.height));
}

}  // namespace

LutSet predict_luts(const Image& content_thumb, const Image& style_thumb, const IrStyleModel& model) {
    const int t = model.config().encoder.thumbnail;
    require_thumbnail(content_thumb, t, "content");
    require_thumbnail(style_thumb, t, "style");
    nn::NoGradGuard no_grad;
    LutSet out = to_lut_set(model.forward(nn::image_to_tensor(content_thumb), nn::image_to_tensor(style_thumb)),
                            model.config().lut_size);
    model.note_prediction();
    return out;
}

LutSet predict_luts(const Image& content_thumb, const FeaturePyramid& style, const IrStyleModel& model) {
    require_thumbnail(content_thumb, model.config().encoder.thumbnail, "content");
    nn::NoGradGuard no_grad;
    LutSet out = to_lut_set(model.forward_features(model.encoder().encode(content_thumb), style), model.config().lut_size);
    model.note_prediction();
    return out;
}

Image render(const Image& content, const LutSet& luts, int threads) {
    if (content.empty()) throw ImageError("transfer of an empty content image");
    if (luts.content) return lut::apply_lut_chain(*luts.content, luts.style, content, threads);
    return lut::apply_lut(luts.style, content, threads);
}

TransferResult apply_luts(const Image& content, LutSet luts, int threads) {
    if (content.empty()) throw ImageError("transfer of an empty content image");
    TransferResult result{Image{}, std::nullopt, std::move(luts)};
    if (result.luts.content) {
        result.content_map = lut::apply_lut(*result.luts.content, content, threads);
        result.output = lut::apply_lut(result.luts.style, *result.content_map, threads);
    } else {
        result.output = lut::apply_lut(result.luts.style, content, threads);
    }
    return result;
}

TransferResult transfer(const Image& content, const Image& style, const IrStyleModel& model, int threads) {
    if (content.empty() || style.empty()) throw ImageError("transfer needs non-empty content and style images");
    const int t = model.config().encoder.thumbnail;
    return apply_luts(content, predict_luts(make_thumbnail(content, t), make_thumbnail(style, t), model), threads);
}

}  // namespace mrstyle
