#pragma once

#include <atomic>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mrstyle/encoder.hpp"
#include "mrstyle/image.hpp"
#include "mrstyle/lut.hpp"
#include "mrstyle/optim.hpp"

namespace mrstyle {

enum class ArchVariant {
    InteractionDirect,   // one LUT from interaction features
    NonInteractionDual,  // content/style LUTs from each image's own features
    InteractionDual,     // content/style LUTs from AdaIN-interacted features
};

std::string_view variant_name(ArchVariant v);
/// Accepts the CLI spellings: direct, dual, interaction-dual.
ArchVariant parse_variant(std::string_view name);

struct ModelConfig {
    EncoderConfig encoder;
    int interaction_size = 16;  // all levels are resized to this square before the heads
    int head_width = 64;
    int clut_basis = 20;
    int lut_size = lut::kDefaultLutSize;
    double basis_init_scale = 0.05;
    ArchVariant variant = ArchVariant::InteractionDual;
};

/// Four stride-2 conv blocks, global average pool, then a zero-initialized
/// linear layer producing CLUT weights.
class LutHead {
public:
    LutHead(const std::string& prefix, int in_channels, int width, int basis_count, std::mt19937_64& rng);

    /// (1,C,S,S) -> (1,K)
    [[nodiscard]] nn::Tensor forward(const nn::Tensor& features) const;
    [[nodiscard]] nn::ParameterList parameters();
    [[nodiscard]] int in_channels() const noexcept { return in_channels_; }

private:
    int in_channels_;
    std::array<nn::Parameter, 4> conv_w_, conv_b_;
    nn::Parameter fc_w_, fc_b_;
};

/// Differentiable output of one prediction: CLUT weights and lattices for
/// each head (content then style, or just the direct LUT).
struct LutTensors {
    std::vector<nn::Tensor> weights;
    std::vector<nn::Tensor> lattices;

    [[nodiscard]] bool dual() const { return lattices.size() == 2; }
};

/// Concrete tables ready for application.
struct LutSet {
    std::optional<lut::Lut3d> content;  // absent for InteractionDirect
    lut::Lut3d style;                   // style LUT, or the direct LUT
    std::vector<lut::LutWeights> weights;

    /// One table equivalent (up to interpolation) to the full mapping.
    [[nodiscard]] lut::Lut3d composed() const;
};

struct TransferResult {
    Image output;
    std::optional<Image> content_map;
    LutSet luts;
};

class IrStyleModel {
public:
    IrStyleModel(ModelConfig cfg, std::uint64_t seed);

    IrStyleModel(const IrStyleModel&) = delete;
    IrStyleModel& operator=(const IrStyleModel&) = delete;

    [[nodiscard]] const ModelConfig& config() const noexcept { return cfg_; }
    [[nodiscard]] ArchVariant variant() const noexcept { return cfg_.variant; }
    [[nodiscard]] const Encoder& encoder() const noexcept { return encoder_; }

    /// Differentiable prediction from thumbnails (1,3,T,T).
    [[nodiscard]] LutTensors forward(const nn::Tensor& content_thumb, const nn::Tensor& style_thumb) const;
    /// Same, with the style pyramid supplied directly (image or mapped prior features).
    [[nodiscard]] LutTensors forward_features(const FeaturePyramid& content, const FeaturePyramid& style) const;

    /// Applies predicted lattices to a full-resolution image tensor (1,3,H,W).
    /// Returns {output, content_map}; content_map is undefined for the direct variant.
    [[nodiscard]] std::pair<nn::Tensor, nn::Tensor> apply(const LutTensors& luts, const nn::Tensor& image) const;

    [[nodiscard]] nn::ParameterList parameters();
    [[nodiscard]] nn::ParameterList head_parameters();

    void save(const std::filesystem::path& path);
    void load(const std::filesystem::path& path);

    /// Number of completed predict_luts calls.
    [[nodiscard]] long prediction_count() const noexcept { return predictions_.load(); }
    void note_prediction() const noexcept { ++predictions_; }

private:
    [[nodiscard]] nn::Tensor head_input(const FeaturePyramid& own, const FeaturePyramid& other, bool interact) const;

    ModelConfig cfg_;
    Encoder encoder_;
    std::vector<LutHead> heads_;
    std::vector<nn::Parameter> banks_;
    mutable std::atomic<long> predictions_{0};
};

Image make_thumbnail(const Image& img, int size);

/// Predicts LUTs from two T x T thumbnails. Throws on other sizes.
LutSet predict_luts(const Image& content_thumb, const Image& style_thumb, const IrStyleModel& model);
/// Predicts with a ready-made style pyramid in place of the style image.
LutSet predict_luts(const Image& content_thumb, const FeaturePyramid& style, const IrStyleModel& model);

/// Applies a LUT set at full resolution.
/// Output image only, in a single pass with no content map held in memory.
/// Equal to apply_luts(...).output.
Image render(const Image& content, const LutSet& luts, int threads = 1);

TransferResult apply_luts(const Image& content, LutSet luts, int threads = 1);

/// Thumbnails both images, predicts, and applies to the full-resolution content.
TransferResult transfer(const Image& content, const Image& style, const IrStyleModel& model, int threads = 1);

}  // namespace mrstyle
