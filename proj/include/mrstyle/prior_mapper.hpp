#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mrstyle/encoder.hpp"
#include "mrstyle/irstyle.hpp"
#include "mrstyle/optim.hpp"
#include "mrstyle/training.hpp"

namespace mrstyle {

class FeatureFileError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kFeatureFileVersion = 1;

/// Where the features came from; informational only.
struct PriorMetadata {
    std::uint64_t seed = 0;
    std::uint32_t timestep = 0;

    bool operator==(const PriorMetadata&) const = default;
};

struct FeatureTensor {
    std::vector<std::uint32_t> dims;
    std::vector<float> values;

    bool operator==(const FeatureTensor&) const = default;
};

/// Four per-scale feature tensors from one forward pass of an external
/// generator, shallowest first. Dims are (C,H,W) or (1,C,H,W).
struct PriorFeatureFile {
    std::array<FeatureTensor, kPyramidLevels> tensors;
    std::optional<PriorMetadata> metadata;

    bool operator==(const PriorFeatureFile&) const = default;
};

/// MRSF layout, little-endian: "MRSF", u32 version, u32 count (= 4), then
/// per tensor u32 rank, rank x u32 dims, f32 values. An optional trailing
/// block "META", u32 seed low, u32 seed high, u32 timestep follows.
std::string encode_feature_file(const PriorFeatureFile& file);
PriorFeatureFile decode_feature_file(std::string_view bytes);
void write_feature_file(const PriorFeatureFile& file, const std::filesystem::path& path);
PriorFeatureFile read_feature_file(const std::filesystem::path& path);

/// (1,C,H,W) tensors of a feature file.
std::array<nn::Tensor, kPyramidLevels> feature_tensors(const PriorFeatureFile& file);
/// Inverse of feature_tensors; values are rounded to float.
PriorFeatureFile to_feature_file(const std::array<nn::Tensor, kPyramidLevels>& levels,
                                 std::optional<PriorMetadata> metadata = std::nullopt);

/// Per scale: conv3x3 + ReLU + conv3x3 (zero-initialized biases) into the
/// target channel count, then bilinear resize to the target pyramid size.
class PriorMapper {
public:
    /// `input_shapes` are the (C,H,W) of the prior tensors; the output
    /// matches the pyramid of `target`.
    PriorMapper(const std::array<nn::Shape, kPyramidLevels>& input_shapes, const EncoderConfig& target,
                std::uint64_t seed);

    PriorMapper(const PriorMapper&) = delete;
    PriorMapper& operator=(const PriorMapper&) = delete;

    [[nodiscard]] FeaturePyramid map(const std::array<nn::Tensor, kPyramidLevels>& priors) const;
    [[nodiscard]] const std::array<nn::Shape, kPyramidLevels>& input_shapes() const noexcept { return input_shapes_; }
    [[nodiscard]] nn::ParameterList parameters();

    void save(const std::filesystem::path& path);
    void load(const std::filesystem::path& path);

private:
    struct Block {
        nn::Parameter w1, b1, w2, b2;
    };
    std::array<nn::Shape, kPyramidLevels> input_shapes_;
    std::array<nn::Shape, kPyramidLevels> output_shapes_;
    std::array<Block, kPyramidLevels> blocks_;
};

FeaturePyramid map_prior_features(const PriorFeatureFile& priors, const PriorMapper& mapper);

/// w * image_features + (1 - w) * mapped_features per level; 0 <= w <= 1.
FeaturePyramid blend_style_features(const FeaturePyramid& image_features, const FeaturePyramid& mapped, double w);

/// Content image, prior features standing in for the style reference, and
/// the target output.
struct Triplet {
    Image content;
    PriorFeatureFile priors;
    Image target;
};

/// Stand-in for the external generator: a fixed, separately seeded encoder
/// whose pyramid of the style thumbnail serves as prior features.
class PriorSource {
public:
    PriorSource(EncoderConfig cfg, std::uint64_t seed);

    [[nodiscard]] PriorFeatureFile features(const Image& style) const;
    [[nodiscard]] std::array<nn::Shape, kPyramidLevels> shapes() const { return pyramid_shapes(encoder_.config()); }

private:
    Encoder encoder_;
    std::uint64_t seed_;
};

/// Prior source layout for a model: half the thumbnail (at least 16) and
/// twice the channels, so the mapper has to resample and re-project.
EncoderConfig default_prior_config(const ModelConfig& model);

/// Target = the image-referenced transfer of (content, style); priors come
/// from the style image itself.
Triplet make_distillation_triplet(const IrStyleModel& model, const PriorSource& source, const Image& content,
                                  const Image& style);

struct MapperTrainConfig {
    std::uint64_t seed = 1;
    double lr = 5e-4;
    int steps = 500;
    int batch = 8;
    /// Learning rate is halved once after this many steps; 0 disables.
    int halve_after = 0;

    /// Large-scale settings: batch 8, `epochs` passes, lr halved after 30 epochs.
    static MapperTrainConfig full_scale(std::size_t dataset_size, int epochs = 200);
};

MapperTrainConfig mapper_config_from(const KeyValueConfig& kv, MapperTrainConfig defaults = {});

/// Mean L_teach = MSE(Y, I_g) over the triplets with the mapped features as style.
nn::Tensor teach_loss(const PriorMapper& mapper, const IrStyleModel& model, std::span<const Triplet> batch);

/// One Adam step on the mapper. All model parameters must already be
/// frozen. Throws TrainingError on a non-finite loss.
double train_mapper_step(PriorMapper& mapper, std::span<const Triplet> batch, IrStyleModel& frozen_model,
                         nn::Adam& optimizer);

/// Predicts LUTs with mapped prior features as the style input, optionally
/// blended with an image reference's pyramid (weight w on the image).
LutSet predict_luts_from_priors(const Image& content_thumb, const PriorFeatureFile& priors, const PriorMapper& mapper,
                                const IrStyleModel& model, const Image* blend_style_thumb = nullptr, double w = 0.0);

}  // namespace mrstyle
