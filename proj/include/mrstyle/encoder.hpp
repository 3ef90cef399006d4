#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "mrstyle/image.hpp"
#include "mrstyle/optim.hpp"
#include "mrstyle/tensor.hpp"

namespace mrstyle {

inline constexpr int kPyramidLevels = 4;

struct EncoderConfig {
    int thumbnail = 256;
    std::array<int, kPyramidLevels> channels{16, 32, 64, 128};
};

/// Four feature maps at strides 2, 4, 8 and 16 of the thumbnail.
struct FeaturePyramid {
    std::array<nn::Tensor, kPyramidLevels> levels;
};

/// Expected (C, H, W) of each pyramid level for `cfg`.
std::array<nn::Shape, kPyramidLevels> pyramid_shapes(const EncoderConfig& cfg);

/// Shared multi-scale extractor: four blocks of
/// (conv3x3 stride 2, ReLU, conv3x3 stride 1, ReLU).
class Encoder {
public:
    Encoder(EncoderConfig cfg, std::uint64_t seed, std::string prefix = "encoder");

    Encoder(const Encoder&) = delete;
    Encoder& operator=(const Encoder&) = delete;
    Encoder(Encoder&&) = default;
    Encoder& operator=(Encoder&&) = default;

    /// x is (N,3,T,T) with T the configured thumbnail size.
    [[nodiscard]] FeaturePyramid encode(const nn::Tensor& x) const;
    /// Same, from a T x T image.
    [[nodiscard]] FeaturePyramid encode(const Image& thumbnail) const;

    /// Feature pyramid of an arbitrary-size image after resizing it to T x T.
    [[nodiscard]] FeaturePyramid encode_resized(const nn::Tensor& image) const;

    [[nodiscard]] const EncoderConfig& config() const noexcept { return cfg_; }
    [[nodiscard]] nn::ParameterList parameters();

private:
    struct Block {
        nn::Parameter down_w, down_b, conv_w, conv_b;
    };

    EncoderConfig cfg_;
    std::array<Block, kPyramidLevels> blocks_;
};

}  // namespace mrstyle
