#include "mrstyle/encoder.hpp"

#include "mrstyle/lut_ops.hpp"
#include "mrstyle/ops.hpp"

namespace mrstyle {

std::array<nn::Shape, kPyramidLevels> pyramid_shapes(const EncoderConfig& cfg) {
    std::array<nn::Shape, kPyramidLevels> shapes;
    int side = cfg.thumbnail;
    for (int i = 0; i < kPyramidLevels; ++i) {
        side = (side - 1) / 2 + 1;  // conv3x3, stride 2, padding 1
        shapes[static_cast<std::size_t>(i)] = {cfg.channels[static_cast<std::size_t>(i)], side, side};
    }
    return shapes;
}

Encoder::Encoder(EncoderConfig cfg, std::uint64_t seed, std::string prefix) : cfg_(cfg) {
    if (cfg_.thumbnail < 16) throw nn::TensorError("encoder thumbnail must be at least 16 pixels");
    std::mt19937_64 rng(seed);
    int in_c = 3;
    for (int i = 0; i < kPyramidLevels; ++i) {
        const int out_c = cfg_.channels[static_cast<std::size_t>(i)];
        if (out_c < 1) throw nn::TensorError("encoder channel counts must be positive");
        const std::string base = prefix + ".block" + std::to_string(i);
        Block& b = blocks_[static_cast<std::size_t>(i)];
        b.down_w = nn::Parameter(base + ".down.weight", nn::kaiming_uniform({out_c, in_c, 3, 3}, in_c * 9, rng));
        b.down_b = nn::Parameter(base + ".down.bias", nn::Tensor::zeros({out_c}));
        b.conv_w = nn::Parameter(base + ".conv.weight", nn::kaiming_uniform({out_c, out_c, 3, 3}, out_c * 9, rng));
        b.conv_b = nn::Parameter(base + ".conv.bias", nn::Tensor::zeros({out_c}));
        in_c = out_c;
    }
}

FeaturePyramid Encoder::encode(const nn::Tensor& x) const {
    if (x.rank() != 4 || x.dim(1) != 3 || x.dim(2) != cfg_.thumbnail || x.dim(3) != cfg_.thumbnail)
        throw nn::TensorError("encoder expects (N,3," + std::to_string(cfg_.thumbnail) + "," +
                              std::to_string(cfg_.thumbnail) + ") input, got " + nn::shape_string(x.shape()));
    FeaturePyramid out;
    nn::Tensor h = x;
    for (int i = 0; i < kPyramidLevels; ++i) {
        const Block& b = blocks_[static_cast<std::size_t>(i)];
        h = nn::relu(nn::conv2d(h, b.down_w.tensor, b.down_b.tensor, 2, 1));
        h = nn::relu(nn::conv2d(h, b.conv_w.tensor, b.conv_b.tensor, 1, 1));
        out.levels[static_cast<std::size_t>(i)] = h;
    }
    return out;
}

FeaturePyramid Encoder::encode(const Image& thumbnail) const { return encode(nn::image_to_tensor(thumbnail)); }

FeaturePyramid Encoder::encode_resized(const nn::Tensor& image) const {
    return encode(nn::resize_bilinear(image, cfg_.thumbnail, cfg_.thumbnail));
}

nn::ParameterList Encoder::parameters() {
    nn::ParameterList out;
    for (Block& b : blocks_) {
        out.push_back(&b.down_w);
        out.push_back(&b.down_b);
        out.push_back(&b.conv_w);
        out.push_back(&b.conv_b);
    }
    return out;
}

}  // namespace mrstyle
