#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "mrstyle/image.hpp"
#include "mrstyle/lut.hpp"

namespace mrstyle {

/// Procedural scene: two-color gradient background, a handful of soft
/// blobs and rectangles, light noise.
Image toy_image(int width, int height, std::mt19937_64& rng);
std::vector<Image> toy_corpus(int count, int width, int height, std::uint64_t seed);

/// Random color grade baked into a LUT: per-channel gain, offset and gamma,
/// a saturation change, a small channel mix and a tint.
lut::Lut3d toy_filter(int size, std::mt19937_64& rng);
std::vector<lut::Lut3d> toy_filters(int count, int size, std::uint64_t seed);

}  // namespace mrstyle
