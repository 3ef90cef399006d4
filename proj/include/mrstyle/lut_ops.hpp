#pragma once

#include "mrstyle/image.hpp"
#include "mrstyle/lut.hpp"
#include "mrstyle/tensor.hpp"

/// Differentiable counterparts of the LUT core, used by training.
namespace mrstyle::nn {

/// Lattice tensor (size^3 * 3, red fastest) of clamp(identity + weights . basis).
/// weights (1,K) or (K), basis (K, size^3 * 3).
Tensor clut_lattice(const Tensor& weights, const Tensor& basis, int size);

/// Trilinear application of a lattice tensor to an image tensor (1,3,H,W).
/// Gradients flow to both the lattice and the image.
Tensor apply_lut(const Tensor& lattice, int size, const Tensor& image);

Tensor image_to_tensor(const Image& img);
Image tensor_to_image(const Tensor& t);
lut::Lut3d lattice_to_lut(const Tensor& lattice, int size);
Tensor lut_to_lattice(const lut::Lut3d& lut);

}  // namespace mrstyle::nn
