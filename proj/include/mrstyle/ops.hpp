#pragma once

#include "mrstyle/tensor.hpp"

/// Differentiable ops. Image-like tensors are NCHW.
namespace mrstyle::nn {

inline constexpr double kAdainEps = 1e-5;

// Elementwise, equal shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor sqrt(const Tensor& a);
Tensor relu(const Tensor& x);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor mse(const Tensor& a, const Tensor& b);
/// Euclidean norm of a - b; the gradient at a == b is taken as zero.
Tensor l2_distance(const Tensor& a, const Tensor& b);

/// Same data, new shape (element count must match).
Tensor reshape(const Tensor& x, Shape shape);

/// Cross-correlation. x (N,Ci,H,W), weight (Co,Ci,k,k), bias (Co) or undefined.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride, int padding);

/// Half-pixel-center bilinear resampling of each plane.
Tensor resize_bilinear(const Tensor& x, int out_h, int out_w);

/// Concatenate NCHW tensors with equal N, H, W along channels.
Tensor concat_channels(const std::vector<Tensor>& parts);

/// (N,C,H,W) -> (N,C)
Tensor global_avg_pool(const Tensor& x);
Tensor channel_mean(const Tensor& x);
/// Population variance per (n, c).
Tensor channel_var(const Tensor& x);
/// sqrt(var + eps) per (n, c).
Tensor channel_std(const Tensor& x, double eps = kAdainEps);

/// x * scale[n,c] + shift[n,c] broadcast over H, W.
Tensor channel_affine(const Tensor& x, const Tensor& scale, const Tensor& shift);

/// Re-normalizes content to the per-channel moments of style:
/// sigma_s * (c - mu_c) / sqrt(var_c + eps) + mu_s with sigma_s = sqrt(var_s + eps).
Tensor adain(const Tensor& content, const Tensor& style, double eps = kAdainEps);

/// x (N,in), weight (out,in), bias (out) -> (N,out)
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

/// Gram matrices F F^T / (C H W): (N,C,H,W) -> (N,C,C).
Tensor gram(const Tensor& x);

/// Convex combination w*a + (1-w)*b.
Tensor blend(const Tensor& a, const Tensor& b, double w);

}  // namespace mrstyle::nn
