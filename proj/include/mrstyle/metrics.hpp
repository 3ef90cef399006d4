#pragma once

#include <array>

#include "mrstyle/encoder.hpp"
#include "mrstyle/image.hpp"

namespace mrstyle {

/// Fixed, seeded feature extractor used for the Gram metric.
EncoderConfig metric_encoder_config();
Encoder make_metric_network();

/// Sum over levels of MSE between Gram matrices F F^T / (C H W).
double gram_style_loss(const FeaturePyramid& a, const FeaturePyramid& b);
/// Both images are resized to the network's input size first.
double gram_style_loss(const Image& a, const Image& b, const Encoder& net);

/// Rec. 601 luma in [0,1], row-major.
std::vector<double> luma(const Image& img);

/// Mean SSIM over all fully-contained 11x11 Gaussian windows (sigma 1.5) of
/// the luma planes; the window shrinks to the largest odd size that fits
/// smaller images.
double content_ssim(const Image& a, const Image& b);

inline constexpr int kLabBins = 32;

/// Per-channel (L, a, b) half-L1 distances between normalized 32-bin Lab
/// histograms; L spans [0,100], a and b span [-128,127].
std::array<double, 3> lab_histogram_distances(const Image& f1, const Image& f2);
/// Mean of the three channel distances, in [0,1].
double lab_histogram_distance(const Image& f1, const Image& f2);

/// sRGB (D65) to CIELAB.
std::array<double, 3> srgb_to_lab(double r, double g, double b);

}  // namespace mrstyle
