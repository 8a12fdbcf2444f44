#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "refdx/embedding.hpp"

namespace refdx::service {

/// Decoded raster, row-major, three bytes (R, G, B) per pixel.
struct RgbImage {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<std::uint8_t> pixels;
};

inline constexpr std::size_t kFeatureGrid = 16;
inline constexpr std::size_t kRawFeatureDim = kFeatureGrid * kFeatureGrid * 3 * 2;
inline constexpr std::size_t kMinImageSide = 32;

/// Per-cell, per-channel mean and standard deviation over a 16x16 grid of
/// boxes, intensities scaled to [0, 1]. Layout: cell-major, then channel,
/// then (mean, std). Throws TooSmall, InvalidArgument (pixel count).
std::vector<double> raw_features(const RgbImage& image);

/// Demo-grade stand-in for a neural encoder: raw_features projected to `dim`
/// by a fixed Gaussian matrix drawn from `seed`, then normalized.
Embedding toy_featurize(const RgbImage& image, std::size_t dim, std::uint64_t seed);

/// PNG/JPEG/BMP/... bytes to RGB. Throws UndecodableImage.
RgbImage decode_image(std::span<const std::uint8_t> encoded);

/// Standard alphabet, padding optional, whitespace ignored. Throws
/// UndecodableImage on any other character.
std::vector<std::uint8_t> base64_decode(std::string_view text);

}  // namespace refdx::service
