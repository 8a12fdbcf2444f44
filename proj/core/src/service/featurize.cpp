#include "refdx/service/featurize.hpp"

#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <random>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "refdx/error.hpp"
#include "refdx/random.hpp"

namespace refdx::service {
namespace {

using Projection = std::vector<double>;  // dim x kRawFeatureDim, row-major

// Box-Muller over uniform01 so the matrix does not depend on the standard
// library's normal_distribution.
std::shared_ptr<const Projection> make_projection(std::size_t dim, std::uint64_t seed) {
    auto p = std::make_shared<Projection>(dim * kRawFeatureDim);
    std::mt19937_64 gen(mix64(seed ^ 0x70726f6aULL));
    const double scale = 1.0 / std::sqrt(static_cast<double>(dim));
    for (std::size_t i = 0; i < p->size(); i += 2) {
        const double u1 = 1.0 - uniform01(gen);  // (0, 1]
        const double u2 = uniform01(gen);
        const double r = std::sqrt(-2.0 * std::log(u1));
        (*p)[i] = r * std::cos(2.0 * std::numbers::pi * u2) * scale;
        if (i + 1 < p->size()) (*p)[i + 1] = r * std::sin(2.0 * std::numbers::pi * u2) * scale;
    }
    return p;
}

std::shared_ptr<const Projection> projection(std::size_t dim, std::uint64_t seed) {
    static std::mutex mu;
    static std::map<std::pair<std::size_t, std::uint64_t>, std::shared_ptr<const Projection>> cache;
    std::lock_guard lock(mu);
    auto& slot = cache[{dim, seed}];
    if (!slot) slot = make_projection(dim, seed);
    return slot;
}

}  // namespace

std::vector<double> raw_features(const RgbImage& image) {
    if (image.width < kMinImageSide || image.height < kMinImageSide) {
        throw Error(ErrorCode::TooSmall,
                    "image is " + std::to_string(image.width) + "x" +
                        std::to_string(image.height) + ", need at least " +
                        std::to_string(kMinImageSide) + " on each side");
    }
    if (image.pixels.size() != image.width * image.height * 3) {
        throw Error(ErrorCode::InvalidArgument, "pixel buffer does not match width x height x 3");
    }
    std::vector<double> out;
    out.reserve(kRawFeatureDim);
    for (std::size_t cy = 0; cy < kFeatureGrid; ++cy) {
        const std::size_t y0 = cy * image.height / kFeatureGrid;
        const std::size_t y1 = (cy + 1) * image.height / kFeatureGrid;
        for (std::size_t cx = 0; cx < kFeatureGrid; ++cx) {
            const std::size_t x0 = cx * image.width / kFeatureGrid;
            const std::size_t x1 = (cx + 1) * image.width / kFeatureGrid;
            const auto count = static_cast<double>((y1 - y0) * (x1 - x0));
            for (std::size_t ch = 0; ch < 3; ++ch) {
                double sum = 0.0;
                for (std::size_t y = y0; y < y1; ++y) {
                    for (std::size_t x = x0; x < x1; ++x) {
                        sum += image.pixels[(y * image.width + x) * 3 + ch];
                    }
                }
                const double mean = sum / count;
                double sq = 0.0;
                for (std::size_t y = y0; y < y1; ++y) {
                    for (std::size_t x = x0; x < x1; ++x) {
                        const double d = image.pixels[(y * image.width + x) * 3 + ch] - mean;
                        sq += d * d;
                    }
                }
                out.push_back(mean / 255.0);
                out.push_back(std::sqrt(sq / count) / 255.0);
            }
        }
    }
    return out;
}

Embedding toy_featurize(const RgbImage& image, std::size_t dim, std::uint64_t seed) {
    if (dim < 2) throw Error(ErrorCode::InvalidArgument, "feature dim must be >= 2");
    const std::vector<double> raw = raw_features(image);
    const auto p = projection(dim, seed);
    std::vector<float> projected(dim);
    for (std::size_t r = 0; r < dim; ++r) {
        const double* row = p->data() + r * kRawFeatureDim;
        double acc = 0.0;
        for (std::size_t c = 0; c < kRawFeatureDim; ++c) acc += row[c] * raw[c];
        projected[r] = static_cast<float>(acc);
    }
    return normalize(projected);
}

RgbImage decode_image(std::span<const std::uint8_t> encoded) {
    if (encoded.empty()) throw Error(ErrorCode::UndecodableImage, "empty image payload");
    cv::Mat bgr;
    try {
        const cv::Mat buf(1, static_cast<int>(encoded.size()), CV_8UC1,
                          const_cast<std::uint8_t*>(encoded.data()));
        bgr = cv::imdecode(buf, cv::IMREAD_COLOR);
    } catch (const cv::Exception& e) {
        throw Error(ErrorCode::UndecodableImage, std::string("image decoder failed: ") + e.what());
    }
    if (bgr.empty()) throw Error(ErrorCode::UndecodableImage, "payload is not a decodable image");
    cv::Mat rgb;
    cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
    RgbImage out;
    out.width = static_cast<std::size_t>(rgb.cols);
    out.height = static_cast<std::size_t>(rgb.rows);
    out.pixels.resize(out.width * out.height * 3);
    for (int y = 0; y < rgb.rows; ++y) {
        const auto* src = rgb.ptr<std::uint8_t>(y);
        std::copy(src, src + out.width * 3, out.pixels.begin() + y * out.width * 3);
    }
    return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
    auto value = [](char c) -> int {
        if (c >= 'A' && c <= 'Z') return c - 'A';
        if (c >= 'a' && c <= 'z') return c - 'a' + 26;
        if (c >= '0' && c <= '9') return c - '0' + 52;
        if (c == '+') return 62;
        if (c == '/') return 63;
        return -1;
    };
    std::vector<std::uint8_t> out;
    out.reserve(text.size() * 3 / 4);
    std::uint32_t acc = 0;
    int bits = 0;
    bool padding = false;
    for (char c : text) {
        if (c == ' ' || c == '\n' || c == '\r' || c == '\t') continue;
        if (c == '=') {
            padding = true;
            continue;
        }
        const int v = value(c);
        if (v < 0 || padding) {
            throw Error(ErrorCode::UndecodableImage, "invalid base64 payload");
        }
        acc = (acc << 6) | static_cast<std::uint32_t>(v);
        bits += 6;
        if (bits >= 8) {
            bits -= 8;
            out.push_back(static_cast<std::uint8_t>((acc >> bits) & 0xFF));
        }
    }
    return out;
}

}  // namespace refdx::service
