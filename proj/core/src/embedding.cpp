#include "refdx/embedding.hpp"

#include <cmath>
#include <string>

#include "refdx/error.hpp"

namespace refdx {
namespace {

void check_shape_and_finite(std::span<const float> v) {
    if (v.size() < 2) {
        throw Error(ErrorCode::InvalidArgument,
                    "embedding needs at least 2 dimensions, got " + std::to_string(v.size()));
    }
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (!std::isfinite(v[i])) {
            throw Error(ErrorCode::NonFinite, "embedding has a non-finite entry",
                        "index " + std::to_string(i));
        }
    }
}

}  // namespace

double l2_norm(std::span<const float> v) noexcept {
    double sum = 0.0;
    for (float x : v) sum += static_cast<double>(x) * x;
    return std::sqrt(sum);
}

Embedding Embedding::from_values(std::vector<float> values, bool normalized) {
    check_shape_and_finite(values);
    if (normalized) {
        const double norm = l2_norm(values);
        if (std::abs(norm - 1.0) > kNormTolerance) {
            throw Error(ErrorCode::NotNormalized, "embedding claimed normalized but has norm " +
                                                      std::to_string(norm));
        }
    }
    Embedding e;
    e.values_ = std::move(values);
    e.normalized_ = normalized;
    return e;
}

Embedding normalize(std::span<const float> v) {
    check_shape_and_finite(v);
    const double norm = l2_norm(v);
    if (norm < 1e-12) throw Error(ErrorCode::ZeroVector, "cannot normalize a zero vector");
    std::vector<float> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        out[i] = static_cast<float>(static_cast<double>(v[i]) / norm);
    }
    Embedding e;
    e = Embedding::from_values(std::move(out), true);
    return e;
}

}  // namespace refdx
