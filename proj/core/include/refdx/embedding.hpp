#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace refdx {

/// Allowed deviation of a normalized embedding's L2 norm from 1.
inline constexpr double kNormTolerance = 1e-5;

/// Fixed-dimension f32 feature vector. Every vector that enters a library or
/// a search is unit-norm; raw vectors are only held transiently.
class Embedding {
public:
    Embedding() = default;

    /// Wraps `values` without rescaling. Throws NonFinite, InvalidArgument
    /// (dim < 2) and, if `normalized` is claimed, NotNormalized when the norm
    /// is off by more than kNormTolerance.
    static Embedding from_values(std::vector<float> values, bool normalized);

    std::size_t dim() const noexcept { return values_.size(); }
    std::span<const float> values() const noexcept { return values_; }
    bool normalized() const noexcept { return normalized_; }
    float operator[](std::size_t i) const noexcept { return values_[i]; }

    friend bool operator==(const Embedding&, const Embedding&) = default;

private:
    std::vector<float> values_;
    bool normalized_ = false;
};

double l2_norm(std::span<const float> v) noexcept;

/// Unit-L2 rescale. Throws NonFinite, ZeroVector (norm < 1e-12) and
/// InvalidArgument (fewer than 2 entries).
Embedding normalize(std::span<const float> v);

}  // namespace refdx
