#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace refdx {

enum class ErrorCode {
    InvalidArgument,
    ZeroVector,
    NonFinite,
    NotNormalized,
    BadMagic,
    VersionMismatch,
    DimMismatch,
    CorruptRecord,
    UnknownClassId,
    IoFailure,
    EmptyLibrary,
    UnlabeledHit,
    EmptyHits,
    LengthMismatch,
    EmptyEvaluation,
    UnknownLabel,
    EmptyManifest,
    MalformedManifest,
    IdCollision,
    AllMasked,
    EnsembleDegenerate,
    OneClassOnly,
    EmptyCategory,
    IncompleteSheet,
    TooSmall,
    UndecodableImage,
    ThetaUnset,
    MalformedBody,
    ConfigError,
    UnknownExperiment,
    CentroidPlacementFailed,
    NotFound,
};

/// Machine-readable upper-snake name, e.g. "DIM_MISMATCH".
std::string_view to_string(ErrorCode code) noexcept;

/// The single exception type thrown by the engine. `detail` carries optional
/// structured context (a position, an offending value) for error JSON.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message, std::string detail = {})
        : std::runtime_error(message), code_(code), detail_(std::move(detail)) {}

    ErrorCode code() const noexcept { return code_; }
    const std::string& detail() const noexcept { return detail_; }

private:
    ErrorCode code_;
    std::string detail_;
};

}  // namespace refdx
