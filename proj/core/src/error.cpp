#include "refdx/error.hpp"

namespace refdx {

std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::InvalidArgument: return "INVALID_ARGUMENT";
        case ErrorCode::ZeroVector: return "ZERO_VECTOR";
        case ErrorCode::NonFinite: return "NON_FINITE";
        case ErrorCode::NotNormalized: return "NOT_NORMALIZED";
        case ErrorCode::BadMagic: return "BAD_MAGIC";
        case ErrorCode::VersionMismatch: return "VERSION_MISMATCH";
        case ErrorCode::DimMismatch: return "DIM_MISMATCH";
        case ErrorCode::CorruptRecord: return "CORRUPT_RECORD";
        case ErrorCode::UnknownClassId: return "UNKNOWN_CLASS_ID";
        case ErrorCode::IoFailure: return "IO_FAILURE";
        case ErrorCode::EmptyLibrary: return "EMPTY_LIBRARY";
        case ErrorCode::UnlabeledHit: return "UNLABELED_HIT";
        case ErrorCode::EmptyHits: return "EMPTY_HITS";
        case ErrorCode::LengthMismatch: return "LENGTH_MISMATCH";
        case ErrorCode::EmptyEvaluation: return "EMPTY_EVALUATION";
        case ErrorCode::UnknownLabel: return "UNKNOWN_LABEL";
        case ErrorCode::EmptyManifest: return "EMPTY_MANIFEST";
        case ErrorCode::MalformedManifest: return "MALFORMED_MANIFEST";
        case ErrorCode::IdCollision: return "ID_COLLISION";
        case ErrorCode::AllMasked: return "ALL_MASKED";
        case ErrorCode::EnsembleDegenerate: return "ENSEMBLE_DEGENERATE";
        case ErrorCode::OneClassOnly: return "ONE_CLASS_ONLY";
        case ErrorCode::EmptyCategory: return "EMPTY_CATEGORY";
        case ErrorCode::IncompleteSheet: return "INCOMPLETE_SHEET";
        case ErrorCode::TooSmall: return "TOO_SMALL";
        case ErrorCode::UndecodableImage: return "UNDECODABLE_IMAGE";
        case ErrorCode::ThetaUnset: return "THETA_UNSET";
        case ErrorCode::MalformedBody: return "MALFORMED_BODY";
        case ErrorCode::ConfigError: return "CONFIG_ERROR";
        case ErrorCode::UnknownExperiment: return "UNKNOWN_EXPERIMENT";
        case ErrorCode::CentroidPlacementFailed: return "CENTROID_PLACEMENT_FAILED";
        case ErrorCode::NotFound: return "NOT_FOUND";
    }
    return "UNKNOWN";
}

}  // namespace refdx
