#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace debias {

enum class ErrorCode {
    RankDeficientBasis,
    InsufficientSamples,
    DegenerateVariance,
    SingleGroup,
    InvalidProportion,
    EmptyList,
    DimensionMismatch,
    DegenerateProjection,
    InvalidSpec,
    UnknownPreset,
    FoldDegeneracy,
    AllAbstained,
    IndexOutOfRange,
    Validation,
    Io,
    InvalidArgument,
};

inline std::string_view to_string(ErrorCode code) {
    switch (code) {
    case ErrorCode::RankDeficientBasis: return "RankDeficientBasis";
    case ErrorCode::InsufficientSamples: return "InsufficientSamples";
    case ErrorCode::DegenerateVariance: return "DegenerateVariance";
    case ErrorCode::SingleGroup: return "SingleGroup";
    case ErrorCode::InvalidProportion: return "InvalidProportion";
    case ErrorCode::EmptyList: return "EmptyList";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::DegenerateProjection: return "DegenerateProjection";
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::UnknownPreset: return "UnknownPreset";
    case ErrorCode::FoldDegeneracy: return "FoldDegeneracy";
    case ErrorCode::AllAbstained: return "AllAbstained";
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::Validation: return "Validation";
    case ErrorCode::Io: return "Io";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    }
    return "Unknown";
}

/// Library-wide exception; `code()` identifies the failure class.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
    throw Error(code, message);
}

}  // namespace debias
