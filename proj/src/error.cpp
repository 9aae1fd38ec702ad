#include "mffd/error.hpp"

namespace mffd {

std::string_view error_code_name(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::ShapeMismatch: return "ShapeMismatch";
        case ErrorCode::InvalidArgument: return "InvalidArgument";
        case ErrorCode::NonFinite: return "NonFinite";
        case ErrorCode::AutodiffMisuse: return "AutodiffMisuse";
        case ErrorCode::UnsupportedFormat: return "UnsupportedFormat";
        case ErrorCode::MalformedHeader: return "MalformedHeader";
        case ErrorCode::Truncated: return "Truncated";
        case ErrorCode::BadMagic: return "BadMagic";
        case ErrorCode::BadVersion: return "BadVersion";
        case ErrorCode::DuplicateId: return "DuplicateId";
        case ErrorCode::DimMismatch: return "DimMismatch";
        case ErrorCode::NameMismatch: return "NameMismatch";
        case ErrorCode::InvalidConfig: return "InvalidConfig";
        case ErrorCode::MissingEmbedding: return "MissingEmbedding";
        case ErrorCode::EmptySplit: return "EmptySplit";
        case ErrorCode::Divergence: return "Divergence";
        case ErrorCode::Io: return "Io";
    }
    return "Unknown";
}

}  // namespace mffd
