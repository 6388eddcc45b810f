#include "vitlens/error.hpp"

namespace vitlens {

std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::DimensionMismatch: return "DimensionMismatch";
        case ErrorCode::NonFiniteInput: return "NonFiniteInput";
        case ErrorCode::InvalidArgument: return "InvalidArgument";
        case ErrorCode::MalformedHeader: return "MalformedHeader";
        case ErrorCode::OffsetOutOfBounds: return "OffsetOutOfBounds";
        case ErrorCode::UnsupportedDtype: return "UnsupportedDtype";
        case ErrorCode::DuplicateName: return "DuplicateName";
        case ErrorCode::MissingTensor: return "MissingTensor";
        case ErrorCode::ShapeMismatch: return "ShapeMismatch";
        case ErrorCode::NonFiniteWeight: return "NonFiniteWeight";
        case ErrorCode::InvalidConfig: return "InvalidConfig";
        case ErrorCode::UnsupportedFormat: return "UnsupportedFormat";
        case ErrorCode::CorruptImage: return "CorruptImage";
        case ErrorCode::IndivisibleSide: return "IndivisibleSide";
        case ErrorCode::KOutOfRange: return "KOutOfRange";
        case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
        case ErrorCode::Io: return "Io";
    }
    return "Unknown";
}

}  // namespace vitlens
