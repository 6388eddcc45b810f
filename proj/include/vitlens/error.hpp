#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace vitlens {

enum class ErrorCode {
    DimensionMismatch,
    NonFiniteInput,
    InvalidArgument,
    // weight container / binding
    MalformedHeader,
    OffsetOutOfBounds,
    UnsupportedDtype,
    DuplicateName,
    MissingTensor,
    ShapeMismatch,
    NonFiniteWeight,
    InvalidConfig,
    // images
    UnsupportedFormat,
    CorruptImage,
    IndivisibleSide,
    // lens queries
    KOutOfRange,
    IndexOutOfRange,
    Io,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Every failure surfaced by the library carries one of the codes above so
/// callers (HTTP handlers, the CLI) can map it without parsing messages.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

}  // namespace vitlens
