#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mffd {

enum class ErrorCode {
    ShapeMismatch,
    InvalidArgument,
    NonFinite,
    AutodiffMisuse,
    UnsupportedFormat,
    MalformedHeader,
    Truncated,
    BadMagic,
    BadVersion,
    DuplicateId,
    DimMismatch,
    NameMismatch,
    InvalidConfig,
    MissingEmbedding,
    EmptySplit,
    Divergence,
    Io,
};

std::string_view error_code_name(ErrorCode code) noexcept;

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(error_code_name(code)) + ": " + what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, ErrorCode code, const std::string& what) {
    if (!cond) fail(code, what);
}

}  // namespace mffd
