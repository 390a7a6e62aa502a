#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fabseg {

enum class ErrorKind {
    InvalidRange,
    EmptyInput,
    ShapeError,
    NumericalError,
    InvalidState,
    NoEligiblePixels,
    InvalidPrompt,
    InvalidArgument,
    InvalidGrid,
    CorruptCheckpoint,
    SchemaError,
    DataError,
    UsageError,
    IoError,
};

std::string_view error_name(ErrorKind kind);

/// Every failure raised by the library carries one of the ErrorKind tags so
/// callers (and the CLI) can report it by name.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(std::string(error_name(kind)) + ": " + message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }
    std::string_view name() const noexcept { return error_name(kind_); }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
    throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
    if (!condition) throw Error(kind, message);
}

}  // namespace fabseg
