#include "fabseg/errors.hpp"

namespace fabseg {

std::string_view error_name(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::InvalidRange: return "InvalidRange";
        case ErrorKind::EmptyInput: return "EmptyInput";
        case ErrorKind::ShapeError: return "ShapeError";
        case ErrorKind::NumericalError: return "NumericalError";
        case ErrorKind::InvalidState: return "InvalidState";
        case ErrorKind::NoEligiblePixels: return "NoEligiblePixels";
        case ErrorKind::InvalidPrompt: return "InvalidPrompt";
        case ErrorKind::InvalidArgument: return "InvalidArgument";
        case ErrorKind::InvalidGrid: return "InvalidGrid";
        case ErrorKind::CorruptCheckpoint: return "CorruptCheckpoint";
        case ErrorKind::SchemaError: return "SchemaError";
        case ErrorKind::DataError: return "DataError";
        case ErrorKind::UsageError: return "UsageError";
        case ErrorKind::IoError: return "IoError";
    }
    return "Unknown";
}

}  // namespace fabseg
