#include "cosy/error.hpp"

namespace cosy {

const char* to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::EmptyComponent: return "EmptyComponent";
        case ErrorCode::Culled: return "Culled";
        case ErrorCode::StaleAux: return "StaleAux";
        case ErrorCode::MissingColorConditioning: return "MissingColorConditioning";
        case ErrorCode::UnexpectedColorConditioning: return "UnexpectedColorConditioning";
        case ErrorCode::ShapeMismatch: return "ShapeMismatch";
        case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
        case ErrorCode::LengthMismatch: return "LengthMismatch";
        case ErrorCode::EmptyRegion: return "EmptyRegion";
        case ErrorCode::NonFiniteFeatures: return "NonFiniteFeatures";
        case ErrorCode::CheckpointInvalid: return "CheckpointInvalid";
        case ErrorCode::UnknownSession: return "UnknownSession";
        case ErrorCode::BadEdit: return "BadEdit";
        case ErrorCode::SessionLimit: return "SessionLimit";
        case ErrorCode::ConfigError: return "ConfigError";
        case ErrorCode::DataError: return "DataError";
        case ErrorCode::FormatError: return "FormatError";
    }
    return "Unknown";
}

}  // namespace cosy
