#pragma once

#include <stdexcept>
#include <string>

namespace cosy {

enum class ErrorCode {
    EmptyComponent,
    Culled,
    StaleAux,
    MissingColorConditioning,
    UnexpectedColorConditioning,
    ShapeMismatch,
    NonFiniteLoss,
    LengthMismatch,
    EmptyRegion,
    NonFiniteFeatures,
    CheckpointInvalid,
    UnknownSession,
    BadEdit,
    SessionLimit,
    ConfigError,
    DataError,
    FormatError,
};

const char* to_string(ErrorCode code);

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

}  // namespace cosy
