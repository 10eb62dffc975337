#pragma once

#include <stdexcept>
#include <string>

namespace csts {

// Error taxonomy shared by every module. The C API maps each kind onto a
// stable status code, so new kinds must be added there as well.
enum class ErrorKind {
    dimension,
    contract,
    config,
    range,
    format,
    io,
    numeric,
    state,
    evaluation,
    validation,
    verification,
};

const char* error_kind_name(ErrorKind kind);

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

#define CSTS_DEFINE_ERROR(Name, Kind)                                     \
    class Name : public Error {                                           \
    public:                                                               \
        explicit Name(const std::string& what) : Error(ErrorKind::Kind, what) {} \
    };

CSTS_DEFINE_ERROR(DimensionError, dimension)
CSTS_DEFINE_ERROR(ContractError, contract)
CSTS_DEFINE_ERROR(ConfigError, config)
CSTS_DEFINE_ERROR(RangeError, range)
CSTS_DEFINE_ERROR(FormatError, format)
CSTS_DEFINE_ERROR(IoError, io)
CSTS_DEFINE_ERROR(NumericError, numeric)
CSTS_DEFINE_ERROR(StateError, state)
CSTS_DEFINE_ERROR(EvaluationError, evaluation)
CSTS_DEFINE_ERROR(ValidationError, validation)
CSTS_DEFINE_ERROR(VerificationError, verification)

#undef CSTS_DEFINE_ERROR

inline const char* error_kind_name(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::dimension: return "dimension error";
    case ErrorKind::contract: return "contract error";
    case ErrorKind::config: return "config error";
    case ErrorKind::range: return "range error";
    case ErrorKind::format: return "format error";
    case ErrorKind::io: return "I/O error";
    case ErrorKind::numeric: return "numeric error";
    case ErrorKind::state: return "state error";
    case ErrorKind::evaluation: return "evaluation error";
    case ErrorKind::validation: return "validation error";
    case ErrorKind::verification: return "verification error";
    }
    return "error";
}

} // namespace csts
