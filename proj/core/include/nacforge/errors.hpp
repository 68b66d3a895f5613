#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace nac {

// Base for every error the toolkit raises. The error code is a stable short
// identifier (e.g. "ShapeMismatch") that callers and the CLI can match on.
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& message)
        : std::runtime_error(code + ": " + message), code_(std::move(code)) {}

    const std::string& code() const noexcept { return code_; }

private:
    std::string code_;
};

#define NAC_DEFINE_ERROR(Name)                                            \
    class Name : public Error {                                           \
    public:                                                               \
        explicit Name(const std::string& message) : Error(#Name, message) {} \
    }

NAC_DEFINE_ERROR(ShapeMismatch);
NAC_DEFINE_ERROR(NonPositiveDim);
NAC_DEFINE_ERROR(UnknownModel);
NAC_DEFINE_ERROR(DomainError);
NAC_DEFINE_ERROR(SpaceMismatch);
NAC_DEFINE_ERROR(NumericOverflow);
NAC_DEFINE_ERROR(NumericDivergence);
NAC_DEFINE_ERROR(GraphNotRecorded);
NAC_DEFINE_ERROR(EmptyDataset);
NAC_DEFINE_ERROR(SchemaError);
NAC_DEFINE_ERROR(InsufficientArchive);
NAC_DEFINE_ERROR(AllTrialsFailed);
NAC_DEFINE_ERROR(NothingLeftToPrune);
NAC_DEFINE_ERROR(CheckpointError);

#undef NAC_DEFINE_ERROR

class ParseError : public Error {
public:
    ParseError(std::size_t line, const std::string& reason)
        : Error("ParseError", "line " + std::to_string(line) + ": " + reason), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

}  // namespace nac
