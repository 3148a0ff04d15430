#pragma once

#include <optional>
#include <stdexcept>
#include <string>

namespace stagelog {

/// 1-based source position attached to parse diagnostics.
struct SourceSpan {
    int line = 1;
    int column = 1;
    int length = 1;
};

enum class ErrorCode {
    // parsing
    SyntaxError,
    SafetyViolation,
    ArityMismatch,
    UnknownPredicate,
    MalformedValue,
    // stratification
    NotStratifiable,
    // evaluation
    TypeMismatch,
    UnboundVariable,
    DivisionByZero,
    IntegerOverflow,
    EmptyGroup,
    CardinalityMismatch,
    // oracles
    SizeLimit,
    NonStochasticRow,
};

const char* errorCodeName(ErrorCode code);

class EngineError : public std::runtime_error {
public:
    EngineError(ErrorCode code, std::string message)
        : std::runtime_error(std::string(errorCodeName(code)) + ": " + message), code_(code) {}

    EngineError(ErrorCode code, std::string message, SourceSpan span)
        : std::runtime_error(std::string(errorCodeName(code)) + " at " + std::to_string(span.line) +
                             ":" + std::to_string(span.column) + ": " + message),
          code_(code), span_(span) {}

    ErrorCode code() const { return code_; }
    const std::optional<SourceSpan>& span() const { return span_; }

private:
    ErrorCode code_;
    std::optional<SourceSpan> span_;
};

inline bool isParseError(ErrorCode c) {
    return c == ErrorCode::SyntaxError || c == ErrorCode::SafetyViolation ||
           c == ErrorCode::ArityMismatch || c == ErrorCode::UnknownPredicate ||
           c == ErrorCode::MalformedValue;
}

} // namespace stagelog
