#pragma once

#include <stdexcept>
#include <string>

namespace mmfuse {

// Error categories map 1:1 to CLI exit codes (see tools/mmfuse.cpp).
enum class ErrorCategory {
    config = 2,
    io = 3,
    format = 4,
    shape = 5,
    numeric = 6,
    train = 7,
};

class Error : public std::runtime_error {
public:
    Error(ErrorCategory cat, std::string msg) : std::runtime_error(std::move(msg)), cat_(cat) {}
    ErrorCategory category() const { return cat_; }

private:
    ErrorCategory cat_;
};

class ConfigError : public Error {
public:
    explicit ConfigError(std::string msg) : Error(ErrorCategory::config, std::move(msg)) {}
};

class IoError : public Error {
public:
    explicit IoError(std::string msg) : Error(ErrorCategory::io, std::move(msg)) {}
};

// File-format violations carry a machine-checkable kind so tests and callers
// can distinguish a bad magic from, say, a span violation.
class FormatError : public Error {
public:
    enum class Kind {
        bad_magic,
        bad_version,
        truncated,
        dim_mismatch,
        span_violation,
        non_finite_value,
        bad_field,
    };

    FormatError(Kind kind, std::string msg) : Error(ErrorCategory::format, std::move(msg)), kind_(kind) {}
    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

class ShapeError : public Error {
public:
    explicit ShapeError(std::string msg) : Error(ErrorCategory::shape, std::move(msg)) {}
};

class NumericError : public Error {
public:
    explicit NumericError(std::string msg) : Error(ErrorCategory::numeric, std::move(msg)) {}
};

// Raised when a training run has to stop; carries the last good checkpoint
// so the caller can report where to resume from.
class TrainAbort : public Error {
public:
    TrainAbort(std::string msg, std::string last_checkpoint)
        : Error(ErrorCategory::train, std::move(msg)), last_checkpoint_(std::move(last_checkpoint)) {}
    const std::string& last_checkpoint() const { return last_checkpoint_; }

private:
    std::string last_checkpoint_;
};

}  // namespace mmfuse
