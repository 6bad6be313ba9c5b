#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace evicode {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Input could not be parsed; `offset` is the byte position of the failure.
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t offset)
        : Error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

class ValidationError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class PreconditionError : public Error {
public:
    using Error::Error;
};

/// Code whose axis knowledge is empty after both curated and fallback paths.
class UnparseableCode : public Error {
public:
    using Error::Error;
};

class ScorerError : public Error {
public:
    using Error::Error;
};

class VerificationError : public Error {
public:
    using Error::Error;
};

class NotFound : public Error {
public:
    using Error::Error;
};

/// Results and gold labels disagree (missing record, diagnosis or code).
class DataMismatch : public Error {
public:
    using Error::Error;
};

}  // namespace evicode
