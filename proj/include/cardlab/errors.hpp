#pragma once

#include <stdexcept>
#include <string>

namespace cardlab {

// Base type for everything the library throws on purpose.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct UnknownRelationError : Error {
    explicit UnknownRelationError(const std::string& name) : Error("unknown relation: " + name) {}
};

struct UnknownRowError : Error {
    UnknownRowError(const std::string& rel, std::uint64_t row_id)
        : Error("relation " + rel + " has no row " + std::to_string(row_id)) {}
};

struct DomainViolationError : Error {
    using Error::Error;
};

struct EmptyDomainError : Error {
    using Error::Error;
};

struct NegativeCountError : Error {
    using Error::Error;
};

struct UnknownJoinPatternError : Error {
    using Error::Error;
};

struct ShapeMismatchError : Error {
    using Error::Error;
};

struct NonFiniteValueError : Error {
    using Error::Error;
};

struct GenerationExhaustedError : Error {
    using Error::Error;
};

struct InsufficientDataError : Error {
    using Error::Error;
};

struct NonPositiveError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

}  // namespace cardlab
