#pragma once

#include <stdexcept>
#include <string>

namespace bisida {

// Base for every error raised by the library. The CLI maps subclasses to
// exit codes: ValidationError -> 2, NumericError -> 3.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Bad shapes, bad arguments, violated preconditions, malformed files.
class ValidationError : public Error {
public:
    using Error::Error;
};

class ShapeError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class FormatError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

// NaN/Inf produced during a forward or backward pass.
class NumericError : public Error {
public:
    using Error::Error;
};

}  // namespace bisida
