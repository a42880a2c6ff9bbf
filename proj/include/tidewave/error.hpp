#pragma once

#include <stdexcept>
#include <string>

namespace tidewave {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad argument, bad configuration or malformed input content.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// File could not be opened, read or written.
class IoError : public Error {
public:
    using Error::Error;
};

/// NaN loss, singular system or another numerical breakdown.
class NumericalError : public Error {
public:
    using Error::Error;
};

} // namespace tidewave
