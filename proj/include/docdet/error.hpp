#pragma once

#include <stdexcept>
#include <string>

namespace docdet {

/// Base exception for every failure raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed or invalid configuration / input arguments.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// File system or parse failures; the message always names the path.
class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace docdet
