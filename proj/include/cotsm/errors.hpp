#pragma once

#include <stdexcept>
#include <string>

namespace cotsm {

// Base for every error raised by the library. The CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DimensionError : public Error { using Error::Error; };
class ContractError  : public Error { using Error::Error; };
class ConfigError    : public Error { using Error::Error; };
class IndexError     : public Error { using Error::Error; };
class LookupError    : public Error { using Error::Error; };
class DataError      : public Error { using Error::Error; };
class CapacityError  : public Error { using Error::Error; };
class NumericError   : public Error { using Error::Error; };
class DependencyError : public Error { using Error::Error; };
class StaleArtifactError : public DependencyError { using DependencyError::DependencyError; };

}  // namespace cotsm
