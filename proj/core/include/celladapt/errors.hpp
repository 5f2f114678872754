#pragma once

#include <stdexcept>
#include <string>

namespace celladapt {

/// Invalid configuration or parameters, detected before any work starts.
/// The CLI maps this to exit code 2.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Broken or missing data on disk: datasets, annotations, checkpoints.
/// The CLI maps this to exit code 3.
class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

} // namespace celladapt
