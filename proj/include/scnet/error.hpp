#pragma once

#include <stdexcept>
#include <string>

namespace scnet {

/// Tensor or matrix dimensions that do not fit the operation.
class ShapeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid model / layer / training configuration.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// File system and image codec failures.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace scnet
