#pragma once

#include <stdexcept>
#include <string>

namespace sedeg {

// Invalid configuration, shapes, labels, ranges. CLI exit code 2.
class ConfigError : public std::invalid_argument {
public:
    explicit ConfigError(const std::string& msg) : std::invalid_argument(msg) {}
};

// Filesystem / serialization failures. CLI exit code 3.
class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace sedeg
