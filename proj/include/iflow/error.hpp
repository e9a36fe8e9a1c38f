#pragma once

#include <stdexcept>
#include <string>

namespace iflow {

// Error categories map onto CLI exit codes: config/usage -> 1,
// filesystem/format -> 2, numeric failures -> 3.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace iflow
