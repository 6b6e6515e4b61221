// errors.hpp — exception taxonomy shared by all modules.
#pragma once

#include <stdexcept>
#include <string>

namespace chaoscope {

// Base for everything thrown by this library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad configuration, bad file, bad shapes: operator error, exit code 2 in the CLI.
struct ConfigError : Error {
    using Error::Error;
};

// Numerics went wrong at runtime (blow-up, degenerate bases): exit code 1 in the CLI.
struct NumericError : Error {
    explicit NumericError(const std::string& msg, long long step = -1)
        : Error(step >= 0 ? msg + " (step " + std::to_string(step) + ")" : msg), step_index(step) {}
    long long step_index = -1;
};

}  // namespace chaoscope
