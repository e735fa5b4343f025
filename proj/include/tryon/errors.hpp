#pragma once

#include <stdexcept>
#include <string>

namespace tryon {

struct InvalidArgument : std::invalid_argument {
    explicit InvalidArgument(const std::string& msg) : std::invalid_argument(msg) {}
};

struct NumericFailure : std::runtime_error {
    int timestep = -1;
    explicit NumericFailure(const std::string& msg, int t = -1)
        : std::runtime_error(t >= 0 ? msg + " (timestep " + std::to_string(t) + ")" : msg),
          timestep(t) {}
};

struct IoFailure : std::runtime_error {
    explicit IoFailure(const std::string& msg) : std::runtime_error(msg) {}
};

struct DegenerateConfiguration : std::runtime_error {
    explicit DegenerateConfiguration(const std::string& msg) : std::runtime_error(msg) {}
};

struct UnsupportedDenoiser : std::runtime_error {
    explicit UnsupportedDenoiser(const std::string& msg) : std::runtime_error(msg) {}
};

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

#define TRYON_CHECK(cond, msg)                         \
    do {                                               \
        if (!(cond)) throw ::tryon::InvalidArgument(msg); \
    } while (0)

}  // namespace tryon
