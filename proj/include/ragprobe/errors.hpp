#pragma once

#include <stdexcept>
#include <string>

namespace ragprobe {

// Bad experiment/model configuration (CLI exit code 1).
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad input data: corpus files, weight containers, tokenizer assets (CLI exit code 2).
class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace ragprobe
