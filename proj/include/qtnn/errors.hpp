#pragma once

#include <stdexcept>
#include <string>

namespace qtnn {

// Invalid numeric argument (non-positive energy, empty sequence, bad shape).
struct DomainError : std::domain_error {
  explicit DomainError(const std::string& what) : std::domain_error(what) {}
};

// Malformed external data (CIFAR binaries, corpus files, checkpoints).
struct FormatError : std::runtime_error {
  explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace qtnn
