#pragma once

#include <stdexcept>
#include <string>

namespace shapectl {

// Exit-code mapping for the CLI: ConfigError -> 2, InvariantError -> 3,
// anything else -> 1.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

class InvariantError : public std::runtime_error {
 public:
  explicit InvariantError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace shapectl
