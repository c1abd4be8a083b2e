#pragma once

#include <stdexcept>
#include <string>

namespace cost {

// Exit-code contract used by the CLI: 2 config, 3 I/O, 4 divergence, 5 oracle.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& m) : std::runtime_error(m) {}
};
struct IoError : std::runtime_error {
  explicit IoError(const std::string& m) : std::runtime_error(m) {}
};
struct DivergenceError : std::runtime_error {
  explicit DivergenceError(const std::string& m) : std::runtime_error(m) {}
};
struct OracleError : std::runtime_error {
  explicit OracleError(const std::string& m) : std::runtime_error(m) {}
};

}  // namespace cost
