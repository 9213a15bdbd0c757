#pragma once

#include <stdexcept>
#include <string>

namespace headliner {

// Error categories map onto CLI exit codes: validation-type failures exit 3,
// numerical faults exit 4.
class ParseError : public std::runtime_error {
public:
  ParseError(const std::string& what, std::size_t line)
      : std::runtime_error(what + " (line " + std::to_string(line) + ")"), line_(line) {}
  std::size_t line() const { return line_; }

private:
  std::size_t line_;
};

class ValidationError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class ContractError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class NumericError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

}  // namespace headliner
