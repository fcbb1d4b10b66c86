#pragma once

#include <stdexcept>
#include <string>

namespace ldo {

/// Operand shapes do not agree.
class dimension_error : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Two point clouds that must have equal size do not.
class cardinality_error : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A precondition on an argument value was violated (ranges, empty inputs).
class argument_error : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A loss or parameter became NaN/Inf.
class numerical_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or unsupported input file.
class format_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class parse_error : public format_error {
 public:
  parse_error(const std::string& what, std::size_t line)
      : format_error(what + " (line " + std::to_string(line) + ")"), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace ldo
