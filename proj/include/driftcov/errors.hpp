#pragma once

#include <stdexcept>
#include <string>

namespace driftcov {

/// Malformed input file; carries the 1-based line number when known.
class parse_error : public std::runtime_error {
 public:
  parse_error(const std::string& msg, long line = -1)
      : std::runtime_error(line >= 0 ? msg + " (line " + std::to_string(line) + ")" : msg),
        line_(line) {}
  long line() const { return line_; }

 private:
  long line_;
};

/// Structurally valid input that violates a data invariant (duplicates, out-of-range values).
class data_error : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Degenerate input for which the requested quantity is undefined (e.g. an all-zero spectrum).
class degenerate_input_error : public std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Linear-algebra or floating-point failure that survived internal safeguards.
class numerical_error : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace driftcov
