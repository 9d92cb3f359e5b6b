#pragma once

#include <stdexcept>
#include <string>

namespace dcnpd {

// Shape and precondition violations surface as std::invalid_argument.
// The types below cover the remaining failure classes.

/// A required column is absent from a CSV header or a JSON document.
class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input parsed but violates a domain rule (e.g. a treatment value of 2).
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A cell could not be read as a number.
class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t row, std::size_t col, const std::string& what)
      : std::runtime_error("row " + std::to_string(row) + ", column " + std::to_string(col) + ": " +
                           what),
        row_(row),
        col_(col) {}

  std::size_t row() const noexcept { return row_; }
  std::size_t col() const noexcept { return col_; }

 private:
  std::size_t row_;
  std::size_t col_;
};

/// A loss or gradient became NaN/Inf.
class NumericFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace dcnpd
