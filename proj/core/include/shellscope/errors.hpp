#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace shellscope {

// Malformed or inconsistent input data (bad record, schema mismatch, ...).
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& msg, std::size_t line_no = 0)
      : std::runtime_error(line_no ? msg + " (line " + std::to_string(line_no) + ")" : msg),
        line_no_(line_no) {}
  std::size_t line_no() const { return line_no_; }

 private:
  std::size_t line_no_;
};

// A file written by a newer schema than this build understands.
class SchemaVersionError : public DataError {
 public:
  SchemaVersionError(int found, int supported, std::size_t line_no = 0)
      : DataError("unsupported schema version " + std::to_string(found) +
                      " (this build supports up to " + std::to_string(supported) + ")",
                  line_no),
        found_(found) {}
  int found() const { return found_; }

 private:
  int found_;
};

// Numeric failure: divergence, non-finite values, ill-conditioned inputs.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace shellscope
