#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace factsum {

// Coarse error categories. The CLI prints them as the machine-parsable
// prefix of its one-line diagnostic.
enum class ErrorKind {
  kInvalidInput,  // malformed or inconsistent input data
  kIo,            // missing or unreadable/unwritable file
  kConfig,        // rejected configuration
  kNumeric,       // non-finite values, divergence
  kPrecondition,  // operation called outside its contract
};

std::string_view to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace factsum
