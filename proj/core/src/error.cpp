#include "factsum/error.hpp"

namespace factsum {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidInput:
      return "invalid_input";
    case ErrorKind::kIo:
      return "io";
    case ErrorKind::kConfig:
      return "config";
    case ErrorKind::kNumeric:
      return "numeric";
    case ErrorKind::kPrecondition:
      return "precondition";
  }
  return "unknown";
}

}  // namespace factsum
