#pragma once

#include <stdexcept>
#include <string>

namespace c4v {

/// Malformed or truncated binary container (checkpoint, segment cache, WAV).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller-side precondition that is not an argument error, e.g. a forward
/// closure that is not deterministic under gradient checking.
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

} // namespace c4v
