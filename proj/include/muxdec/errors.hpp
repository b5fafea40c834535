#pragma once

#include <stdexcept>
#include <string>

namespace muxdec {

/// Invalid static configuration (model dimensions, special token ids).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Caller broke an API contract (unknown position, segment kind conflict,
/// foreign snapshot, mismatched widths).
class ContractError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed runtime input (empty vector, non-finite values, bad distribution).
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A trace file failed to parse or validate.
class TraceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace muxdec
