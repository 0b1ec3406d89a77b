#pragma once

#include <stdexcept>

namespace compass {

/// Malformed, truncated or corrupted `.cmps` stream.
class DecodeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Unreadable input data or an unusable model/checkpoint.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace compass
