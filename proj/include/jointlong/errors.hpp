#pragma once

#include <stdexcept>
#include <string>

namespace jointlong {

// Invalid model/config combination, unknown keys, bad recipe names.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input data (ordering, lengths, non-numeric fields).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Value outside the domain of a density or a failed factorization.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace jointlong
