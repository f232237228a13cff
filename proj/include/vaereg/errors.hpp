#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace vaereg {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Numeric argument outside its mathematical domain (non-positive variance,
// probability outside (0, 1), ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

// Shape mismatch or otherwise malformed argument.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

class DegenerateBatchError : public Error {
 public:
  using Error::Error;
};

// Aggregate posterior variance reached zero in some latent dimension.
class CollapseError : public DomainError {
 public:
  CollapseError(std::size_t dim, double value)
      : DomainError("posterior collapse: aggregate variance of latent dimension " +
                    std::to_string(dim) + " is " + std::to_string(value) +
                    " (must be > 0)"),
        dim_(dim) {}

  std::size_t dimension() const noexcept { return dim_; }

 private:
  std::size_t dim_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

class NonFiniteLossError : public Error {
 public:
  using Error::Error;
};

}  // namespace vaereg
