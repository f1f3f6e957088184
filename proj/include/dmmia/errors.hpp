#ifndef DMMIA_ERRORS_HPP
#define DMMIA_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace dmmia {

// Base class for everything this library throws on purpose.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Incompatible tensor/matrix shapes; message names the op and both shapes.
struct ShapeError : Error {
  using Error::Error;
};

// NaN/Inf appeared, an eigensolver failed to converge, a quantity left its
// numerical domain (negative eigenvalue beyond tolerance, zero norm, ...).
struct NumericalError : Error {
  using Error::Error;
};

// A precondition or API contract was violated by the caller.
struct ContractError : Error {
  using Error::Error;
};

// Malformed input bytes: IDX files, checkpoints, CSV.
struct ParseError : Error {
  using Error::Error;
};

// Bad or inconsistent configuration (unknown keys, invalid values).
struct ConfigError : Error {
  using Error::Error;
};

// Filesystem failures: missing file, unwritable directory, short read.
struct IoError : Error {
  using Error::Error;
};

}  // namespace dmmia

#endif
