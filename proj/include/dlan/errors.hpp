#ifndef DLAN_ERRORS_HPP_
#define DLAN_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace dlan {

// Bad sizes or rank/extent disagreement between operands.
struct DimensionError : std::runtime_error {
  explicit DimensionError(const std::string& what) : std::runtime_error(what) {}
};

// Invalid argument value (non-positive dilation, empty tower list, ...).
struct ArgumentError : std::runtime_error {
  explicit ArgumentError(const std::string& what) : std::runtime_error(what) {}
};

// Attempt to invert a (near-)singular linear block; carries the determinant.
struct SingularityError : std::runtime_error {
  double det;
  explicit SingularityError(double d)
      : std::runtime_error("singular affine linear block, det = " + std::to_string(d)),
        det(d) {}
};

// Malformed or corrupted on-disk data (manifest, blob, checkpoint).
struct FormatError : std::runtime_error {
  explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

// Inconsistent model/train configuration.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Non-finite value where a finite one is required (training divergence).
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

// Operation needs data that is degenerate (no visible landmarks, empty split).
struct DegenerateInputError : std::runtime_error {
  explicit DegenerateInputError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace dlan

#endif  // DLAN_ERRORS_HPP_
