#pragma once

#include <optional>
#include <stdexcept>
#include <string>

namespace spherecar {

/// Base class for every error raised by the library.
///
/// Errors raised while integrating along a trajectory carry the arc-length
/// station at which they occurred; what() includes it once attached.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& message) : std::runtime_error(message), text_(message) {}

  const char* what() const noexcept override { return text_.c_str(); }

  std::optional<double> station() const { return station_; }

  /// Records the station if none is attached yet.
  void attachStation(double station) {
    if (station_) {
      return;
    }
    station_ = station;
    text_ = "at s_d = " + std::to_string(station) + ": " + text_;
  }

 private:
  std::string text_;
  std::optional<double> station_;
};

/// A numeric precondition was violated (non-unit axis, off-sphere point, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Matrix expected to be skew-symmetric is not.
class SymmetryViolation : public DomainError {
 public:
  using DomainError::DomainError;
};

/// Matrix expected to be a rotation is not.
class NotARotation : public DomainError {
 public:
  using DomainError::DomainError;
};

/// Logarithm requested outside its principal branch (angle near pi).
class BranchError : public DomainError {
 public:
  using DomainError::DomainError;
};

/// Position at the south pole, where the meridian construction is undefined.
class PoleSingularity : public DomainError {
 public:
  using DomainError::DomainError;
};

/// Vehicle and reference are antipodal; the error great circle is undefined.
class AntipodalError : public DomainError {
 public:
  using DomainError::DomainError;
};

/// Controller denominators vanish outside the zero-error limit region.
class SingularConfiguration : public Error {
 public:
  using Error::Error;
};

/// No admissible steering solves the imposed misalignment dynamics.
class InfeasibleSteering : public Error {
 public:
  using Error::Error;
};

/// Requested observer poles cannot be realised by the gain structure.
class PlacementError : public Error {
 public:
  using Error::Error;
};

/// Observer error left the local regime the linear design is valid in.
class OutOfRegime : public Error {
 public:
  using Error::Error;
};

/// Invalid or unreadable scenario configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace spherecar
