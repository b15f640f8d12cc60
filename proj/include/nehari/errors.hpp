#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace nehari {

/// Machine-readable error classes. The CLI prints the class name and maps
/// each to a distinct exit status.
enum class ErrorClass {
  InfeasibleGeometry,
  MeshQualityFailure,
  MorphFoldover,
  DomainError,
  NonFiniteValue,
  MissingBoundary,
  ZeroField,
  BracketFailure,
  NotNodal,
  NoConvergence,
  UnsupportedDomain,
  ConfigError,
};

constexpr std::string_view toString(ErrorClass c) {
  switch (c) {
    case ErrorClass::InfeasibleGeometry: return "InfeasibleGeometry";
    case ErrorClass::MeshQualityFailure: return "MeshQualityFailure";
    case ErrorClass::MorphFoldover: return "MorphFoldover";
    case ErrorClass::DomainError: return "DomainError";
    case ErrorClass::NonFiniteValue: return "NonFiniteValue";
    case ErrorClass::MissingBoundary: return "MissingBoundary";
    case ErrorClass::ZeroField: return "ZeroField";
    case ErrorClass::BracketFailure: return "BracketFailure";
    case ErrorClass::NotNodal: return "NotNodal";
    case ErrorClass::NoConvergence: return "NoConvergence";
    case ErrorClass::UnsupportedDomain: return "UnsupportedDomain";
    case ErrorClass::ConfigError: return "ConfigError";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorClass cls, const std::string& what)
      : std::runtime_error(std::string(toString(cls)) + ": " + what), cls_(cls) {}

  ErrorClass errorClass() const noexcept { return cls_; }

 private:
  ErrorClass cls_;
};

[[noreturn]] inline void fail(ErrorClass cls, const std::string& what) {
  throw Error(cls, what);
}

}  // namespace nehari
