#pragma once

#include <complex>
#include <stdexcept>
#include <string>
#include <vector>

namespace vsa {

using Complex = std::complex<double>;

/// Base class for all errors raised by the engine.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Malformed case text. Carries the 1-based line and the offending field.
class ParseError : public Error {
  public:
    ParseError(int line, std::string field, const std::string& what)
        : Error("line " + std::to_string(line) + " (" + field + "): " + what),
          line_(line),
          field_(std::move(field)) {}

    int line() const noexcept { return line_; }
    const std::string& field() const noexcept { return field_; }

  private:
    int line_;
    std::string field_;
};

/// A model or configuration violates one of its invariants.
class ValidationError : public Error {
  public:
    using Error::Error;
};

/// Network split into several islands (after an outage, typically).
class IslandingError : public Error {
  public:
    IslandingError(std::vector<int> buses, const std::string& what)
        : Error(what), buses_(std::move(buses)) {}
    const std::vector<int>& buses() const noexcept { return buses_; }

  private:
    std::vector<int> buses_;
};

/// Linear system could not be factored; the operating point is at or past the nose.
class SingularJacobianError : public Error {
  public:
    using Error::Error;
};

}  // namespace vsa
