#pragma once

#include <stdexcept>
#include <string>

namespace sgee {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A value fell outside the admissible domain of a family, link or
/// correlation parameter.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Inconsistent or unresolvable data / model specification.
class DesignError : public Error {
 public:
  using Error::Error;
};

class SingularityError : public Error {
 public:
  using Error::Error;
};

/// Fisher scoring produced non-finite values or could not stay inside the
/// support of the family.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

class ExtrapolationError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

}  // namespace sgee
