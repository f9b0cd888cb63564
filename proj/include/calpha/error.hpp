#pragma once

#include <stdexcept>
#include <string>

namespace calpha {

/// Broad failure classes; the CLI maps these onto exit codes.
enum class ErrorKind { Usage, Data, Numerical };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// Argument outside the mathematical domain of a function.
class DomainError : public Error {
 public:
  explicit DomainError(const std::string& what) : Error(ErrorKind::Numerical, what) {}
};

// Malformed or inconsistent input (dimensions, non-finite entries, too few points).
class InputError : public Error {
 public:
  explicit InputError(const std::string& what) : Error(ErrorKind::Data, what) {}
};

class SingularityError : public Error {
 public:
  explicit SingularityError(const std::string& what) : Error(ErrorKind::Numerical, what) {}
};

class CollinearityError : public Error {
 public:
  explicit CollinearityError(const std::string& what) : Error(ErrorKind::Numerical, what) {}
};

class ConditioningError : public Error {
 public:
  explicit ConditioningError(const std::string& what) : Error(ErrorKind::Numerical, what) {}
};

class LeverageError : public Error {
 public:
  LeverageError(const std::string& what, long observation)
      : Error(ErrorKind::Numerical, what), observation_(observation) {}
  long observation() const noexcept { return observation_; }

 private:
  long observation_;
};

class DegenerateVarianceError : public Error {
 public:
  explicit DegenerateVarianceError(const std::string& what) : Error(ErrorKind::Numerical, what) {}
};

class SchemaError : public Error {
 public:
  explicit SchemaError(const std::string& what) : Error(ErrorKind::Data, what) {}
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, long row, long column)
      : Error(ErrorKind::Data, what), row_(row), column_(column) {}
  long row() const noexcept { return row_; }
  long column() const noexcept { return column_; }

 private:
  long row_;
  long column_;
};

class MissingDataError : public Error {
 public:
  explicit MissingDataError(const std::string& what) : Error(ErrorKind::Data, what) {}
};

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error(ErrorKind::Usage, what) {}
};

}  // namespace calpha
