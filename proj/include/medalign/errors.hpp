#pragma once

#include <stdexcept>
#include <string>

namespace medalign {

// Base for every error raised by the library. Callers that only care about
// "something in medalign failed" can catch this one type.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class UnmappedClassError : public Error {
public:
  explicit UnmappedClassError(const std::string& class_name)
      : Error("unmapped class name: '" + class_name + "'"), class_name_(class_name) {}
  const std::string& class_name() const noexcept { return class_name_; }

private:
  std::string class_name_;
};

class DegenerateLabelError : public Error {
public:
  using Error::Error;
};

class InsufficientDataError : public Error {
public:
  using Error::Error;
};

class ShapeError : public Error {
public:
  using Error::Error;
};

class EmptyInputError : public Error {
public:
  using Error::Error;
};

class ContractViolation : public Error {
public:
  using Error::Error;
};

class ConfigError : public Error {
public:
  using Error::Error;
};

class RangeError : public Error {
public:
  using Error::Error;
};

class IoError : public Error {
public:
  IoError(const std::string& what, const std::string& path)
      : Error(what + ": " + path), path_(path) {}
  const std::string& path() const noexcept { return path_; }

private:
  std::string path_;
};

class NumericalError : public Error {
public:
  using Error::Error;
};

class FrozenParameterDrift : public Error {
public:
  using Error::Error;
};

class FormatError : public Error {
public:
  using Error::Error;
};

}  // namespace medalign
