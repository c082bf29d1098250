#pragma once

#include <stdexcept>
#include <string>

namespace capsnoise {

// Each category maps onto a stable CLI exit code.
enum class ErrorKind { usage = 1, data = 2, numeric = 3 };

class Error : public std::runtime_error {
public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  [[nodiscard]] ErrorKind kind() const noexcept { return kind_; }
  [[nodiscard]] int exit_code() const noexcept { return static_cast<int>(kind_); }

private:
  ErrorKind kind_;
};

class UsageError : public Error {
public:
  explicit UsageError(const std::string& what) : Error(ErrorKind::usage, what) {}
};

class DataError : public Error {
public:
  explicit DataError(const std::string& what) : Error(ErrorKind::data, what) {}
};

class NumericError : public Error {
public:
  explicit NumericError(const std::string& what) : Error(ErrorKind::numeric, what) {}
};

// Tensor shapes that do not fit an operation's preconditions.
class ShapeError : public Error {
public:
  explicit ShapeError(const std::string& what) : Error(ErrorKind::data, what) {}
};

}  // namespace capsnoise
