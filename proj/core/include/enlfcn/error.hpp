#pragma once

#include <stdexcept>
#include <string>

namespace enlfcn {

/// Failure classes surfaced to callers. The CLI maps each to a distinct exit code.
enum class ErrorKind { config, format, resource, numeric, usage, split, undefined };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& w) : Error(ErrorKind::config, w) {}
};
struct FormatError : Error {
  explicit FormatError(const std::string& w) : Error(ErrorKind::format, w) {}
};
struct ResourceError : Error {
  explicit ResourceError(const std::string& w) : Error(ErrorKind::resource, w) {}
};
struct NumericError : Error {
  explicit NumericError(const std::string& w) : Error(ErrorKind::numeric, w) {}
};
struct UsageError : Error {
  explicit UsageError(const std::string& w) : Error(ErrorKind::usage, w) {}
};
struct SplitError : Error {
  explicit SplitError(const std::string& w) : Error(ErrorKind::split, w) {}
};
struct UndefinedValueError : Error {
  explicit UndefinedValueError(const std::string& w) : Error(ErrorKind::undefined, w) {}
};

const char* to_string(ErrorKind kind) noexcept;

}  // namespace enlfcn
