#pragma once

#include <stdexcept>
#include <string>

namespace lmt {

// Process exit codes shared by every CLI entry point.
enum class ExitCode : int { ok = 0, config = 2, io = 3, numeric = 4 };

class Error : public std::runtime_error {
 public:
  Error(ExitCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ExitCode code() const noexcept { return code_; }

 private:
  ExitCode code_;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& what) : Error(ExitCode::config, what) {}
};

// Bad call arguments: shape mismatch, wrong arity, degenerate boxes.
struct InputError : Error {
  explicit InputError(const std::string& what) : Error(ExitCode::config, what) {}
};

// An operation called in a mode that does not support it.
struct UsageError : Error {
  explicit UsageError(const std::string& what) : Error(ExitCode::config, what) {}
};

struct IoError : Error {
  explicit IoError(const std::string& what) : Error(ExitCode::io, what) {}
};

struct NumericError : Error {
  explicit NumericError(const std::string& what) : Error(ExitCode::numeric, what) {}
};

}  // namespace lmt
