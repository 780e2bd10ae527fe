#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace streamer {

enum class Errc {
  InvalidArgument,
  InsufficientIterations,
  AlreadyExists,
  TooSmall,
  InvalidLayout,
  NotAPool,
  LayoutMismatch,
  TruncatedPool,
  OutOfPoolMemory,
  RangeOutOfBounds,
  NestedTransaction,
  NoActiveTransaction,
  LogFull,
  Oversubscription,
  UnknownCpu,
  UnknownNode,
  NumaBindUnavailable,
  WorkerFailure,
  Config,
  MissingLabel,
  Io,
};

std::string_view errc_name(Errc code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what) : std::runtime_error(what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

/// Configuration problem tied to one config section and key.
class ConfigError : public Error {
 public:
  ConfigError(std::string label, std::string key, const std::string& message);

  const std::string& label() const noexcept { return label_; }
  const std::string& key() const noexcept { return key_; }

 private:
  std::string label_;
  std::string key_;
};

[[noreturn]] void throw_system_error(Errc code, const std::string& context, int err);

}  // namespace streamer
