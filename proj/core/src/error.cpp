#include "streamer/error.hpp"

#include <cstring>

namespace streamer {

std::string_view errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::InvalidArgument: return "invalid argument";
    case Errc::InsufficientIterations: return "insufficient iterations";
    case Errc::AlreadyExists: return "already exists";
    case Errc::TooSmall: return "too small";
    case Errc::InvalidLayout: return "invalid layout";
    case Errc::NotAPool: return "not a pool";
    case Errc::LayoutMismatch: return "layout mismatch";
    case Errc::TruncatedPool: return "truncated pool";
    case Errc::OutOfPoolMemory: return "out of pool memory";
    case Errc::RangeOutOfBounds: return "range out of bounds";
    case Errc::NestedTransaction: return "nested transaction unsupported";
    case Errc::NoActiveTransaction: return "no active transaction";
    case Errc::LogFull: return "undo log full";
    case Errc::Oversubscription: return "oversubscription unsupported";
    case Errc::UnknownCpu: return "unknown cpu";
    case Errc::UnknownNode: return "unknown node";
    case Errc::NumaBindUnavailable: return "numa bind unavailable";
    case Errc::WorkerFailure: return "worker failure";
    case Errc::Config: return "config error";
    case Errc::MissingLabel: return "missing label";
    case Errc::Io: return "i/o error";
  }
  return "unknown error";
}

namespace {

std::string config_message(const std::string& label, const std::string& key,
                           const std::string& message) {
  std::string out = "[" + (label.empty() ? std::string("<global>") : label) + "]";
  if (!key.empty()) out += " key '" + key + "'";
  out += ": " + message;
  return out;
}

}  // namespace

ConfigError::ConfigError(std::string label, std::string key, const std::string& message)
    : Error(Errc::Config, config_message(label, key, message)),
      label_(std::move(label)),
      key_(std::move(key)) {}

void throw_system_error(Errc code, const std::string& context, int err) {
  throw Error(code, context + ": " + std::strerror(err));
}

}  // namespace streamer
