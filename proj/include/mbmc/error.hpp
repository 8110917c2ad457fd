#pragma once

#include <stdexcept>
#include <string>

namespace mbmc {

// Every failure the library raises derives from Error; the kind lets the
// gateway map exceptions onto HTTP status codes without string matching.
enum class ErrorKind {
  Argument,
  Validation,
  Parse,
  Io,
  EmptyMask,
  UnknownActivity,
  InsufficientClass,
  DuplicateId,
  Numeric,
  Config,
  Protocol,
  Timeout,
  Backend,
  NotFound,
  Payload,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Argument: return "argument";
    case ErrorKind::Validation: return "validation";
    case ErrorKind::Parse: return "parse";
    case ErrorKind::Io: return "io";
    case ErrorKind::EmptyMask: return "empty_mask";
    case ErrorKind::UnknownActivity: return "unknown_activity";
    case ErrorKind::InsufficientClass: return "insufficient_class";
    case ErrorKind::DuplicateId: return "duplicate_id";
    case ErrorKind::Numeric: return "numeric";
    case ErrorKind::Config: return "config";
    case ErrorKind::Protocol: return "protocol";
    case ErrorKind::Timeout: return "timeout";
    case ErrorKind::Backend: return "backend";
    case ErrorKind::NotFound: return "not_found";
    case ErrorKind::Payload: return "payload";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define MBMC_DEFINE_ERROR(Name, Kind)                                   \
  class Name : public Error {                                           \
   public:                                                              \
    explicit Name(const std::string& what) : Error(ErrorKind::Kind, what) {} \
  };

MBMC_DEFINE_ERROR(ArgumentError, Argument)
MBMC_DEFINE_ERROR(ValidationError, Validation)
MBMC_DEFINE_ERROR(IoError, Io)
MBMC_DEFINE_ERROR(EmptyMaskError, EmptyMask)
MBMC_DEFINE_ERROR(NumericError, Numeric)
MBMC_DEFINE_ERROR(ConfigError, Config)
MBMC_DEFINE_ERROR(TimeoutError, Timeout)
MBMC_DEFINE_ERROR(NotFoundError, NotFound)
MBMC_DEFINE_ERROR(PayloadError, Payload)

#undef MBMC_DEFINE_ERROR

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line = 0)
      : Error(ErrorKind::Parse,
              line ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class UnknownActivityError : public Error {
 public:
  explicit UnknownActivityError(std::string activity)
      : Error(ErrorKind::UnknownActivity,
              "activity '" + activity + "' not present in manifold"),
        activity_(std::move(activity)) {}

  const std::string& activity() const noexcept { return activity_; }

 private:
  std::string activity_;
};

class InsufficientClassError : public Error {
 public:
  InsufficientClassError(std::string activity, std::size_t have, std::size_t need)
      : Error(ErrorKind::InsufficientClass,
              "activity class '" + activity + "' has " + std::to_string(have) +
                  " entries, need " + std::to_string(need)),
        activity_(std::move(activity)) {}

  const std::string& activity() const noexcept { return activity_; }

 private:
  std::string activity_;
};

class DuplicateIdError : public Error {
 public:
  explicit DuplicateIdError(const std::string& id)
      : Error(ErrorKind::DuplicateId, "duplicate entry id '" + id + "'") {}
};

class ProtocolError : public Error {
 public:
  ProtocolError(std::string field, const std::string& detail)
      : Error(ErrorKind::Protocol,
              "protocol error at field '" + field + "': " + detail),
        field_(std::move(field)) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

// Failure reported by (or while talking to) a model backend. `role` names
// which backend role failed so pipeline errors stay attributable.
class BackendError : public Error {
 public:
  BackendError(std::string role, const std::string& what)
      : Error(ErrorKind::Backend, role + " backend: " + what),
        role_(std::move(role)) {}

  const std::string& role() const noexcept { return role_; }

 private:
  std::string role_;
};

}  // namespace mbmc
