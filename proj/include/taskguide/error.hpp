#pragma once

#include <stdexcept>
#include <string>

namespace taskguide {

/// Base of every error the library throws. `kind()` is a stable tag used in
/// HTTP error bodies and CLI diagnostics.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define TASKGUIDE_DEFINE_ERROR(Name, Tag)                         \
  class Name : public Error {                                     \
   public:                                                        \
    explicit Name(const std::string& what) : Error(Tag, what) {}  \
  };

TASKGUIDE_DEFINE_ERROR(SchemaError, "schema")
TASKGUIDE_DEFINE_ERROR(ValidationError, "validation")
TASKGUIDE_DEFINE_ERROR(RangeError, "range")
TASKGUIDE_DEFINE_ERROR(IoError, "io")
TASKGUIDE_DEFINE_ERROR(ParseError, "parse")
TASKGUIDE_DEFINE_ERROR(NotFoundError, "not_found")
TASKGUIDE_DEFINE_ERROR(OrderingError, "ordering")
TASKGUIDE_DEFINE_ERROR(SessionClosedError, "closed")
TASKGUIDE_DEFINE_ERROR(ConfigError, "config")
TASKGUIDE_DEFINE_ERROR(ShapeError, "shape")
TASKGUIDE_DEFINE_ERROR(DomainError, "domain")
TASKGUIDE_DEFINE_ERROR(InputError, "input")
TASKGUIDE_DEFINE_ERROR(ConsistencyError, "consistency")

#undef TASKGUIDE_DEFINE_ERROR

/// Failure reported by (or while talking to) an external backend.
class BackendError : public Error {
 public:
  explicit BackendError(const std::string& what) : Error("backend", what) {}

 protected:
  BackendError(std::string kind, const std::string& what) : Error(std::move(kind), what) {}
};

class TimeoutError : public BackendError {
 public:
  explicit TimeoutError(const std::string& what) : BackendError("timeout", what) {}
};

/// Non-2xx reply or malformed payload. `status` is 0 when no HTTP status applies.
class ProtocolError : public BackendError {
 public:
  ProtocolError(const std::string& what, int status = 0)
      : BackendError("protocol", what), status_(status) {}
  int status() const noexcept { return status_; }

 private:
  int status_;
};

}  // namespace taskguide
