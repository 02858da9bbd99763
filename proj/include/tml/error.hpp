#pragma once

#include <stdexcept>
#include <string>

namespace tml {

enum class ErrorKind {
  usage,
  config,
  dimension,
  index,
  domain,
  numerical,
  data,
  integrity,
  protocol,
  structural,
};

// Base of every error raised by the library. The kind decides the CLI exit code.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define TML_DEFINE_ERROR(Name, Kind)                                   \
  class Name : public Error {                                          \
   public:                                                             \
    explicit Name(const std::string& what) : Error(ErrorKind::Kind, what) {} \
  };

TML_DEFINE_ERROR(UsageError, usage)
TML_DEFINE_ERROR(ConfigError, config)
TML_DEFINE_ERROR(DimensionError, dimension)
TML_DEFINE_ERROR(IndexError, index)
TML_DEFINE_ERROR(DomainError, domain)
TML_DEFINE_ERROR(NumericalError, numerical)
TML_DEFINE_ERROR(DataError, data)
TML_DEFINE_ERROR(IntegrityError, integrity)
TML_DEFINE_ERROR(ProtocolError, protocol)
TML_DEFINE_ERROR(StructuralError, structural)

#undef TML_DEFINE_ERROR

// 0 success, 1 usage, 2 data/integrity, 3 numerical failure.
inline int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::usage:
    case ErrorKind::config:
      return 1;
    case ErrorKind::domain:
    case ErrorKind::numerical:
      return 3;
    default:
      return 2;
  }
}

}  // namespace tml
