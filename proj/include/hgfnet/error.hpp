#pragma once

#include <stdexcept>
#include <string>

namespace hgf {

enum class ErrorKind { shape, domain, tape, config, data, format, usage };

inline const char* error_kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::shape: return "ShapeError";
    case ErrorKind::domain: return "DomainError";
    case ErrorKind::tape: return "TapeError";
    case ErrorKind::config: return "ConfigError";
    case ErrorKind::data: return "DataError";
    case ErrorKind::format: return "FormatError";
    case ErrorKind::usage: return "UsageError";
  }
  return "Error";
}

// Base of every error the library raises. `kind()` is what the CLI maps to an
// exit code, so callers never need to dynamic_cast.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }
  const char* kind_name() const noexcept { return error_kind_name(kind_); }

 private:
  ErrorKind kind_;
};

#define HGF_DEFINE_ERROR(Name, Kind)                                   \
  class Name : public Error {                                          \
   public:                                                             \
    explicit Name(const std::string& what) : Error(Kind, what) {}      \
  };

HGF_DEFINE_ERROR(ShapeError, ErrorKind::shape)
HGF_DEFINE_ERROR(DomainError, ErrorKind::domain)
HGF_DEFINE_ERROR(TapeError, ErrorKind::tape)
HGF_DEFINE_ERROR(ConfigError, ErrorKind::config)
HGF_DEFINE_ERROR(DataError, ErrorKind::data)
HGF_DEFINE_ERROR(FormatError, ErrorKind::format)
HGF_DEFINE_ERROR(UsageError, ErrorKind::usage)

#undef HGF_DEFINE_ERROR

}  // namespace hgf
