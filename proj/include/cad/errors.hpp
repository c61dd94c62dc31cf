#ifndef CAD_ERRORS_HPP
#define CAD_ERRORS_HPP

#include <stdexcept>
#include <string>
#include <string_view>

namespace cad {

enum class ErrorKind {
  Argument,
  Config,
  Io,
  Precondition,
  NotFound,
  UndefinedMetric,
  Normalization,
  Format,
  Divergence,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Argument: return "argument";
    case ErrorKind::Config: return "config";
    case ErrorKind::Io: return "io";
    case ErrorKind::Precondition: return "precondition";
    case ErrorKind::NotFound: return "not_found";
    case ErrorKind::UndefinedMetric: return "undefined_metric";
    case ErrorKind::Normalization: return "normalization";
    case ErrorKind::Format: return "format";
    case ErrorKind::Divergence: return "divergence";
  }
  return "unknown";
}

/// Base of every error raised by the library. The kind doubles as the
/// machine-parsable category the CLI prints on failure.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define CAD_DEFINE_ERROR(Name, Kind)                                        \
  class Name : public Error {                                               \
   public:                                                                  \
    explicit Name(const std::string& what) : Error(ErrorKind::Kind, what) {} \
  };

CAD_DEFINE_ERROR(ArgumentError, Argument)
CAD_DEFINE_ERROR(ConfigError, Config)
CAD_DEFINE_ERROR(IoError, Io)
CAD_DEFINE_ERROR(PreconditionError, Precondition)
CAD_DEFINE_ERROR(NotFoundError, NotFound)
CAD_DEFINE_ERROR(UndefinedMetricError, UndefinedMetric)
CAD_DEFINE_ERROR(NormalizationError, Normalization)
CAD_DEFINE_ERROR(FormatError, Format)
CAD_DEFINE_ERROR(DivergenceError, Divergence)

#undef CAD_DEFINE_ERROR

}  // namespace cad

#endif  // CAD_ERRORS_HPP
