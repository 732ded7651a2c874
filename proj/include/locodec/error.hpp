#pragma once

#include <stdexcept>
#include <string>

namespace locodec {

// Base of every error raised by the library. Subclasses name the failure
// category; the CLI maps input-side categories to exit code 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define LOCODEC_ERROR(Name)           \
  class Name : public Error {         \
   public:                            \
    using Error::Error;               \
  };

LOCODEC_ERROR(FormatError)
LOCODEC_ERROR(IntegrityError)
LOCODEC_ERROR(ArgumentError)
LOCODEC_ERROR(ShapeError)
LOCODEC_ERROR(SplitError)
LOCODEC_ERROR(UnsupportedRateError)
LOCODEC_ERROR(DesignError)
LOCODEC_ERROR(UndefinedCorrelationError)
LOCODEC_ERROR(DegenerateDataError)
LOCODEC_ERROR(FitError)
LOCODEC_ERROR(DivergenceError)
LOCODEC_ERROR(LoadError)
LOCODEC_ERROR(SpecMismatchError)
LOCODEC_ERROR(PlanError)
LOCODEC_ERROR(ConfigError)

#undef LOCODEC_ERROR

}  // namespace locodec
