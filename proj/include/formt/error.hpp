#pragma once

#include <stdexcept>
#include <string>

namespace formt {

// Base of every error raised by the library. The CLI maps these to exit code 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* kind() const noexcept { return "Error"; }
};

#define FORMT_DEFINE_ERROR(Name)              \
  class Name : public Error {                 \
   public:                                    \
    using Error::Error;                       \
    const char* kind() const noexcept override { return #Name; } \
  }

FORMT_DEFINE_ERROR(DecodingError);        // invalid UTF-8
FORMT_DEFINE_ERROR(MalformedCommandError);
FORMT_DEFINE_ERROR(MalformedSymbolError);
FORMT_DEFINE_ERROR(CapacityError);        // more than 32 distinct numbers
FORMT_DEFINE_ERROR(UnresolvedTagError);
FORMT_DEFINE_ERROR(ParseError);
FORMT_DEFINE_ERROR(SchemaError);
FORMT_DEFINE_ERROR(ConfigError);
FORMT_DEFINE_ERROR(EncodingError);        // id out of range
FORMT_DEFINE_ERROR(LengthError);
FORMT_DEFINE_ERROR(DegenerateBatchError);
FORMT_DEFINE_ERROR(BatchingError);
FORMT_DEFINE_ERROR(NumericError);
FORMT_DEFINE_ERROR(InputError);
FORMT_DEFINE_ERROR(UndefinedMetricError);
FORMT_DEFINE_ERROR(CheckpointError);
FORMT_DEFINE_ERROR(HarnessError);

#undef FORMT_DEFINE_ERROR

}  // namespace formt
