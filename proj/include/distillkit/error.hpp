#pragma once

#include <stdexcept>
#include <string>

namespace distillkit {

/// Base of every error raised by the toolkit. The CLI maps ConfigError to
/// exit code 2 and everything else to 3.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

#define DISTILLKIT_DEFINE_ERROR(Name)                                          \
  class Name : public Error {                                                  \
  public:                                                                      \
    using Error::Error;                                                        \
  }

DISTILLKIT_DEFINE_ERROR(NotFoundError);
DISTILLKIT_DEFINE_ERROR(InvalidCorpusError);
DISTILLKIT_DEFINE_ERROR(InvalidArgumentError);
DISTILLKIT_DEFINE_ERROR(InvalidStateError);
DISTILLKIT_DEFINE_ERROR(WeightShapeError);
DISTILLKIT_DEFINE_ERROR(WeightFormatError);
DISTILLKIT_DEFINE_ERROR(NumericalError);
DISTILLKIT_DEFINE_ERROR(MissingFeatureError);
DISTILLKIT_DEFINE_ERROR(CacheWriteError);
DISTILLKIT_DEFINE_ERROR(CacheFormatError);
DISTILLKIT_DEFINE_ERROR(CorpusWriteError);
DISTILLKIT_DEFINE_ERROR(IoError);
DISTILLKIT_DEFINE_ERROR(ConfigError);

#undef DISTILLKIT_DEFINE_ERROR

/// Raised when a feature cache does not start with the `FCH1` magic bytes.
class CacheMagicError : public CacheFormatError {
public:
  using CacheFormatError::CacheFormatError;
};

} // namespace distillkit
