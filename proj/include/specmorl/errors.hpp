#pragma once

#include <stdexcept>
#include <string>

namespace specmorl {

// Base for every error raised by the library. Each subclass names one failure
// mode; callers that only care about "something went wrong" catch Error.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define SPECMORL_DEFINE_ERROR(Name)          \
  class Name : public Error {                \
   public:                                   \
    using Error::Error;                      \
  }

SPECMORL_DEFINE_ERROR(LexError);
SPECMORL_DEFINE_ERROR(ParseError);
SPECMORL_DEFINE_ERROR(IndexError);
SPECMORL_DEFINE_ERROR(ConfigError);
SPECMORL_DEFINE_ERROR(EpisodeOver);
SPECMORL_DEFINE_ERROR(DegenerateSpec);
SPECMORL_DEFINE_ERROR(EmptySequence);
SPECMORL_DEFINE_ERROR(ShapeError);
SPECMORL_DEFINE_ERROR(NoTape);
SPECMORL_DEFINE_ERROR(BufferTooSmall);
SPECMORL_DEFINE_ERROR(CheckpointError);
SPECMORL_DEFINE_ERROR(EmptyCurriculum);
SPECMORL_DEFINE_ERROR(GenerationStall);
SPECMORL_DEFINE_ERROR(NumericError);

#undef SPECMORL_DEFINE_ERROR

}  // namespace specmorl
