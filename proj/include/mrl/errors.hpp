// Copyright 2026 The mrl Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef MRL_ERRORS_HPP_
#define MRL_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace mrl {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define MRL_DEFINE_ERROR(Name)          \
  class Name : public Error {           \
   public:                              \
    using Error::Error;                 \
  }

MRL_DEFINE_ERROR(InputShapeError);
MRL_DEFINE_ERROR(LookupError);
MRL_DEFINE_ERROR(ZeroSupportError);
MRL_DEFINE_ERROR(DivergenceUndefinedError);
MRL_DEFINE_ERROR(AlignmentRequiredError);
MRL_DEFINE_ERROR(PhaseViolationError);
MRL_DEFINE_ERROR(DuplicateRecordError);
MRL_DEFINE_ERROR(NotFoundError);
MRL_DEFINE_ERROR(InvalidMapError);
MRL_DEFINE_ERROR(ConfigError);
MRL_DEFINE_ERROR(CoverageError);
MRL_DEFINE_ERROR(PreconditionError);
MRL_DEFINE_ERROR(NumericError);

#undef MRL_DEFINE_ERROR

}  // namespace mrl

#endif  // MRL_ERRORS_HPP_
