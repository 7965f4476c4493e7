#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace qcfe {

// Base for every data/contract error raised by the library. The CLI maps
// these to exit status 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define QCFE_DEFINE_ERROR(Name)            \
  class Name : public Error {              \
   public:                                 \
    using Error::Error;                    \
  };

QCFE_DEFINE_ERROR(MalformedPlan)
QCFE_DEFINE_ERROR(MissingActuals)
QCFE_DEFINE_ERROR(EmptyWorkload)
QCFE_DEFINE_ERROR(SchemaMismatch)
QCFE_DEFINE_ERROR(MissingOperatorSnapshot)
QCFE_DEFINE_ERROR(WrongOperator)
QCFE_DEFINE_ERROR(MissingCardinality)
QCFE_DEFINE_ERROR(NoFittableOperator)
QCFE_DEFINE_ERROR(UnparsableTemplate)
QCFE_DEFINE_ERROR(MissingAbstractEntry)
QCFE_DEFINE_ERROR(NonPositiveLabel)
QCFE_DEFINE_ERROR(VersionMismatch)
QCFE_DEFINE_ERROR(ShapeMismatch)
QCFE_DEFINE_ERROR(EmptyReference)
QCFE_DEFINE_ERROR(DimensionMismatch)
QCFE_DEFINE_ERROR(EmptyTestSet)
QCFE_DEFINE_ERROR(LengthMismatch)
QCFE_DEFINE_ERROR(InvalidArgument)

#undef QCFE_DEFINE_ERROR

/// One failed line of a JSONL dataset.
struct LineFailure {
  std::size_t line = 0;
  std::string message;
};

/// Raised by load_dataset when one or more lines fail and skipping is off.
class DatasetError : public Error {
 public:
  DatasetError(std::string path, std::vector<LineFailure> failures);

  const std::string& path() const { return path_; }
  const std::vector<LineFailure>& failures() const { return failures_; }

 private:
  std::string path_;
  std::vector<LineFailure> failures_;
};

/// Non-fatal diagnostics sink. Functions that can warn take an optional
/// pointer to one of these.
using Warnings = std::vector<std::string>;

inline void warn(Warnings* sink, std::string message) {
  if (sink != nullptr) sink->push_back(std::move(message));
}

}  // namespace qcfe
