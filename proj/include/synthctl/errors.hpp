#pragma once

#include <stdexcept>
#include <string>

namespace synthctl {

// All library failures derive from Error and carry a stable machine-readable
// kind string, which the CLI prints as `error kind=<Kind> ...` on exit 1.
class Error : public std::runtime_error {
public:
  Error(std::string kind, const std::string& msg)
      : std::runtime_error(msg), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

private:
  std::string kind_;
};

#define SYNTHCTL_ERROR(Name)                                        \
  class Name : public Error {                                       \
  public:                                                           \
    explicit Name(const std::string& msg) : Error(#Name, msg) {}    \
  }

SYNTHCTL_ERROR(ParseError);
SYNTHCTL_ERROR(DuplicateError);
SYNTHCTL_ERROR(EmptyInputError);
SYNTHCTL_ERROR(InvalidParameter);
SYNTHCTL_ERROR(MetadataError);
SYNTHCTL_ERROR(MetricError);
SYNTHCTL_ERROR(EmptyAlignmentError);
SYNTHCTL_ERROR(RangeError);
SYNTHCTL_ERROR(EmptyDonorError);
SYNTHCTL_ERROR(DegenerateInputError);
SYNTHCTL_ERROR(InsufficientPretreatmentError);
SYNTHCTL_ERROR(DegenerateModelError);
SYNTHCTL_ERROR(GroupingError);
SYNTHCTL_ERROR(StabilityError);
SYNTHCTL_ERROR(UndefinedReductionError);

#undef SYNTHCTL_ERROR

}  // namespace synthctl
