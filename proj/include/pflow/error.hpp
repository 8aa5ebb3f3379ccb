#pragma once

#include <stdexcept>
#include <string>

namespace pflow {

// Base for every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

#define PFLOW_DEFINE_ERROR(Name)            \
  class Name : public Error {               \
  public:                                   \
    explicit Name(const std::string& what)  \
        : Error(#Name ": " + what) {}       \
  }

PFLOW_DEFINE_ERROR(UnreadableFile);
PFLOW_DEFINE_ERROR(MalformedHeader);
PFLOW_DEFINE_ERROR(InvalidSpec);
PFLOW_DEFINE_ERROR(InvalidConfig);
PFLOW_DEFINE_ERROR(UnsortedTrace);
PFLOW_DEFINE_ERROR(IoError);
PFLOW_DEFINE_ERROR(SchemaMismatch);
PFLOW_DEFINE_ERROR(EmptyDataset);
PFLOW_DEFINE_ERROR(LengthMismatch);
PFLOW_DEFINE_ERROR(EmptyInput);
PFLOW_DEFINE_ERROR(EmptySide);

#undef PFLOW_DEFINE_ERROR

}  // namespace pflow
