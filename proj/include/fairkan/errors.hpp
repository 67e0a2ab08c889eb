#pragma once

#include <stdexcept>
#include <string>

namespace fairkan {

/// Base of every error raised by the library. `kind()` is a short stable tag.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define FAIRKAN_DEFINE_ERROR(Name, tag)                                  \
  class Name : public Error {                                            \
   public:                                                               \
    explicit Name(const std::string& what) : Error(tag, what) {}         \
  };

FAIRKAN_DEFINE_ERROR(ConfigError, "config")
FAIRKAN_DEFINE_ERROR(ShapeError, "shape")
FAIRKAN_DEFINE_ERROR(DataError, "data")
FAIRKAN_DEFINE_ERROR(SchemaError, "schema")
FAIRKAN_DEFINE_ERROR(FormatError, "format")
FAIRKAN_DEFINE_ERROR(UsageError, "usage")
FAIRKAN_DEFINE_ERROR(RefinementError, "refinement")
FAIRKAN_DEFINE_ERROR(UnsupportedDerivativeError, "unsupported-derivative")

#undef FAIRKAN_DEFINE_ERROR

/// Non-finite or exploding values during training or optimization.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what, int epoch = -1)
      : Error("numeric", what), epoch_(epoch) {}
  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

}  // namespace fairkan
