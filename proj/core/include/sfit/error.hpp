#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace sfit {

enum class Errc {
  IoError,
  BadMagic,
  CountMismatch,
  TruncatedFile,
  IncompatibleChannels,
  EmptySplit,
  BatchTooLarge,
  ShapeMismatch,
  VersionUnsupported,
  MissingTensor,
  UnknownTensor,
  NonDistribution,
  EmptyBatch,
  IndexOutOfRange,
  LayerCountMismatch,
  UnlabeledData,
  HeadMismatch,
  FrozenModelViolation,
  SizeMismatch,
  InvalidConfig,
  NonFiniteValue,
};

std::string_view to_string(Errc code);

/// Every failure raised by the library carries one of the codes above; the
/// message names the offending value or path.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace sfit
