#include "sfit/error.hpp"

#include "sfit/tensor.hpp"

namespace sfit {

std::string_view to_string(Errc code) {
  switch (code) {
    case Errc::IoError: return "IoError";
    case Errc::BadMagic: return "BadMagic";
    case Errc::CountMismatch: return "CountMismatch";
    case Errc::TruncatedFile: return "TruncatedFile";
    case Errc::IncompatibleChannels: return "IncompatibleChannels";
    case Errc::EmptySplit: return "EmptySplit";
    case Errc::BatchTooLarge: return "BatchTooLarge";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::VersionUnsupported: return "VersionUnsupported";
    case Errc::MissingTensor: return "MissingTensor";
    case Errc::UnknownTensor: return "UnknownTensor";
    case Errc::NonDistribution: return "NonDistribution";
    case Errc::EmptyBatch: return "EmptyBatch";
    case Errc::IndexOutOfRange: return "IndexOutOfRange";
    case Errc::LayerCountMismatch: return "LayerCountMismatch";
    case Errc::UnlabeledData: return "UnlabeledData";
    case Errc::HeadMismatch: return "HeadMismatch";
    case Errc::FrozenModelViolation: return "FrozenModelViolation";
    case Errc::SizeMismatch: return "SizeMismatch";
    case Errc::InvalidConfig: return "InvalidConfig";
    case Errc::NonFiniteValue: return "NonFiniteValue";
  }
  return "Unknown";
}

std::string shape_string(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

}  // namespace sfit
