#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sfit/tensor.hpp"

namespace sfit::data {

/// N x C x H x W images normalized to [-1, 1] plus optional labels.
struct ImageSet {
  Tensor images;
  std::optional<std::vector<int>> labels;
  int num_classes = 10;

  int count() const { return images.rank() == 4 ? images.dim(0) : 0; }
  int channels() const { return images.dim(1); }
  int height() const { return images.dim(2); }
  int width() const { return images.dim(3); }
  bool labeled() const { return labels.has_value(); }

  /// The label-stripped view handed to adaptation and translation stages.
  const Tensor& unlabeled() const { return images; }

  /// Throws ShapeMismatch / CountMismatch / IndexOutOfRange on violated invariants.
  void validate() const;
};

ImageSet subset(const ImageSet& set, std::span<const std::size_t> indices);

// ---------------------------------------------------------------------------
// IDX files

constexpr std::uint32_t kIdxImageMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

/// Maps byte b in [0, 255] linearly to b / 127.5 - 1.
float byte_to_unit(std::uint8_t b);
std::uint8_t unit_to_byte(float v);

ImageSet load_idx(const std::filesystem::path& images_path,
                  const std::optional<std::filesystem::path>& labels_path = std::nullopt);

/// Writes single-channel images (and labels, if a path is given) as IDX.
void save_idx(const ImageSet& set, const std::filesystem::path& images_path,
              const std::optional<std::filesystem::path>& labels_path = std::nullopt);

/// Bilinear resize (align-corners off, half-pixel centers).
ImageSet resize_bilinear(const ImageSet& set, int height, int width);

// ---------------------------------------------------------------------------
// Synthetic domain gaps

enum class TransformKind { Identity, Invert, ChannelPermute, Colorize, SaturationScale, BackgroundShift };

std::string to_string(TransformKind kind);
TransformKind transform_kind_from_string(const std::string& name);

struct DomainTransform {
  TransformKind kind = TransformKind::Identity;
  /// SaturationScale: factor on the distance from the per-pixel gray level.
  /// BackgroundShift: offset added to background pixels, weighted by darkness.
  double amount = 0.0;
  /// Colorize: per-image palette seed.
  std::uint64_t seed = 0;
  /// ChannelPermute: output channel c reads input channel permutation[c].
  std::vector<int> permutation{2, 1, 0};
};

/// Pure function of (set, transform); labels are carried through.
ImageSet apply_transform(const ImageSet& set, const DomainTransform& t);

struct DomainPair {
  ImageSet source;
  ImageSet target;
  std::vector<std::size_t> source_indices;
  std::vector<std::size_t> target_indices;
};

/// Disjoint seeded split of `base`; the first `source_fraction` of the
/// permutation goes to the source domain.
DomainPair make_domain_pair(const ImageSet& base, const DomainTransform& source_t,
                            const DomainTransform& target_t, std::uint64_t split_seed,
                            double source_fraction = 0.5);

// ---------------------------------------------------------------------------
// Mini-batches

struct BatchPlan {
  int batch_size = 16;
  std::uint64_t seed = 0;
  bool shuffle = true;
  bool drop_last = false;
};

/// Index lists, one per batch, covering [0, n) except a dropped tail.
std::vector<std::vector<std::size_t>> batch_indices(std::size_t n, const BatchPlan& plan);

struct ImageBatch {
  Tensor images;
  std::vector<int> labels;  // empty when the source set is unlabeled
  std::vector<std::size_t> indices;
};

std::vector<ImageBatch> batches(const ImageSet& set, const BatchPlan& plan);

// ---------------------------------------------------------------------------
// Synthetic-pair manifest

/// Recipe for a desk-scale two-domain experiment. The four splits are
/// regenerated deterministically from the base IDX files on load.
struct SyntheticManifest {
  std::filesystem::path train_images;
  std::filesystem::path train_labels;
  std::filesystem::path test_images;
  std::filesystem::path test_labels;
  DomainTransform source_transform;
  DomainTransform target_transform;
  std::uint64_t split_seed = 0;
  int train_per_domain = 10000;
  int test_per_domain = 2000;
  /// 0 keeps the native resolution.
  int resize = 0;
};

struct DomainSplits {
  ImageSet source_train;
  ImageSet source_test;
  ImageSet target_train;
  ImageSet target_test;
};

void write_manifest(const SyntheticManifest& m, const std::filesystem::path& path);
SyntheticManifest read_manifest(const std::filesystem::path& path);
DomainSplits materialize(const SyntheticManifest& m);

}  // namespace sfit::data
