#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sfit/data.hpp"
#include "sfit/models.hpp"

namespace sfit::eval {

struct BranchReport {
  int count = 0;
  int num_classes = 0;
  double acc_source_on_target = 0;
  double acc_target_on_target = 0;
  double acc_source_on_generated = 0;
  std::vector<double> per_class_source_on_target;
  std::vector<double> per_class_target_on_target;
  std::vector<double> per_class_source_on_generated;
  std::vector<int> class_counts;
  double gap = 0;
  std::optional<double> gap_closure;  // only when gap > 0.01

  std::string to_json() const;
  /// `class,acc` rows for the generated-image branch.
  std::string to_csv() const;
};

/// Accuracy of three branches on a labeled test set. A null generator acts
/// as the identity map.
BranchReport evaluate_branches(const models::Checkpoint& source_ckpt, const models::Checkpoint& target_ckpt,
                               const models::Checkpoint* generator_ckpt, const data::ImageSet& test);

/// Fills gap and gap_closure from the three accuracies.
void finalize_gap(BranchReport& report);

/// 8-bit RGB raster, row-major, 3 bytes per pixel.
struct Raster {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;
};

void write_png(const Raster& raster, const std::filesystem::path& path);
Raster read_png(const std::filesystem::path& path);

/// Tiles each N x C x H x W row tensor left to right with 2-pixel borders.
Raster render_grid(const std::vector<Tensor>& rows);
void export_grid(const std::vector<Tensor>& rows, const std::filesystem::path& path);

struct HeatmapExport {
  int dim = 0;
  int zoom = 1;
  std::vector<double> values;  // |G_S - G_T|, D x D row-major
  double min = 0;
  double max = 0;
  Raster raster;
};

/// Black -> red -> yellow -> white; luminance increases with t in [0, 1].
std::array<std::uint8_t, 3> heat_color(double t);

/// Absolute Gram difference of two single-image D x H x W feature maps,
/// row-normalized or raw. Values are scaled by the matrix maximum.
HeatmapExport gram_heatmap(const Tensor& f_target, const Tensor& f_source, bool normalized, int zoom = 4);

/// Writes the PNG and a sidecar `<path>.txt` with min/max and the mode.
HeatmapExport export_gram_heatmap(const Tensor& f_target, const Tensor& f_source, bool normalized,
                                  const std::filesystem::path& path, int zoom = 4);

}  // namespace sfit::eval
