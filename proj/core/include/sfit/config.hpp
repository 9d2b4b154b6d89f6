#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "sfit/losses.hpp"

namespace sfit::pipelines {

enum class Stage {
  MakeSynthetic,
  TrainSource,
  AdaptTarget,
  InitGenerator,
  TrainSfit,
  Finetune,
  Evaluate,
  ExportImages,
  ExportHeatmap,
};

/// Table name under `[stage.<name>]`, identical to the CLI subcommand.
std::string stage_name(Stage s);
Stage stage_from_name(const std::string& name);

/// Hyperparameters, seeds and paths for one pipeline stage.
struct RunConfig {
  Stage stage = Stage::TrainSource;

  // optimization
  int epochs = 5;
  int batch_size = 16;
  double base_lr = 3e-4;
  std::uint64_t seed = 0;
  /// 0 runs full epochs; otherwise caps the optimizer steps per epoch.
  int max_steps_per_epoch = 0;

  // loss configuration
  losses::LossWeights weights;
  double kd_temperature = 1.0;
  double id_weight = 1.0;
  double content_weight = 1.0;
  double diversity_weight = 1.0;
  double pseudo_weight = 1.0;
  /// Target adaptation objective: "im" or "mmd".
  std::string method = "im";
  double mmd_weight = 1.0;
  /// Parameters adaptation updates: "features" (whole feature extractor) or
  /// "bn-affine" (BatchNorm scale and shift only).
  std::string adapt_params = "features";

  // inputs and outputs
  std::string data;  // synthetic-pair manifest
  std::string source_ckpt;
  std::string target_ckpt;
  std::string generator_ckpt;
  std::string out = "out";

  // make-synthetic
  std::string mnist_dir;
  std::string source_transform = "identity";
  std::string target_transform = "invert";
  double transform_amount = 0.0;
  std::uint64_t split_seed = 0;
  int train_per_domain = 10000;
  int test_per_domain = 2000;

  // exports
  int grid_images = 8;
  int heatmap_index = 0;
  int zoom = 4;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

RunConfig default_config(Stage stage);

/// Reads the `[stage.<name>]` table for `stage`. Missing tables yield
/// defaults; unknown keys, unknown stages and type mismatches are errors.
RunConfig parse_config(const std::string& toml_text, Stage stage, const std::string& origin = "<string>");
RunConfig load_config(const std::filesystem::path& path, Stage stage);

/// Serializes every field under `[stage.<name>]`; doubles are written in
/// shortest round-trip form so parse_config(to_toml(c)) == c.
std::string to_toml(const RunConfig& cfg);

void validate(const RunConfig& cfg);

}  // namespace sfit::pipelines
