#pragma once

#include "sfit/config.hpp"
#include "sfit/data.hpp"
#include "sfit/models.hpp"
#include "sfit/train_log.hpp"

// The four training stages. Each stage receives exactly the checkpoints and
// data it is allowed to see: adaptation and translation stages take bare
// image tensors, so target labels cannot reach them.

namespace sfit::pipelines {

struct StageOutput {
  models::Checkpoint checkpoint;
  TrainLog log;
};

/// Synthetic-pair recipe from a make-synthetic config: MNIST IDX paths under
/// cfg.mnist_dir, transforms and split sizes from the config.
data::SyntheticManifest synthetic_manifest(const RunConfig& cfg);

/// Supervised cross-entropy training of a freshly initialized classifier.
StageOutput train_source(const RunConfig& cfg, const data::ImageSet& source);

/// Information-maximization adaptation (per-sample entropy + diversity) of
/// the feature extractor; the classifier head stays bit-identical.
StageOutput adapt_target_im(const RunConfig& cfg, const models::Checkpoint& source_ckpt,
                            const Tensor& target_images);

/// Source cross entropy plus polynomial-kernel MMD between pooled features
/// of source and target batches; head frozen. Needs source images.
StageOutput adapt_target_mmd(const RunConfig& cfg, const models::Checkpoint& source_ckpt,
                             const data::ImageSet& source, const Tensor& target_images);

/// Trains a fresh generator toward the identity map with L_ID + L_content
/// through the frozen source model. The log's summary carries
/// `heldout_id_error`, measured on images excluded from training.
StageOutput init_generator(const RunConfig& cfg, const models::Checkpoint& source_ckpt,
                           const Tensor& target_images);

/// Number of trailing images init_generator holds out for its check.
int init_holdout_count(int n);

/// Generator training against both frozen classifiers with the weighted
/// translation loss. Throws FrozenModelViolation if either classifier changes.
StageOutput train_sfit(const RunConfig& cfg, const models::Checkpoint& source_ckpt,
                       const models::Checkpoint& target_ckpt, const models::Checkpoint& generator_init,
                       const Tensor& target_images);

/// Fine-tunes the target feature extractor with diversity + agreement-gated
/// pseudo labels from the (frozen) generated-image source-model branch.
StageOutput finetune_target(const RunConfig& cfg, const models::Checkpoint& source_ckpt,
                            const models::Checkpoint& target_ckpt, const models::Checkpoint& generator_ckpt,
                            const Tensor& target_images);

/// Fraction of images whose eval-mode argmax matches the label.
double classifier_accuracy(models::Classifier& model, const data::ImageSet& set,
                           models::Generator* generator = nullptr);

}  // namespace sfit::pipelines
