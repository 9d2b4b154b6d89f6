#pragma once

#include <cstdint>
#include <vector>

#include "sfit/checkpoint.hpp"
#include "sfit/nn.hpp"

namespace sfit::models {

enum class Mode { Train, Eval };

struct ClassifierSpec {
  int in_channels = 1;
  int height = 28;
  int width = 28;
  int num_classes = 10;

  friend bool operator==(const ClassifierSpec&, const ClassifierSpec&) = default;
};

struct ForwardOptions {
  bool cache = false;           // keep activations for a backward pass
  bool track_bn_inputs = false; // record batch statistics entering each BN layer
};

struct ClassifierOutput {
  Tensor feature_map;  // B x 50 x H/4 x W/4, last conv block
  Tensor pooled;       // B x 500
  Tensor logits;       // B x C
  Tensor probs;        // softmax(logits)
};

/// Gradients injected at the classifier's observable outputs; empty tensors
/// contribute nothing.
struct ClassifierGrads {
  Tensor logits;
  Tensor pooled;
  Tensor feature_map;
  std::vector<Tensor> bn_inputs;  // one per BN layer, gradient w.r.t. the BN input
};

/// LeNet-style digit classifier: feature extractor f (two 5x5 conv blocks
/// with BN, then fc-500) and head p (fc-500 -> C).
class Classifier {
 public:
  static constexpr int kFeatureDim = 500;
  static constexpr int kConv1 = 20;
  static constexpr int kConv2 = 50;

  explicit Classifier(ClassifierSpec spec = {});

  void init(std::uint64_t seed);

  ClassifierOutput forward(const Tensor& x, Mode mode, ForwardOptions opts = {});
  /// Backpropagates through the most recent cached forward; returns dL/dx.
  Tensor backward(const ClassifierGrads& grads, bool param_grads);

  std::vector<nn::Parameter*> feature_parameters();
  std::vector<nn::Parameter*> head_parameters();
  std::vector<nn::Parameter*> parameters();
  void zero_grad();

  /// Batch statistics recorded by the last forward with track_bn_inputs.
  std::vector<nn::ChannelStats> bn_input_stats() const;
  std::vector<nn::ChannelStats> bn_running_stats() const;
  /// Inputs seen by each BN layer in the last tracked, cached forward.
  std::vector<const Tensor*> bn_inputs() const;

  Checkpoint to_checkpoint() const;
  /// Strict load: every expected tensor present, no extras, shapes match.
  void load(const Checkpoint& ckpt);
  static Classifier from_checkpoint(const Checkpoint& ckpt);

  const ClassifierSpec& spec() const { return spec_; }

 private:
  ClassifierSpec spec_;
  nn::Conv2d conv1_, conv2_;
  nn::BatchNorm bn1_, bn2_;
  nn::Relu relu1_, relu2_, relu3_;
  nn::MaxPool2 pool1_, pool2_;
  nn::Linear fc1_, head_;
  Shape feature_shape_;
};

/// Names of the classifier-head tensors inside a classifier checkpoint.
bool is_head_tensor(const std::string& name);
std::uint64_t head_fingerprint(const Checkpoint& ckpt);

struct GeneratorSpec {
  int channels = 1;
  int base_width = 32;
  int residual_blocks = 3;

  friend bool operator==(const GeneratorSpec&, const GeneratorSpec&) = default;
};

/// Residual encoder-decoder with reflection padding and instance norm:
/// 7x7 -> 3x3/2 -> 3x3/2 -> residual blocks -> (upsample, 3x3) x 2 -> 7x7 -> tanh.
class Generator {
 public:
  explicit Generator(GeneratorSpec spec = {});

  void init(std::uint64_t seed);

  Tensor forward(const Tensor& x, bool cache);
  Tensor backward(const Tensor& dy, bool param_grads = true);

  std::vector<nn::Parameter*> parameters();
  void zero_grad();

  Checkpoint to_checkpoint() const;
  void load(const Checkpoint& ckpt);
  static Generator from_checkpoint(const Checkpoint& ckpt);

  const GeneratorSpec& spec() const { return spec_; }

 private:
  struct Block {
    nn::Conv2d conv;
    nn::InstanceNorm norm;
    nn::Relu relu;
  };
  struct Residual {
    nn::Conv2d conv1;
    nn::InstanceNorm norm1;
    nn::Relu relu;
    nn::Conv2d conv2;
    nn::InstanceNorm norm2;
  };

  GeneratorSpec spec_;
  std::vector<Block> encoder_;
  std::vector<Residual> residual_;
  std::vector<nn::Upsample2> upsample_;
  std::vector<Block> decoder_;
  nn::Conv2d out_conv_;
  nn::Tanh tanh_;
};

}  // namespace sfit::models
