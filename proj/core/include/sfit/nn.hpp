#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sfit/rng.hpp"
#include "sfit/tensor.hpp"

// Layer primitives with hand-written backward passes. Each layer caches what
// its backward pass needs during a forward call made with `cache = true`; a
// backward call consumes the most recent cache.

namespace sfit::nn {

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string n, Shape shape) : name(std::move(n)), value(shape), grad(shape) {}
  void zero_grad() { grad.fill(0.0f); }
};

/// Non-trainable persistent state (BN running statistics).
struct Buffer {
  std::string name;
  Tensor value;
};

enum class Padding { Zero, Reflect };

class Conv2d {
 public:
  Conv2d(const std::string& name, int in_channels, int out_channels, int kernel, int stride, int pad,
         Padding mode);

  /// Kaiming-uniform weights for a ReLU gain, zero bias.
  void init(Rng& rng);

  Tensor forward(const Tensor& x, bool cache);
  /// Returns dL/dx; accumulates weight/bias gradients when `param_grads`.
  Tensor backward(const Tensor& dy, bool param_grads);

  Parameter& weight() { return weight_; }
  Parameter& bias() { return bias_; }
  int out_size(int in) const { return (in + 2 * pad_ - kernel_) / stride_ + 1; }

 private:
  void im2col(const Tensor& x, std::vector<float>& cols) const;
  void col2im(const std::vector<float>& cols, Tensor& dx) const;

  int in_, out_, kernel_, stride_, pad_;
  Padding mode_;
  Parameter weight_;  // out x in x k x k
  Parameter bias_;
  Shape in_shape_;
  std::vector<float> cols_;
};

struct ChannelStats {
  std::vector<float> mean;
  std::vector<float> var;  // biased
};

ChannelStats channel_stats(const Tensor& x);

class BatchNorm {
 public:
  BatchNorm(const std::string& name, int channels, float eps = 1e-5f, float momentum = 0.1f);

  /// Train mode normalizes with batch statistics and updates the running
  /// estimates; eval mode uses the running estimates and mutates nothing.
  /// With `track_input_stats`, the batch statistics of x are recorded in
  /// either mode.
  Tensor forward(const Tensor& x, bool train, bool cache, bool track_input_stats = false);
  Tensor backward(const Tensor& dy, bool param_grads);

  const ChannelStats& input_stats() const { return input_stats_; }
  const Tensor& last_input() const { return x_; }
  Parameter& gamma() { return gamma_; }
  Parameter& beta() { return beta_; }
  Buffer& running_mean() { return running_mean_; }
  Buffer& running_var() { return running_var_; }
  int channels() const { return channels_; }

 private:
  int channels_;
  float eps_, momentum_;
  Parameter gamma_, beta_;
  Buffer running_mean_, running_var_;
  bool cached_train_ = false;
  Tensor x_, xhat_;
  std::vector<float> inv_std_;
  ChannelStats input_stats_;
};

/// Per-(sample, channel) normalization without affine parameters.
class InstanceNorm {
 public:
  InstanceNorm() = default;
  explicit InstanceNorm(float eps) : eps_(eps) {}
  Tensor forward(const Tensor& x, bool cache);
  Tensor backward(const Tensor& dy);

 private:
  float eps_ = 1e-5f;
  Tensor xhat_;
  std::vector<float> inv_std_;
};

class Relu {
 public:
  Tensor forward(const Tensor& x, bool cache);
  Tensor backward(const Tensor& dy) const;

 private:
  std::vector<std::uint8_t> mask_;
};

class MaxPool2 {
 public:
  Tensor forward(const Tensor& x, bool cache);
  Tensor backward(const Tensor& dy) const;

 private:
  Shape in_shape_;
  std::vector<std::uint32_t> argmax_;
};

class Upsample2 {
 public:
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& dy) const;
};

class Linear {
 public:
  Linear(const std::string& name, int in_features, int out_features);
  void init(Rng& rng);
  Tensor forward(const Tensor& x, bool cache);
  Tensor backward(const Tensor& dy, bool param_grads);

  Parameter& weight() { return weight_; }
  Parameter& bias() { return bias_; }

 private:
  int in_, out_;
  Parameter weight_;  // out x in
  Parameter bias_;
  Tensor x_;
};

class Tanh {
 public:
  Tensor forward(const Tensor& x, bool cache);
  Tensor backward(const Tensor& dy) const;

 private:
  Tensor y_;
};

// ---------------------------------------------------------------------------
// Stateless helpers

/// Row-wise softmax of a B x C matrix; rows are shifted by their maximum.
template <class T>
BasicTensor<T> softmax(const BasicTensor<T>& logits, T temperature = T(1));

/// Pulls dL/dprobs back to dL/dlogits for probs = softmax(logits / temperature).
template <class T>
BasicTensor<T> softmax_backward(const BasicTensor<T>& probs, const BasicTensor<T>& dprobs, T temperature = T(1));

/// Argmax per row, ties resolved toward the lowest index.
std::vector<int> argmax_rows(const Tensor& m);

void add_inplace(Tensor& a, const Tensor& b);

}  // namespace sfit::nn
