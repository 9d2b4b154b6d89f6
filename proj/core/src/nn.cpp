#include "sfit/nn.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

namespace sfit::nn {
namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRow = Eigen::Map<RowMat>;
using CMapRow = Eigen::Map<const RowMat>;

/// Source coordinate for padded position `i`, or -1 when it reads padding.
int source_index(int i, int size, Padding mode) {
  if (i >= 0 && i < size) return i;
  if (mode == Padding::Zero) return -1;
  if (size == 1) return 0;
  if (i < 0) return -i;
  return 2 * size - 2 - i;
}

void kaiming_uniform(Tensor& w, int fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / fan_in);
  for (auto& v : w.values()) v = static_cast<float>(rng.uniform(-bound, bound));
}

struct Dims {
  int batch, channels, spatial;
};

Dims dims_of(const Tensor& x) {
  if (x.rank() == 2) return {x.dim(0), x.dim(1), 1};
  if (x.rank() == 4) return {x.dim(0), x.dim(1), x.dim(2) * x.dim(3)};
  throw Error(Errc::ShapeMismatch, "expected rank 2 or 4, got " + shape_string(x.shape()));
}

}  // namespace

// ---------------------------------------------------------------------------
// Conv2d

Conv2d::Conv2d(const std::string& name, int in_channels, int out_channels, int kernel, int stride, int pad,
               Padding mode)
    : in_(in_channels),
      out_(out_channels),
      kernel_(kernel),
      stride_(stride),
      pad_(pad),
      mode_(mode),
      weight_(name + ".weight", {out_channels, in_channels, kernel, kernel}),
      bias_(name + ".bias", {out_channels}) {}

void Conv2d::init(Rng& rng) {
  kaiming_uniform(weight_.value, in_ * kernel_ * kernel_, rng);
  bias_.value.fill(0.0f);
}

void Conv2d::im2col(const Tensor& x, std::vector<float>& cols) const {
  const int b = x.dim(0), h = x.dim(2), w = x.dim(3);
  const int oh = out_size(h), ow = out_size(w), p = oh * ow;
  const std::size_t bp = static_cast<std::size_t>(b) * p;
  cols.assign(static_cast<std::size_t>(in_) * kernel_ * kernel_ * bp, 0.0f);

  std::vector<int> ymap(static_cast<std::size_t>(kernel_) * oh), xmap(static_cast<std::size_t>(kernel_) * ow);
  for (int k = 0; k < kernel_; ++k) {
    for (int o = 0; o < oh; ++o) ymap[k * oh + o] = source_index(o * stride_ + k - pad_, h, mode_);
    for (int o = 0; o < ow; ++o) xmap[k * ow + o] = source_index(o * stride_ + k - pad_, w, mode_);
  }
  for (int c = 0; c < in_; ++c) {
    for (int ky = 0; ky < kernel_; ++ky) {
      for (int kx = 0; kx < kernel_; ++kx) {
        float* row = cols.data() + (static_cast<std::size_t>(c * kernel_ + ky) * kernel_ + kx) * bp;
        const int* xm = xmap.data() + kx * ow;
        for (int n = 0; n < b; ++n) {
          const float* src = x.data() + (static_cast<std::size_t>(n) * in_ + c) * h * w;
          float* dst = row + static_cast<std::size_t>(n) * p;
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = ymap[ky * oh + oy];
            if (iy < 0) continue;
            const float* srow = src + static_cast<std::size_t>(iy) * w;
            float* drow = dst + oy * ow;
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = xm[ox];
              if (ix >= 0) drow[ox] = srow[ix];
            }
          }
        }
      }
    }
  }
}

void Conv2d::col2im(const std::vector<float>& cols, Tensor& dx) const {
  const int b = in_shape_[0], h = in_shape_[2], w = in_shape_[3];
  const int oh = out_size(h), ow = out_size(w), p = oh * ow;
  const std::size_t bp = static_cast<std::size_t>(b) * p;
  std::vector<int> ymap(static_cast<std::size_t>(kernel_) * oh), xmap(static_cast<std::size_t>(kernel_) * ow);
  for (int k = 0; k < kernel_; ++k) {
    for (int o = 0; o < oh; ++o) ymap[k * oh + o] = source_index(o * stride_ + k - pad_, h, mode_);
    for (int o = 0; o < ow; ++o) xmap[k * ow + o] = source_index(o * stride_ + k - pad_, w, mode_);
  }
  for (int c = 0; c < in_; ++c) {
    for (int ky = 0; ky < kernel_; ++ky) {
      for (int kx = 0; kx < kernel_; ++kx) {
        const float* row = cols.data() + (static_cast<std::size_t>(c * kernel_ + ky) * kernel_ + kx) * bp;
        const int* xm = xmap.data() + kx * ow;
        for (int n = 0; n < b; ++n) {
          float* dst = dx.data() + (static_cast<std::size_t>(n) * in_ + c) * h * w;
          const float* src = row + static_cast<std::size_t>(n) * p;
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = ymap[ky * oh + oy];
            if (iy < 0) continue;
            float* drow = dst + static_cast<std::size_t>(iy) * w;
            const float* srow = src + oy * ow;
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = xm[ox];
              if (ix >= 0) drow[ix] += srow[ox];
            }
          }
        }
      }
    }
  }
}

Tensor Conv2d::forward(const Tensor& x, bool cache) {
  if (x.rank() != 4 || x.dim(1) != in_) {
    throw Error(Errc::ShapeMismatch, weight_.name + " expects " + std::to_string(in_) + " input channels, got " +
                                         shape_string(x.shape()));
  }
  const int b = x.dim(0), oh = out_size(x.dim(2)), ow = out_size(x.dim(3)), p = oh * ow;
  const int k = in_ * kernel_ * kernel_;
  const auto bp = static_cast<Eigen::Index>(b) * p;
  std::vector<float> local;
  std::vector<float>& cols = cache ? cols_ : local;
  im2col(x, cols);
  if (cache) in_shape_ = x.shape();

  RowMat y(out_, bp);
  y.noalias() = CMapRow(weight_.value.data(), out_, k) * CMapRow(cols.data(), k, bp);

  Tensor out({b, out_, oh, ow});
  for (int n = 0; n < b; ++n) {
    for (int c = 0; c < out_; ++c) {
      const float* src = y.data() + static_cast<std::size_t>(c) * bp + static_cast<std::size_t>(n) * p;
      float* dst = out.data() + (static_cast<std::size_t>(n) * out_ + c) * p;
      const float bias = bias_.value[static_cast<std::size_t>(c)];
      for (int i = 0; i < p; ++i) dst[i] = src[i] + bias;
    }
  }
  return out;
}

Tensor Conv2d::backward(const Tensor& dy, bool param_grads) {
  const int b = in_shape_[0], oh = out_size(in_shape_[2]), ow = out_size(in_shape_[3]), p = oh * ow;
  const int k = in_ * kernel_ * kernel_;
  const auto bp = static_cast<Eigen::Index>(b) * p;
  if (dy.shape() != Shape{b, out_, oh, ow}) throw Error(Errc::ShapeMismatch, weight_.name + " backward");

  RowMat dmat(out_, bp);
  for (int n = 0; n < b; ++n) {
    for (int c = 0; c < out_; ++c) {
      const float* src = dy.data() + (static_cast<std::size_t>(n) * out_ + c) * p;
      std::copy_n(src, p, dmat.data() + static_cast<std::size_t>(c) * bp + static_cast<std::size_t>(n) * p);
    }
  }
  const CMapRow cols(cols_.data(), k, bp);
  if (param_grads) {
    MapRow(weight_.grad.data(), out_, k).noalias() += dmat * cols.transpose();
    Eigen::Map<Eigen::VectorXf>(bias_.grad.data(), out_) += dmat.rowwise().sum();
  }
  std::vector<float> dcols(static_cast<std::size_t>(k) * bp);
  MapRow(dcols.data(), k, bp).noalias() = CMapRow(weight_.value.data(), out_, k).transpose() * dmat;
  Tensor dx(in_shape_);
  col2im(dcols, dx);
  return dx;
}

// ---------------------------------------------------------------------------
// Normalization

ChannelStats channel_stats(const Tensor& x) {
  const auto d = dims_of(x);
  ChannelStats s{std::vector<float>(d.channels), std::vector<float>(d.channels)};
  const double count = static_cast<double>(d.batch) * d.spatial;
  for (int c = 0; c < d.channels; ++c) {
    double sum = 0, sq = 0;
    for (int n = 0; n < d.batch; ++n) {
      const float* p = x.data() + (static_cast<std::size_t>(n) * d.channels + c) * d.spatial;
      for (int i = 0; i < d.spatial; ++i) sum += p[i];
    }
    const double mean = sum / count;
    for (int n = 0; n < d.batch; ++n) {
      const float* p = x.data() + (static_cast<std::size_t>(n) * d.channels + c) * d.spatial;
      for (int i = 0; i < d.spatial; ++i) sq += (p[i] - mean) * (p[i] - mean);
    }
    s.mean[c] = static_cast<float>(mean);
    s.var[c] = static_cast<float>(sq / count);
  }
  return s;
}

BatchNorm::BatchNorm(const std::string& name, int channels, float eps, float momentum)
    : channels_(channels),
      eps_(eps),
      momentum_(momentum),
      gamma_(name + ".weight", {channels}),
      beta_(name + ".bias", {channels}),
      running_mean_{name + ".running_mean", Tensor({channels}, 0.0f)},
      running_var_{name + ".running_var", Tensor({channels}, 1.0f)} {
  gamma_.value.fill(1.0f);
}

Tensor BatchNorm::forward(const Tensor& x, bool train, bool cache, bool track_input_stats) {
  const auto d = dims_of(x);
  if (d.channels != channels_) throw Error(Errc::ShapeMismatch, gamma_.name + " channel count");
  std::vector<float> mean(channels_), inv_std(channels_);
  if (train || track_input_stats) {
    input_stats_ = channel_stats(x);
  }
  if (train) {
    const double count = static_cast<double>(d.batch) * d.spatial;
    const double unbias = count > 1 ? count / (count - 1) : 1.0;
    for (int c = 0; c < channels_; ++c) {
      mean[c] = input_stats_.mean[c];
      inv_std[c] = 1.0f / std::sqrt(input_stats_.var[c] + eps_);
      auto& rm = running_mean_.value[static_cast<std::size_t>(c)];
      auto& rv = running_var_.value[static_cast<std::size_t>(c)];
      rm = (1.0f - momentum_) * rm + momentum_ * mean[c];
      rv = (1.0f - momentum_) * rv + momentum_ * static_cast<float>(input_stats_.var[c] * unbias);
    }
  } else {
    for (int c = 0; c < channels_; ++c) {
      mean[c] = running_mean_.value[static_cast<std::size_t>(c)];
      inv_std[c] = 1.0f / std::sqrt(running_var_.value[static_cast<std::size_t>(c)] + eps_);
    }
  }
  Tensor y(x.shape());
  Tensor xhat(cache ? x.shape() : Shape{});
  for (int n = 0; n < d.batch; ++n) {
    for (int c = 0; c < channels_; ++c) {
      const std::size_t off = (static_cast<std::size_t>(n) * channels_ + c) * d.spatial;
      const float g = gamma_.value[static_cast<std::size_t>(c)], bt = beta_.value[static_cast<std::size_t>(c)];
      for (int i = 0; i < d.spatial; ++i) {
        const float h = (x[off + i] - mean[c]) * inv_std[c];
        if (cache) xhat[off + i] = h;
        y[off + i] = g * h + bt;
      }
    }
  }
  if (cache) {
    cached_train_ = train;
    xhat_ = std::move(xhat);
    inv_std_ = std::move(inv_std);
    if (track_input_stats) x_ = x;
  }
  return y;
}

Tensor BatchNorm::backward(const Tensor& dy, bool param_grads) {
  const auto d = dims_of(dy);
  Tensor dx(dy.shape());
  const double count = static_cast<double>(d.batch) * d.spatial;
  for (int c = 0; c < channels_; ++c) {
    double sum_dy = 0, sum_dy_xhat = 0;
    for (int n = 0; n < d.batch; ++n) {
      const std::size_t off = (static_cast<std::size_t>(n) * channels_ + c) * d.spatial;
      for (int i = 0; i < d.spatial; ++i) {
        sum_dy += dy[off + i];
        sum_dy_xhat += static_cast<double>(dy[off + i]) * xhat_[off + i];
      }
    }
    const float g = gamma_.value[static_cast<std::size_t>(c)];
    if (param_grads) {
      gamma_.grad[static_cast<std::size_t>(c)] += static_cast<float>(sum_dy_xhat);
      beta_.grad[static_cast<std::size_t>(c)] += static_cast<float>(sum_dy);
    }
    const float scale = g * inv_std_[c];
    const auto mean_dy = static_cast<float>(sum_dy / count);
    const auto mean_dy_xhat = static_cast<float>(sum_dy_xhat / count);
    for (int n = 0; n < d.batch; ++n) {
      const std::size_t off = (static_cast<std::size_t>(n) * channels_ + c) * d.spatial;
      for (int i = 0; i < d.spatial; ++i) {
        dx[off + i] = cached_train_ ? scale * (dy[off + i] - mean_dy - xhat_[off + i] * mean_dy_xhat)
                                    : scale * dy[off + i];
      }
    }
  }
  return dx;
}

Tensor InstanceNorm::forward(const Tensor& x, bool cache) {
  const int planes = x.dim(0) * x.dim(1);
  const int spatial = x.dim(2) * x.dim(3);
  Tensor y(x.shape());
  std::vector<float> inv_std(static_cast<std::size_t>(planes));
  for (int q = 0; q < planes; ++q) {
    const float* src = x.data() + static_cast<std::size_t>(q) * spatial;
    float* dst = y.data() + static_cast<std::size_t>(q) * spatial;
    double sum = 0, sq = 0;
    for (int i = 0; i < spatial; ++i) sum += src[i];
    const double mean = sum / spatial;
    for (int i = 0; i < spatial; ++i) sq += (src[i] - mean) * (src[i] - mean);
    const auto is = static_cast<float>(1.0 / std::sqrt(sq / spatial + eps_));
    inv_std[static_cast<std::size_t>(q)] = is;
    const auto m = static_cast<float>(mean);
    for (int i = 0; i < spatial; ++i) dst[i] = (src[i] - m) * is;
  }
  if (cache) {
    xhat_ = y;
    inv_std_ = std::move(inv_std);
  }
  return y;
}

Tensor InstanceNorm::backward(const Tensor& dy) {
  const int planes = dy.dim(0) * dy.dim(1);
  const int spatial = dy.dim(2) * dy.dim(3);
  Tensor dx(dy.shape());
  for (int q = 0; q < planes; ++q) {
    const std::size_t off = static_cast<std::size_t>(q) * spatial;
    double sum_dy = 0, sum_dy_xhat = 0;
    for (int i = 0; i < spatial; ++i) {
      sum_dy += dy[off + i];
      sum_dy_xhat += static_cast<double>(dy[off + i]) * xhat_[off + i];
    }
    const auto mean_dy = static_cast<float>(sum_dy / spatial);
    const auto mean_dy_xhat = static_cast<float>(sum_dy_xhat / spatial);
    const float is = inv_std_[static_cast<std::size_t>(q)];
    for (int i = 0; i < spatial; ++i) {
      dx[off + i] = is * (dy[off + i] - mean_dy - xhat_[off + i] * mean_dy_xhat);
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Elementwise, pooling, linear

Tensor Relu::forward(const Tensor& x, bool cache) {
  Tensor y(x.shape());
  if (cache) mask_.assign(x.size(), 0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const bool on = x[i] > 0.0f;
    y[i] = on ? x[i] : 0.0f;
    if (cache) mask_[i] = on;
  }
  return y;
}

Tensor Relu::backward(const Tensor& dy) const {
  Tensor dx(dy.shape());
  for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = mask_[i] ? dy[i] : 0.0f;
  return dx;
}

Tensor MaxPool2::forward(const Tensor& x, bool cache) {
  const int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int oh = h / 2, ow = w / 2;
  Tensor y({b, c, oh, ow});
  if (cache) {
    in_shape_ = x.shape();
    argmax_.assign(y.size(), 0);
  }
  std::size_t o = 0;
  for (int q = 0; q < b * c; ++q) {
    const std::size_t base = static_cast<std::size_t>(q) * h * w;
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox, ++o) {
        std::size_t best = base + static_cast<std::size_t>(2 * oy) * w + 2 * ox;
        for (int dy = 0; dy < 2; ++dy) {
          for (int dx = 0; dx < 2; ++dx) {
            const std::size_t idx = base + static_cast<std::size_t>(2 * oy + dy) * w + 2 * ox + dx;
            if (x[idx] > x[best]) best = idx;
          }
        }
        y[o] = x[best];
        if (cache) argmax_[o] = static_cast<std::uint32_t>(best);
      }
    }
  }
  return y;
}

Tensor MaxPool2::backward(const Tensor& dy) const {
  Tensor dx(in_shape_);
  for (std::size_t o = 0; o < dy.size(); ++o) dx[argmax_[o]] += dy[o];
  return dx;
}

Tensor Upsample2::forward(const Tensor& x) {
  const int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor y({b, c, 2 * h, 2 * w});
  for (int q = 0; q < b * c; ++q) {
    const float* src = x.data() + static_cast<std::size_t>(q) * h * w;
    float* dst = y.data() + static_cast<std::size_t>(q) * 4 * h * w;
    for (int yy = 0; yy < 2 * h; ++yy) {
      for (int xx = 0; xx < 2 * w; ++xx) dst[yy * 2 * w + xx] = src[(yy / 2) * w + xx / 2];
    }
  }
  return y;
}

Tensor Upsample2::backward(const Tensor& dy) const {
  const int b = dy.dim(0), c = dy.dim(1), h = dy.dim(2) / 2, w = dy.dim(3) / 2;
  Tensor dx({b, c, h, w});
  for (int q = 0; q < b * c; ++q) {
    const float* src = dy.data() + static_cast<std::size_t>(q) * 4 * h * w;
    float* dst = dx.data() + static_cast<std::size_t>(q) * h * w;
    for (int yy = 0; yy < 2 * h; ++yy) {
      for (int xx = 0; xx < 2 * w; ++xx) dst[(yy / 2) * w + xx / 2] += src[yy * 2 * w + xx];
    }
  }
  return dx;
}

Linear::Linear(const std::string& name, int in_features, int out_features)
    : in_(in_features), out_(out_features), weight_(name + ".weight", {out_features, in_features}),
      bias_(name + ".bias", {out_features}) {}

void Linear::init(Rng& rng) {
  kaiming_uniform(weight_.value, in_, rng);
  bias_.value.fill(0.0f);
}

Tensor Linear::forward(const Tensor& x, bool cache) {
  const int b = x.dim(0);
  if (x.stride0() != static_cast<std::size_t>(in_)) {
    throw Error(Errc::ShapeMismatch, weight_.name + " expects " + std::to_string(in_) + " features, got " +
                                         shape_string(x.shape()));
  }
  Tensor y({b, out_});
  MapRow ym(y.data(), b, out_);
  ym.noalias() = CMapRow(x.data(), b, in_) * CMapRow(weight_.value.data(), out_, in_).transpose();
  ym.rowwise() += Eigen::Map<const Eigen::RowVectorXf>(bias_.value.data(), out_);
  if (cache) x_ = x.reshaped({b, in_});
  return y;
}

Tensor Linear::backward(const Tensor& dy, bool param_grads) {
  const int b = dy.dim(0);
  const CMapRow dym(dy.data(), b, out_);
  if (param_grads) {
    MapRow(weight_.grad.data(), out_, in_).noalias() += dym.transpose() * CMapRow(x_.data(), b, in_);
    Eigen::Map<Eigen::RowVectorXf>(bias_.grad.data(), out_) += dym.colwise().sum();
  }
  Tensor dx({b, in_});
  MapRow(dx.data(), b, in_).noalias() = dym * CMapRow(weight_.value.data(), out_, in_);
  return dx;
}

Tensor Tanh::forward(const Tensor& x, bool cache) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::tanh(x[i]);
  if (cache) y_ = y;
  return y;
}

Tensor Tanh::backward(const Tensor& dy) const {
  Tensor dx(dy.shape());
  for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = dy[i] * (1.0f - y_[i] * y_[i]);
  return dx;
}

// ---------------------------------------------------------------------------

template <class T>
BasicTensor<T> softmax(const BasicTensor<T>& logits, T temperature) {
  const int b = logits.dim(0), c = logits.dim(1);
  BasicTensor<T> p(logits.shape());
  for (int i = 0; i < b; ++i) {
    const T* z = logits.data() + static_cast<std::size_t>(i) * c;
    T* out = p.data() + static_cast<std::size_t>(i) * c;
    const T mx = *std::max_element(z, z + c);
    T sum = 0;
    for (int j = 0; j < c; ++j) {
      out[j] = std::exp((z[j] - mx) / temperature);
      sum += out[j];
    }
    for (int j = 0; j < c; ++j) out[j] /= sum;
  }
  return p;
}

template <class T>
BasicTensor<T> softmax_backward(const BasicTensor<T>& probs, const BasicTensor<T>& dprobs, T temperature) {
  const int b = probs.dim(0), c = probs.dim(1);
  BasicTensor<T> dz(probs.shape());
  for (int i = 0; i < b; ++i) {
    const T* p = probs.data() + static_cast<std::size_t>(i) * c;
    const T* dp = dprobs.data() + static_cast<std::size_t>(i) * c;
    T dot = 0;
    for (int j = 0; j < c; ++j) dot += p[j] * dp[j];
    for (int j = 0; j < c; ++j) dz[static_cast<std::size_t>(i) * c + j] = p[j] * (dp[j] - dot) / temperature;
  }
  return dz;
}

template BasicTensor<float> softmax(const BasicTensor<float>&, float);
template BasicTensor<double> softmax(const BasicTensor<double>&, double);
template BasicTensor<float> softmax_backward(const BasicTensor<float>&, const BasicTensor<float>&, float);
template BasicTensor<double> softmax_backward(const BasicTensor<double>&, const BasicTensor<double>&, double);

std::vector<int> argmax_rows(const Tensor& m) {
  const int b = m.dim(0), c = m.dim(1);
  std::vector<int> out(static_cast<std::size_t>(b));
  for (int i = 0; i < b; ++i) {
    const float* row = m.data() + static_cast<std::size_t>(i) * c;
    int best = 0;
    for (int j = 1; j < c; ++j) {
      if (row[j] > row[best]) best = j;
    }
    out[static_cast<std::size_t>(i)] = best;
  }
  return out;
}

void add_inplace(Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add_inplace");
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

}  // namespace sfit::nn
