#include "sfit/losses.hpp"

#include <Eigen/Core>
#include <cmath>

namespace sfit::losses {
namespace {

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using CMap = Eigen::Map<const Mat<T>>;
template <class T>
using MapM = Eigen::Map<Mat<T>>;

struct MapDims {
  int batch, depth, spatial;
};

template <class T>
MapDims map_dims(const BasicTensor<T>& f) {
  if (f.rank() == 3) return {1, f.dim(0), f.dim(1) * f.dim(2)};
  if (f.rank() == 4) return {f.dim(0), f.dim(1), f.dim(2) * f.dim(3)};
  throw Error(Errc::ShapeMismatch, "feature map must be D x H x W or B x D x H x W, got " + shape_string(f.shape()));
}

template <class T>
void check_distribution(const BasicTensor<T>& p, const char* what) {
  if (p.rank() != 2) throw Error(Errc::ShapeMismatch, std::string(what) + " must be B x C");
  if (p.dim(0) == 0) throw Error(Errc::EmptyBatch, what);
  const int c = p.dim(1);
  for (int i = 0; i < p.dim(0); ++i) {
    T sum = 0;
    for (int j = 0; j < c; ++j) sum += p[static_cast<std::size_t>(i) * c + j];
    if (std::abs(sum - T(1)) > T(1e-3)) {
      throw Error(Errc::NonDistribution, std::string(what) + " row " + std::to_string(i) + " sums to " +
                                             std::to_string(static_cast<double>(sum)));
    }
  }
}

/// p * log(max(p, eps)) with 0 log 0 = 0, and its derivative.
template <class T>
T plogp(T p) {
  return p > 0 ? p * std::log(std::max(p, T(kEps))) : T(0);
}
template <class T>
T plogp_grad(T p) {
  return p > T(kEps) ? std::log(p) + T(1) : std::log(T(kEps));
}

/// scale * ||rownorm(X_s X_s^T) - rownorm(X_t X_t^T)||_F^2 for R x M matrices
/// whose rows are the correlated vectors; accumulates dL/dX_s into `grad`.
template <class T>
T normalized_gram_mse(const Mat<T>& xs, const Mat<T>& xt, T scale, Eigen::Ref<Mat<T>> grad) {
  const Mat<T> gs = xs * xs.transpose();
  const Mat<T> gt = xt * xt.transpose();
  const Eigen::Index r = gs.rows();
  Mat<T> ns(r, r), nt(r, r);
  Eigen::Matrix<T, Eigen::Dynamic, 1> norm_s(r);
  for (Eigen::Index i = 0; i < r; ++i) {
    norm_s(i) = gs.row(i).norm();
    ns.row(i) = gs.row(i) / std::max(norm_s(i), T(kEps));
    nt.row(i) = gt.row(i) / std::max(gt.row(i).norm(), T(kEps));
  }
  const Mat<T> diff = ns - nt;
  const T value = scale * diff.squaredNorm();
  const Mat<T> a = T(2) * scale * diff;
  Mat<T> dg(r, r);
  for (Eigen::Index i = 0; i < r; ++i) {
    if (norm_s(i) > T(kEps)) {
      dg.row(i) = (a.row(i) - ns.row(i) * ns.row(i).dot(a.row(i))) / norm_s(i);
    } else {
      dg.row(i) = a.row(i) / T(kEps);
    }
  }
  grad.noalias() += (dg + dg.transpose()) * xs;
  return value;
}

}  // namespace

// ---------------------------------------------------------------------------

template <class T>
GramMatrix<T> gram(const BasicTensor<T>& feature_map) {
  const auto d = map_dims(feature_map);
  if (d.batch != 1) throw Error(Errc::ShapeMismatch, "gram takes a single feature map");
  GramMatrix<T> g;
  g.dim = d.depth;
  g.values.resize(static_cast<std::size_t>(d.depth) * d.depth);
  const CMap<T> f(feature_map.data(), d.depth, d.spatial);
  MapM<T>(g.values.data(), d.depth, d.depth).noalias() = f * f.transpose();
  return g;
}

template <class T>
GramMatrix<T> normalize_rows(const GramMatrix<T>& g) {
  GramMatrix<T> out = g;
  out.normalized = true;
  MapM<T> m(out.values.data(), g.dim, g.dim);
  for (int i = 0; i < g.dim; ++i) m.row(i) /= std::max(m.row(i).norm(), T(kEps));
  return out;
}

template <class T>
LossValue<T> kd_loss(const BasicTensor<T>& p_target, const BasicTensor<T>& p_source) {
  require_same_shape(p_target, p_source, "kd_loss");
  check_distribution(p_target, "kd_loss target probabilities");
  check_distribution(p_source, "kd_loss source probabilities");
  const int b = p_target.dim(0);
  LossValue<T> out{T(0), BasicTensor<T>(p_source.shape())};
  for (std::size_t i = 0; i < p_target.size(); ++i) {
    const T pt = p_target[i], ps = p_source[i];
    if (pt > 0) out.value += pt * (std::log(pt) - std::log(std::max(ps, T(kEps))));
    out.grad[i] = ps > T(kEps) ? -pt / ps / b : T(0);
  }
  out.value /= b;
  return out;
}

template <class T>
LossValue<T> rp_loss(const BasicTensor<T>& f_target, const BasicTensor<T>& f_source) {
  require_same_shape(f_target, f_source, "rp_loss");
  const auto d = map_dims(f_source);
  LossValue<T> out{T(0), BasicTensor<T>(f_source.shape())};
  const std::size_t plane = static_cast<std::size_t>(d.depth) * d.spatial;
  for (int n = 0; n < d.batch; ++n) {
    const Mat<T> xs = CMap<T>(f_source.data() + n * plane, d.depth, d.spatial);
    const Mat<T> xt = CMap<T>(f_target.data() + n * plane, d.depth, d.spatial);
    out.value += normalized_gram_mse<T>(xs, xt, T(1) / d.depth,
                                        MapM<T>(out.grad.data() + n * plane, d.depth, d.spatial));
  }
  out.value /= d.batch;
  for (auto& v : out.grad.values()) v /= d.batch;
  return out;
}

template <class T>
LossValue<T> style_loss(const BasicTensor<T>& f_target, const BasicTensor<T>& f_source) {
  require_same_shape(f_target, f_source, "style_loss");
  const auto d = map_dims(f_source);
  LossValue<T> out{T(0), BasicTensor<T>(f_source.shape())};
  const std::size_t plane = static_cast<std::size_t>(d.depth) * d.spatial;
  const T scale = T(1) / (static_cast<T>(d.depth) * d.depth);
  for (int n = 0; n < d.batch; ++n) {
    const CMap<T> xs(f_source.data() + n * plane, d.depth, d.spatial);
    const CMap<T> xt(f_target.data() + n * plane, d.depth, d.spatial);
    const Mat<T> diff = xs * xs.transpose() - xt * xt.transpose();
    out.value += scale * diff.squaredNorm();
    MapM<T>(out.grad.data() + n * plane, d.depth, d.spatial).noalias() = (T(4) * scale / d.batch) * diff * xs;
  }
  out.value /= d.batch;
  return out;
}

template <class T>
LossValue<T> id_loss(const BasicTensor<T>& x_gen, const BasicTensor<T>& x) {
  require_same_shape(x_gen, x, "id_loss");
  LossValue<T> out{T(0), BasicTensor<T>(x_gen.shape())};
  const auto n = static_cast<T>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T diff = x_gen[i] - x[i];
    out.value += std::abs(diff);
    out.grad[i] = (diff > 0 ? T(1) : diff < 0 ? T(-1) : T(0)) / n;
  }
  out.value /= n;
  return out;
}

template <class T>
LossValue<T> content_loss(const BasicTensor<T>& f_gen, const BasicTensor<T>& f_ref) {
  require_same_shape(f_gen, f_ref, "content_loss");
  LossValue<T> out{T(0), BasicTensor<T>(f_gen.shape())};
  const auto n = static_cast<T>(f_gen.size());
  for (std::size_t i = 0; i < f_gen.size(); ++i) {
    const T diff = f_gen[i] - f_ref[i];
    out.value += diff * diff;
    out.grad[i] = T(2) * diff / n;
  }
  out.value /= n;
  return out;
}

template <class T>
LossValue<T> diversity_loss(const BasicTensor<T>& probs) {
  if (probs.rank() != 2 || probs.dim(0) == 0) throw Error(Errc::EmptyBatch, "diversity_loss needs a non-empty batch");
  check_distribution(probs, "diversity_loss probabilities");
  const int b = probs.dim(0), c = probs.dim(1);
  std::vector<T> mean(static_cast<std::size_t>(c), T(0));
  for (int i = 0; i < b; ++i) {
    for (int j = 0; j < c; ++j) mean[j] += probs[static_cast<std::size_t>(i) * c + j] / b;
  }
  LossValue<T> out{T(0), BasicTensor<T>(probs.shape())};
  for (int j = 0; j < c; ++j) out.value += plogp(mean[j]);
  for (int i = 0; i < b; ++i) {
    for (int j = 0; j < c; ++j) out.grad[static_cast<std::size_t>(i) * c + j] = plogp_grad(mean[j]) / b;
  }
  return out;
}

template <class T>
LossValue<T> entropy_loss(const BasicTensor<T>& probs) {
  if (probs.rank() != 2 || probs.dim(0) == 0) throw Error(Errc::EmptyBatch, "entropy_loss needs a non-empty batch");
  const int b = probs.dim(0);
  LossValue<T> out{T(0), BasicTensor<T>(probs.shape())};
  for (std::size_t i = 0; i < probs.size(); ++i) {
    out.value -= plogp(probs[i]);
    out.grad[i] = -plogp_grad(probs[i]) / b;
  }
  out.value /= b;
  return out;
}

template <class T>
T pseudo_label_loss(const T* p_target_row, int num_classes, int label_source, int label_target) {
  for (int y : {label_source, label_target}) {
    if (y < 0 || y >= num_classes) throw Error(Errc::IndexOutOfRange, "pseudo label " + std::to_string(y));
  }
  if (label_source != label_target) return T(0);
  return -std::log(std::max(p_target_row[label_source], T(kEps)));
}

template <class T>
LossValue<T> pseudo_label_loss(const BasicTensor<T>& p_target, const std::vector<int>& labels_source,
                               const std::vector<int>& labels_target, PseudoLabelResult* info) {
  const int b = p_target.dim(0), c = p_target.dim(1);
  if (labels_source.size() != static_cast<std::size_t>(b) || labels_target.size() != static_cast<std::size_t>(b)) {
    throw Error(Errc::ShapeMismatch, "pseudo_label_loss label count");
  }
  LossValue<T> out{T(0), BasicTensor<T>(p_target.shape())};
  int agreeing = 0;
  for (int i = 0; i < b; ++i) {
    const T* row = p_target.data() + static_cast<std::size_t>(i) * c;
    out.value += pseudo_label_loss(row, c, labels_source[i], labels_target[i]);
    if (labels_source[i] == labels_target[i]) ++agreeing;
  }
  if (info) info->agreeing = agreeing;
  if (agreeing == 0) return out;
  out.value /= agreeing;
  for (int i = 0; i < b; ++i) {
    if (labels_source[i] != labels_target[i]) continue;
    const T p = p_target[static_cast<std::size_t>(i) * c + labels_source[i]];
    if (p > T(kEps)) out.grad[static_cast<std::size_t>(i) * c + labels_source[i]] = -T(1) / p / agreeing;
  }
  return out;
}

template <class T>
LossValue<T> cross_entropy(const BasicTensor<T>& probs, const std::vector<int>& labels) {
  const int b = probs.dim(0), c = probs.dim(1);
  if (labels.size() != static_cast<std::size_t>(b)) throw Error(Errc::ShapeMismatch, "cross_entropy label count");
  LossValue<T> out{T(0), BasicTensor<T>(probs.shape())};
  for (int i = 0; i < b; ++i) {
    const int y = labels[i];
    if (y < 0 || y >= c) throw Error(Errc::IndexOutOfRange, "label " + std::to_string(y));
    const T p = probs[static_cast<std::size_t>(i) * c + y];
    out.value -= std::log(std::max(p, T(kEps)));
    if (p > T(kEps)) out.grad[static_cast<std::size_t>(i) * c + y] = -T(1) / p / b;
  }
  out.value /= b;
  return out;
}

template <class T>
LossValue<T> batch_similarity_loss(const BasicTensor<T>& f_target, const BasicTensor<T>& f_source) {
  require_same_shape(f_target, f_source, "batch_similarity_loss");
  const int b = f_source.dim(0);
  const auto m = static_cast<Eigen::Index>(f_source.stride0());
  LossValue<T> out{T(0), BasicTensor<T>(f_source.shape())};
  const Mat<T> xs = CMap<T>(f_source.data(), b, m);
  const Mat<T> xt = CMap<T>(f_target.data(), b, m);
  out.value = normalized_gram_mse<T>(xs, xt, T(1) / b, MapM<T>(out.grad.data(), b, m));
  return out;
}

template <class T>
LossValue<T> pixel_similarity_loss(const BasicTensor<T>& f_target, const BasicTensor<T>& f_source) {
  require_same_shape(f_target, f_source, "pixel_similarity_loss");
  const auto d = map_dims(f_source);
  LossValue<T> out{T(0), BasicTensor<T>(f_source.shape())};
  const std::size_t plane = static_cast<std::size_t>(d.depth) * d.spatial;
  for (int n = 0; n < d.batch; ++n) {
    const Mat<T> xs = CMap<T>(f_source.data() + n * plane, d.depth, d.spatial).transpose();
    const Mat<T> xt = CMap<T>(f_target.data() + n * plane, d.depth, d.spatial).transpose();
    Mat<T> grad = Mat<T>::Zero(d.spatial, d.depth);
    out.value += normalized_gram_mse<T>(xs, xt, T(1) / d.spatial, grad);
    MapM<T>(out.grad.data() + n * plane, d.depth, d.spatial) = grad.transpose() / T(d.batch);
  }
  out.value /= d.batch;
  return out;
}

template <class T>
T bn_stats_loss(const std::vector<BnStats<T>>& batch, const std::vector<BnStats<T>>& running, BnStatsGrad* grad) {
  if (batch.size() != running.size()) {
    throw Error(Errc::LayerCountMismatch, std::to_string(batch.size()) + " batch layers vs " +
                                              std::to_string(running.size()) + " running layers");
  }
  if (grad) {
    grad->d_mean.assign(batch.size(), {});
    grad->d_var.assign(batch.size(), {});
  }
  T total = 0;
  for (std::size_t l = 0; l < batch.size(); ++l) {
    const auto& b = batch[l];
    const auto& r = running[l];
    if (b.mean.size() != r.mean.size() || b.var.size() != r.var.size() || b.mean.size() != b.var.size()) {
      throw Error(Errc::ShapeMismatch, "BN layer " + std::to_string(l) + " channel count");
    }
    if (grad) {
      grad->d_mean[l].resize(b.mean.size());
      grad->d_var[l].resize(b.var.size());
    }
    for (std::size_t c = 0; c < b.mean.size(); ++c) {
      const T dm = b.mean[c] - r.mean[c];
      const T dv = b.var[c] - r.var[c];
      total += dm * dm + dv * dv;
      if (grad) {
        grad->d_mean[l][c] = 2.0 * static_cast<double>(dm);
        grad->d_var[l][c] = 2.0 * static_cast<double>(dv);
      }
    }
  }
  return total;
}

template <class T>
BnStats<T> activation_stats(const BasicTensor<T>& x) {
  const int b = x.dim(0), c = x.dim(1);
  const std::size_t s = x.stride0() / static_cast<std::size_t>(c);
  BnStats<T> st{std::vector<T>(static_cast<std::size_t>(c)), std::vector<T>(static_cast<std::size_t>(c))};
  const double n = static_cast<double>(b) * static_cast<double>(s);
  for (int ch = 0; ch < c; ++ch) {
    double sum = 0, sq = 0;
    for (int i = 0; i < b; ++i) {
      const T* p = x.data() + (static_cast<std::size_t>(i) * c + ch) * s;
      for (std::size_t k = 0; k < s; ++k) sum += p[k];
    }
    const double mean = sum / n;
    for (int i = 0; i < b; ++i) {
      const T* p = x.data() + (static_cast<std::size_t>(i) * c + ch) * s;
      for (std::size_t k = 0; k < s; ++k) sq += (p[k] - mean) * (p[k] - mean);
    }
    st.mean[ch] = static_cast<T>(mean);
    st.var[ch] = static_cast<T>(sq / n);
  }
  return st;
}

template <class T>
BasicTensor<T> activation_stats_backward(const BasicTensor<T>& x, const std::vector<double>& d_mean,
                                         const std::vector<double>& d_var) {
  const int b = x.dim(0), c = x.dim(1);
  if (d_mean.size() != static_cast<std::size_t>(c) || d_var.size() != static_cast<std::size_t>(c)) {
    throw Error(Errc::ShapeMismatch, "activation_stats_backward channel count");
  }
  const std::size_t s = x.stride0() / static_cast<std::size_t>(c);
  const auto stats = activation_stats(x);
  const double n = static_cast<double>(b) * static_cast<double>(s);
  BasicTensor<T> dx(x.shape());
  for (int i = 0; i < b; ++i) {
    for (int ch = 0; ch < c; ++ch) {
      const std::size_t off = (static_cast<std::size_t>(i) * c + ch) * s;
      for (std::size_t k = 0; k < s; ++k) {
        dx[off + k] = static_cast<T>(d_mean[ch] / n + d_var[ch] * 2.0 * (x[off + k] - stats.mean[ch]) / n);
      }
    }
  }
  return dx;
}

template <class T>
MmdValue<T> mmd_poly2(const BasicTensor<T>& source, const BasicTensor<T>& target) {
  if (source.stride0() != target.stride0()) throw Error(Errc::ShapeMismatch, "mmd_poly2 feature width");
  const int bs = source.dim(0), bt = target.dim(0);
  const auto m = static_cast<Eigen::Index>(source.stride0());
  const CMap<T> s(source.data(), bs, m);
  const CMap<T> t(target.data(), bt, m);
  const Mat<T> kss = s * s.transpose();
  const Mat<T> kst = s * t.transpose();
  const Mat<T> ktt = t * t.transpose();
  const T wss = T(1) / (T(bs) * bs), wst = T(1) / (T(bs) * bt), wtt = T(1) / (T(bt) * bt);
  MmdValue<T> out;
  out.value = wss * kss.squaredNorm() - T(2) * wst * kst.squaredNorm() + wtt * ktt.squaredNorm();
  out.grad_source = BasicTensor<T>(source.shape());
  out.grad_target = BasicTensor<T>(target.shape());
  MapM<T>(out.grad_source.data(), bs, m).noalias() = T(4) * wss * kss * s - T(4) * wst * kst * t;
  MapM<T>(out.grad_target.data(), bt, m).noalias() = T(4) * wtt * ktt * t - T(4) * wst * kst.transpose() * s;
  return out;
}

double total_sfit_loss(const LossWeights& w, const LossTerms& t) {
  for (double v : {w.kd, w.rp, w.style, w.batch, w.pixel, w.bn}) {
    if (v < 0) throw Error(Errc::InvalidConfig, "loss weights must be non-negative");
  }
  return w.kd * t.kd + w.rp * t.rp + w.style * t.style + w.batch * t.batch + w.pixel * t.pixel + w.bn * t.bn;
}

double mmd_poly2_oracle(const TensorD& f_a, const TensorD& f_b) {
  require_same_shape(f_a, f_b, "mmd_poly2_oracle");
  const auto d = map_dims(f_a);
  if (d.batch != 1) throw Error(Errc::ShapeMismatch, "mmd_poly2_oracle takes single feature maps");
  auto kernel_sum = [&](const TensorD& x, const TensorD& y) {
    double total = 0;
    for (int p = 0; p < d.spatial; ++p) {
      for (int q = 0; q < d.spatial; ++q) {
        double dot = 0;
        for (int k = 0; k < d.depth; ++k) {
          dot += x[static_cast<std::size_t>(k) * d.spatial + p] * y[static_cast<std::size_t>(k) * d.spatial + q];
        }
        total += dot * dot;
      }
    }
    return total;
  };
  return kernel_sum(f_a, f_a) - 2.0 * kernel_sum(f_a, f_b) + kernel_sum(f_b, f_b);
}

// ---------------------------------------------------------------------------

#define SFIT_INSTANTIATE(T)                                                                                   \
  template GramMatrix<T> gram(const BasicTensor<T>&);                                                         \
  template GramMatrix<T> normalize_rows(const GramMatrix<T>&);                                                \
  template LossValue<T> kd_loss(const BasicTensor<T>&, const BasicTensor<T>&);                                \
  template LossValue<T> rp_loss(const BasicTensor<T>&, const BasicTensor<T>&);                                \
  template LossValue<T> style_loss(const BasicTensor<T>&, const BasicTensor<T>&);                             \
  template LossValue<T> id_loss(const BasicTensor<T>&, const BasicTensor<T>&);                                \
  template LossValue<T> content_loss(const BasicTensor<T>&, const BasicTensor<T>&);                           \
  template LossValue<T> diversity_loss(const BasicTensor<T>&);                                                \
  template LossValue<T> entropy_loss(const BasicTensor<T>&);                                                  \
  template T pseudo_label_loss(const T*, int, int, int);                                                      \
  template LossValue<T> pseudo_label_loss(const BasicTensor<T>&, const std::vector<int>&,                     \
                                          const std::vector<int>&, PseudoLabelResult*);                       \
  template LossValue<T> cross_entropy(const BasicTensor<T>&, const std::vector<int>&);                        \
  template LossValue<T> batch_similarity_loss(const BasicTensor<T>&, const BasicTensor<T>&);                  \
  template LossValue<T> pixel_similarity_loss(const BasicTensor<T>&, const BasicTensor<T>&);                  \
  template T bn_stats_loss(const std::vector<BnStats<T>>&, const std::vector<BnStats<T>>&, BnStatsGrad*);     \
  template BnStats<T> activation_stats(const BasicTensor<T>&);                                                \
  template BasicTensor<T> activation_stats_backward(const BasicTensor<T>&, const std::vector<double>&,        \
                                                    const std::vector<double>&);                              \
  template MmdValue<T> mmd_poly2(const BasicTensor<T>&, const BasicTensor<T>&);

SFIT_INSTANTIATE(float)
SFIT_INSTANTIATE(double)

#undef SFIT_INSTANTIATE

}  // namespace sfit::losses
