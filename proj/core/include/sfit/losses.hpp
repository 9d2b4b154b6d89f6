#pragma once

#include <vector>

#include "sfit/nn.hpp"
#include "sfit/tensor.hpp"

// Loss terms for source-free image translation and its ablations.
//
// Every differentiable loss returns its value together with the gradient
// w.r.t. the argument that belongs to the trainable (generated-image, source
// model) branch. The other argument is treated as a constant. Feature maps
// are accepted as D x H x W (a single image) or B x D x H x W; per-image
// losses are averaged over the batch.

namespace sfit::losses {

inline constexpr double kEps = 1e-8;

template <class T>
struct LossValue {
  T value{};
  BasicTensor<T> grad;  // same shape as the differentiated argument
};

/// D x D Gram matrix (raw or row-normalized).
template <class T>
struct GramMatrix {
  int dim = 0;
  std::vector<T> values;  // row-major
  bool normalized = false;

  T at(int i, int j) const { return values[static_cast<std::size_t>(i) * dim + j]; }
};

/// G = F F^T for the D x (H*W) reshaping of a single D x H x W map.
template <class T>
GramMatrix<T> gram(const BasicTensor<T>& feature_map);

/// Divides each row by max(||row||_2, eps).
template <class T>
GramMatrix<T> normalize_rows(const GramMatrix<T>& g);

/// Batch-mean KL(p_target || p_source); gradient w.r.t. p_source.
template <class T>
LossValue<T> kd_loss(const BasicTensor<T>& p_target, const BasicTensor<T>& p_source);

/// (1/D) ||norm(G_S) - norm(G_T)||_F^2 per image; gradient w.r.t. f_source.
template <class T>
LossValue<T> rp_loss(const BasicTensor<T>& f_target, const BasicTensor<T>& f_source);

/// (1/D^2) ||G_S - G_T||_F^2 per image on raw Gram matrices.
template <class T>
LossValue<T> style_loss(const BasicTensor<T>& f_target, const BasicTensor<T>& f_source);

/// mean |x_gen - x|; gradient w.r.t. x_gen.
template <class T>
LossValue<T> id_loss(const BasicTensor<T>& x_gen, const BasicTensor<T>& x);

/// Mean squared difference over all features; gradient w.r.t. f_gen.
template <class T>
LossValue<T> content_loss(const BasicTensor<T>& f_gen, const BasicTensor<T>& f_ref);

/// Negative entropy of the batch-mean prediction, in [-log C, 0].
template <class T>
LossValue<T> diversity_loss(const BasicTensor<T>& probs);

/// Mean per-sample prediction entropy (the minimized half of IM adaptation).
template <class T>
LossValue<T> entropy_loss(const BasicTensor<T>& probs);

/// Cross entropy at the agreed pseudo label, or 0 when the branches disagree.
template <class T>
T pseudo_label_loss(const T* p_target_row, int num_classes, int label_source, int label_target);

struct PseudoLabelResult {
  int agreeing = 0;
};

/// Mean over agreeing samples (0 when none agree); gradient w.r.t. p_target.
template <class T>
LossValue<T> pseudo_label_loss(const BasicTensor<T>& p_target, const std::vector<int>& labels_source,
                               const std::vector<int>& labels_target, PseudoLabelResult* info = nullptr);

/// Mean cross entropy against integer labels; gradient w.r.t. probs.
template <class T>
LossValue<T> cross_entropy(const BasicTensor<T>& probs, const std::vector<int>& labels);

/// B x B row-normalized similarity of flattened per-sample features, scaled 1/B.
template <class T>
LossValue<T> batch_similarity_loss(const BasicTensor<T>& f_target, const BasicTensor<T>& f_source);

/// (HW) x (HW) row-normalized spatial similarity per image, scaled 1/(HW).
template <class T>
LossValue<T> pixel_similarity_loss(const BasicTensor<T>& f_target, const BasicTensor<T>& f_source);

template <class T>
struct BnStats {
  std::vector<T> mean;
  std::vector<T> var;
};

struct BnStatsGrad {
  std::vector<std::vector<double>> d_mean;
  std::vector<std::vector<double>> d_var;
};

/// Sum over layers of ||mu_b - mu_r||^2 + ||var_b - var_r||^2; gradients
/// w.r.t. the batch statistics.
template <class T>
T bn_stats_loss(const std::vector<BnStats<T>>& batch, const std::vector<BnStats<T>>& running,
                BnStatsGrad* grad = nullptr);

/// Per-channel mean and biased variance of a B x C x H x W activation.
template <class T>
BnStats<T> activation_stats(const BasicTensor<T>& x);

/// Chains dL/dmean and dL/dvar of `activation_stats(x)` back to dL/dx.
template <class T>
BasicTensor<T> activation_stats_backward(const BasicTensor<T>& x, const std::vector<double>& d_mean,
                                         const std::vector<double>& d_var);

/// Pooled-feature MMD with the second-order polynomial kernel k(u,v) = (u.v)^2,
/// biased estimator normalized by B_s^2, B_s B_t, B_t^2. Gradients for both sides.
template <class T>
struct MmdValue {
  T value{};
  BasicTensor<T> grad_source;
  BasicTensor<T> grad_target;
};

template <class T>
MmdValue<T> mmd_poly2(const BasicTensor<T>& source, const BasicTensor<T>& target);

struct LossWeights {
  double kd = 1.0;
  double rp = 1.0;
  double style = 0.0;
  double batch = 0.0;
  double pixel = 0.0;
  double bn = 0.0;

  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

struct LossTerms {
  double kd = 0, rp = 0, style = 0, batch = 0, pixel = 0, bn = 0;
};

/// Weighted sum of the translation loss terms; weights must be non-negative.
double total_sfit_loss(const LossWeights& w, const LossTerms& t);

/// Double-precision brute force over per-position D-vectors:
/// sum k(u_p,u_q) - 2 sum k(u_p,v_q) + sum k(v_p,v_q), k(u,v) = (u.v)^2.
/// Equals D^2 * style_loss(f_a, f_b) for a single image.
double mmd_poly2_oracle(const TensorD& f_a, const TensorD& f_b);

}  // namespace sfit::losses
