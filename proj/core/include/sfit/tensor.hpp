#pragma once

#include <cstddef>
#include <functional>
#include <new>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "sfit/error.hpp"

namespace sfit {

using Shape = std::vector<int>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         [](std::size_t acc, int d) { return acc * static_cast<std::size_t>(d); });
}

std::string shape_string(const Shape& shape);

/// 64-byte aligned storage. Vectorized reductions peel by pointer alignment,
/// so a fixed alignment keeps floating-point results reproducible run to run.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlignment{64};

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlignment)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlignment); }

  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

/// Dense row-major array. Rank-4 image batches are laid out N x C x H x W.
template <class T>
class BasicTensor {
 public:
  using value_type = T;
  using Storage = std::vector<T, AlignedAllocator<T>>;

  BasicTensor() = default;

  explicit BasicTensor(Shape shape, T fill = T{})
      : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

  BasicTensor(Shape shape, const std::vector<T>& data)
      : BasicTensor(std::move(shape), Storage(data.begin(), data.end())) {}

  BasicTensor(Shape shape, Storage data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_size(shape_)) {
      throw Error(Errc::ShapeMismatch, "payload of " + std::to_string(data_.size()) +
                                           " values does not fit shape " + shape_string(shape_));
    }
  }

  const Shape& shape() const noexcept { return shape_; }
  int rank() const noexcept { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  /// Size of one slice along the leading axis.
  std::size_t stride0() const { return shape_.empty() || shape_[0] == 0 ? 0 : data_.size() / shape_[0]; }

  BasicTensor reshaped(Shape shape) const {
    if (shape_size(shape) != data_.size()) {
      throw Error(Errc::ShapeMismatch, "cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    }
    return BasicTensor(std::move(shape), data_);
  }

  template <class U>
  BasicTensor<U> cast() const {
    return BasicTensor<U>(shape_, typename BasicTensor<U>::Storage(data_.begin(), data_.end()));
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  Storage data_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

template <class T>
void require_same_shape(const BasicTensor<T>& a, const BasicTensor<T>& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw Error(Errc::ShapeMismatch,
                std::string(what) + ": " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
}

/// Copies rows `indices` of the leading axis into a new tensor.
template <class T>
BasicTensor<T> gather_rows(const BasicTensor<T>& src, std::span<const std::size_t> indices) {
  Shape shape = src.shape();
  shape[0] = static_cast<int>(indices.size());
  BasicTensor<T> out(shape);
  const std::size_t stride = src.stride0();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    std::copy_n(src.data() + indices[i] * stride, stride, out.data() + i * stride);
  }
  return out;
}

/// Rows [begin, end) of the leading axis.
template <class T>
BasicTensor<T> slice_rows(const BasicTensor<T>& src, std::size_t begin, std::size_t end) {
  Shape shape = src.shape();
  shape[0] = static_cast<int>(end - begin);
  const std::size_t stride = src.stride0();
  typename BasicTensor<T>::Storage data(src.data() + begin * stride, src.data() + end * stride);
  return BasicTensor<T>(std::move(shape), std::move(data));
}

}  // namespace sfit
