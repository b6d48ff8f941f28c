#pragma once

#include <cstddef>
#include <initializer_list>
#include <new>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "mdgr/error.hpp"

namespace mdgr {

// 64-byte aligned storage. Vectorized kernels peel loops by pointer
// alignment, so a fixed base alignment keeps results independent of where
// the heap places a buffer.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlignment{64};
  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}
  T* allocate(std::size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), kAlignment));
  }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlignment); }
  template <class U>
  friend bool operator==(const AlignedAllocator&, const AlignedAllocator<U>&) noexcept {
    return true;
  }
};

template <class T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

using Shape = std::vector<int>;

inline std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (int dim : shape) {
    n *= static_cast<std::size_t>(dim);
  }
  return n;
}

inline std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) {
      out += ",";
    }
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

// Dense row-major array. Rank 0 is not used; scalars have shape {1}.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T{0}) : shape_(std::move(shape)) {
    for (int dim : shape_) {
      require(dim > 0, ErrorKind::kShapeMismatch,
              "tensor dimensions must be positive, got " + shape_string(shape_));
    }
    data_.assign(shape_size(shape_), fill);
  }

  Tensor(Shape shape, std::span<const T> data)
      : shape_(std::move(shape)), data_(data.begin(), data.end()) {
    require(shape_size(shape_) == data_.size(), ErrorKind::kShapeMismatch,
            "tensor shape " + shape_string(shape_) + " does not match " +
                std::to_string(data_.size()) + " values");
  }

  static Tensor matrix(int rows, int cols, std::initializer_list<T> values) {
    return Tensor({rows, cols}, std::span<const T>(values.begin(), values.size()));
  }
  static Tensor vector(std::initializer_list<T> values) {
    return Tensor({static_cast<int>(values.size())}, std::span<const T>(values.begin(), values.size()));
  }
  static Tensor scalar(T value) { return Tensor({1}, std::span<const T>(&value, 1)); }

  const Shape& shape() const noexcept { return shape_; }
  int rank() const noexcept { return static_cast<int>(shape_.size()); }
  int dim(int axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  // Matrix view: rows = product of leading dims, cols = last dim.
  int rows() const { return static_cast<int>(data_.size() / static_cast<std::size_t>(cols())); }
  int cols() const { return shape_.empty() ? 0 : shape_.back(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  AlignedVector<T>& storage() noexcept { return data_; }
  const AlignedVector<T>& storage() const noexcept { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }
  T& at(int r, int c) { return data_[static_cast<std::size_t>(r) * cols() + c]; }
  const T& at(int r, int c) const { return data_[static_cast<std::size_t>(r) * cols() + c]; }

  std::span<T> row(int r) {
    return std::span<T>(data_).subspan(static_cast<std::size_t>(r) * cols(), cols());
  }
  std::span<const T> row(int r) const {
    return std::span<const T>(data_).subspan(static_cast<std::size_t>(r) * cols(), cols());
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  template <class U>
  Tensor<U> cast() const {
    const std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::span<const U>(out));
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  AlignedVector<T> data_;
};

}  // namespace mdgr
