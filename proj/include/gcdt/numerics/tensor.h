#pragma once

#include <cstddef>
#include <initializer_list>
#include <new>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace gcdt::num {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// Thrown for every shape or dimension disagreement in the numerical core.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline constexpr std::size_t kTensorAlignment = 64;

/// Allocates on kTensorAlignment boundaries. Vectorized reductions peel
/// elements up to the first aligned address, so a fixed base alignment keeps
/// their summation order, and therefore their results, reproducible.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}
  T* allocate(std::size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t{kTensorAlignment}));
  }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, std::align_val_t{kTensorAlignment}); }
  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

template <typename T>
using Storage = std::vector<T, AlignedAllocator<T>>;

/// Dense row-major tensor that owns its storage.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, Storage<T> data);
  Tensor(Shape shape, const std::vector<T>& data) : Tensor(std::move(shape), Storage<T>(data.begin(), data.end())) {}
  Tensor(Shape shape, std::initializer_list<T> data) : Tensor(std::move(shape), Storage<T>(data)) {}

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  T* raw() { return data_.data(); }
  const T* raw() const { return data_.data(); }
  Storage<T>& storage() { return data_; }
  const Storage<T>& storage() const { return data_; }
  std::vector<T> to_vector() const { return {data_.begin(), data_.end()}; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  /// Value of a one-element tensor.
  T item() const;

  /// Same data under a new shape with equal element count.
  Tensor reshaped(Shape shape) const;

  void fill(T value);

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  Storage<T> data_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;

/// Keeps large freed tensor buffers in the heap instead of returning them to
/// the OS after every tape. Call once at program start; no-op off glibc.
void tune_allocator();

}  // namespace gcdt::num
