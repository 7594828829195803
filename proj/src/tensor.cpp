#include "gcdt/numerics/tensor.h"

#include <algorithm>
#include <functional>
#include <numeric>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace gcdt::num {

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

namespace {
void check_dims(const Shape& shape) {
  if (std::any_of(shape.begin(), shape.end(), [](std::size_t d) { return d == 0; }))
    throw ShapeError("tensor dimensions must be positive, got " + to_string(shape));
}
}  // namespace

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)) {
  check_dims(shape_);
  data_.assign(num::numel(shape_), fill);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, Storage<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
  check_dims(shape_);
  if (num::numel(shape_) != data_.size())
    throw ShapeError("tensor of shape " + to_string(shape_) + " needs " +
                     std::to_string(num::numel(shape_)) + " values, got " + std::to_string(data_.size()));
}

template <typename T>
T Tensor<T>::item() const {
  if (data_.size() != 1)
    throw ShapeError("item() on tensor of shape " + to_string(shape_));
  return data_[0];
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
  if (num::numel(shape) != data_.size())
    throw ShapeError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
  return Tensor(std::move(shape), data_);
}

template <typename T>
void Tensor<T>::fill(T value) {
  std::fill(data_.begin(), data_.end(), value);
}

template class Tensor<float>;
template class Tensor<double>;

void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
#endif
}

}  // namespace gcdt::num
