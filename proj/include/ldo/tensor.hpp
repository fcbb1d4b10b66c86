#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <new>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ldo/error.hpp"

namespace ldo {

using Shape = std::vector<std::size_t>;

/// 64-byte aligned storage. Vectorized kernels peel differently depending on
/// buffer alignment, which would change summation order between runs.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlignment{64};

  AlignedAllocator() noexcept = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlignment)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlignment); }

  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

using FloatBuffer = std::vector<float, AlignedAllocator<float>>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "x" : "") << shape[i];
  out << ']';
  return out.str();
}

/// Dense row-major float tensor. Rank 0 is not used; scalars are shape {1}.
struct Tensor {
  Shape shape;
  FloatBuffer values;

  Tensor() = default;

  explicit Tensor(Shape s, float fill = 0.0f) : shape(std::move(s)), values(shape_size(shape), fill) {
    check_extents();
  }

  Tensor(Shape s, FloatBuffer v) : shape(std::move(s)), values(std::move(v)) { check_count(); }
  Tensor(Shape s, const std::vector<float>& v) : shape(std::move(s)), values(v.begin(), v.end()) { check_count(); }
  Tensor(Shape s, std::initializer_list<float> v) : shape(std::move(s)), values(v) { check_count(); }

  static Tensor scalar(float v) { return Tensor({1}, {v}); }

  std::size_t size() const noexcept { return values.size(); }
  std::size_t rank() const noexcept { return shape.size(); }
  std::size_t rows() const { return shape.empty() ? 0 : shape.front(); }
  /// Extent of the trailing axis; rank-1 tensors are treated as a single row.
  std::size_t cols() const { return shape.empty() ? 0 : (rank() == 1 ? shape[0] : size() / shape[0]); }

  float& operator[](std::size_t i) { return values[i]; }
  float operator[](std::size_t i) const { return values[i]; }
  float& at(std::size_t r, std::size_t c) { return values[r * cols() + c]; }
  float at(std::size_t r, std::size_t c) const { return values[r * cols() + c]; }

  float* data() noexcept { return values.data(); }
  const float* data() const noexcept { return values.data(); }

  bool all_finite() const {
    return std::all_of(values.begin(), values.end(), [](float x) { return std::isfinite(x); });
  }

  void fill(float v) { std::fill(values.begin(), values.end(), v); }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  void check_count() const {
    check_extents();
    if (values.size() != shape_size(shape)) {
      throw dimension_error("tensor of shape " + shape_string(shape) + " given " +
                            std::to_string(values.size()) + " values");
    }
  }

  void check_extents() const {
    for (auto e : shape) {
      if (e == 0) throw dimension_error("tensor extents must be positive, got " + shape_string(shape));
    }
  }
};

}  // namespace ldo
