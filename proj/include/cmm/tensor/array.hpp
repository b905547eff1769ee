#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <new>
#include <type_traits>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace cmm {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ']';
  return os.str();
}

namespace detail {

// Leaves elements uninitialized on resize so outputs that are fully written
// skip a zero-fill pass.
template <typename T>
struct DefaultInitAllocator : std::allocator<T> {
  template <typename U>
  struct rebind {
    using other = DefaultInitAllocator<U>;
  };
  DefaultInitAllocator() = default;
  template <typename U>
  DefaultInitAllocator(const DefaultInitAllocator<U>&) noexcept {}

  // Fixed 64-byte alignment keeps vectorized kernels on the same code path
  // (and the same summation order) wherever the heap places a buffer.
  static constexpr std::align_val_t kAlign{64};
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

  template <typename U>
  void construct(U* p) noexcept(std::is_nothrow_default_constructible_v<U>) {
    ::new (static_cast<void*>(p)) U;
  }
  template <typename U, typename... Args>
  void construct(U* p, Args&&... args) {
    ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
  }
};

}  // namespace detail

// Dense row-major storage. The shape is fixed once constructed; a
// default-constructed Array is the "unallocated" state used for lazy gradients.
template <typename T>
class Array {
 public:
  using value_type = T;

  Array() = default;

  explicit Array(Shape shape, T fill = T(0)) : shape_(std::move(shape)) {
    check_shape();
    data_.assign(shape_numel(shape_), fill);
  }

  Array(Shape shape, const std::vector<T>& data) : shape_(std::move(shape)), data_(data.begin(), data.end()) {
    check_shape();
    if (shape_numel(shape_) != data_.size()) {
      throw ShapeError("Array: shape " + shape_str(shape_) + " does not match " +
                       std::to_string(data_.size()) + " elements");
    }
  }

  // Contents are unspecified until written.
  static Array uninitialized(Shape shape) {
    Array out;
    out.shape_ = std::move(shape);
    out.check_shape();
    out.data_.resize(shape_numel(out.shape_));
    return out;
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  T* ptr() { return data_.data(); }
  const T* ptr() const { return data_.data(); }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  Array reshaped(Shape shape) const& {
    Array out = *this;
    return std::move(out).reshaped(std::move(shape));
  }

  Array reshaped(Shape shape) && {
    if (shape_numel(shape) != data_.size()) {
      throw ShapeError("reshape: " + shape_str(shape_) + " -> " + shape_str(shape));
    }
    Array out;
    out.shape_ = std::move(shape);
    out.check_shape();
    out.data_ = std::move(data_);
    return out;
  }

  template <typename U>
  Array<U> cast() const {
    Array<U> out = Array<U>::uninitialized(shape_);
    std::copy(data_.begin(), data_.end(), out.ptr());
    return out;
  }

  bool operator==(const Array& other) const = default;

 private:
  void check_shape() const {
    if (shape_.empty()) throw ShapeError("Array: rank must be at least 1");
    for (std::size_t e : shape_) {
      if (e == 0) throw ShapeError("Array: zero extent in shape " + shape_str(shape_));
    }
  }

  Shape shape_;
  std::vector<T, detail::DefaultInitAllocator<T>> data_;
};

// Splits a shape around one axis into (outer, extent, inner) for strided loops.
struct AxisView {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

inline AxisView axis_view(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape));
  }
  AxisView v;
  for (std::size_t i = 0; i < axis; ++i) v.outer *= shape[i];
  v.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
  return v;
}

}  // namespace cmm
