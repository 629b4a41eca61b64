#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace gtseg {

using Shape = std::vector<int>;

// Cache-line aligned storage. Vectorized reductions peel a different number
// of leading elements depending on the base address, so a fixed alignment
// keeps results bit-reproducible from run to run.
template <typename T> struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <typename U> AlignedAllocator(const AlignedAllocator<U> &) noexcept {}

  T *allocate(std::size_t n) { return static_cast<T *>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T *p, std::size_t) noexcept { ::operator delete(p, kAlign); }

  template <typename U> bool operator==(const AlignedAllocator<U> &) const noexcept { return true; }
};

using Storage = std::vector<double, AlignedAllocator<double>>;

std::size_t shape_numel(const Shape &shape);
std::string shape_str(const Shape &shape);

// Dense row-major double tensor. Image batches are stored NCHW, token
// sequences as [N, T, D].
class Tensor {
public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::span<const double> values);
  Tensor(Shape shape, std::initializer_list<double> values)
      : Tensor(std::move(shape), std::span<const double>(values.begin(), values.size())) {}
  Tensor(Shape shape, const std::vector<double> &values) : Tensor(std::move(shape), std::span<const double>(values)) {}

  static Tensor zeros_like(const Tensor &other) { return Tensor(other.shape_); }

  const Shape &shape() const { return shape_; }
  int dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  double *data() { return values_.data(); }
  const double *data() const { return values_.data(); }
  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  Storage &storage() { return values_; }
  const Storage &storage() const { return values_; }

  double &operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  // NCHW element access.
  double &at(int n, int c, int h, int w) {
    return values_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  double at(int n, int c, int h, int w) const {
    return values_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  void fill(double value);
  // Adds other elementwise; shapes must agree.
  void add_(const Tensor &other);
  Tensor reshaped(Shape shape) const;

  bool same_shape(const Tensor &other) const { return shape_ == other.shape_; }
  bool all_finite() const;

private:
  Shape shape_;
  Storage values_;
};

// Throws std::invalid_argument with context when shapes differ.
void check_same_shape(const Tensor &a, const Tensor &b, const char *what);

} // namespace gtseg
