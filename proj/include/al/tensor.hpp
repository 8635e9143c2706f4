#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "al/error.hpp"

namespace al {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major n-dimensional array. Element type is float in every
/// production path; the double instantiation exists for gradient checks.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;

  explicit BasicTensor(Shape shape, T fill = T{0})
      : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {
    check_dims();
  }

  BasicTensor(Shape shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check_dims();
    if (data_.size() != shape_numel(shape_)) {
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_str(shape_));
    }
  }

  static BasicTensor scalar(T value) { return BasicTensor(Shape{1}, std::vector<T>{value}); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const {
    if (axis >= shape_.size()) {
      throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                           shape_str(shape_));
    }
    return shape_[axis];
  }
  std::size_t numel() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<T> data() & noexcept { return data_; }
  std::span<const T> data() const& noexcept { return data_; }
  // a span into a temporary would dangle
  std::span<const T> data() && = delete;
  T* raw() noexcept { return data_.data(); }
  const T* raw() const noexcept { return data_.data(); }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  T item() const {
    if (data_.size() != 1) {
      throw DimensionError("item() on tensor of shape " + shape_str(shape_));
    }
    return data_[0];
  }

  bool requires_grad() const noexcept { return requires_grad_; }
  void set_requires_grad(bool on) noexcept { requires_grad_ = on; }

  const std::optional<std::vector<T>>& grad() const noexcept { return grad_; }
  void set_grad(std::vector<T> grad) {
    if (grad.size() != data_.size()) {
      throw DimensionError("gradient length " + std::to_string(grad.size()) +
                           " does not match tensor of shape " + shape_str(shape_));
    }
    grad_ = std::move(grad);
  }
  void clear_grad() noexcept { grad_.reset(); }

  BasicTensor reshaped(Shape shape) const {
    if (shape_numel(shape) != data_.size()) {
      throw DimensionError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    }
    return BasicTensor(std::move(shape), data_);
  }

  template <typename U>
  BasicTensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return BasicTensor<U>(shape_, std::move(out));
  }

 private:
  void check_dims() const {
    for (std::size_t d : shape_) {
      if (d == 0) throw DimensionError("zero-sized dimension in shape " + shape_str(shape_));
    }
  }

  Shape shape_;
  std::vector<T> data_;
  bool requires_grad_ = false;
  std::optional<std::vector<T>> grad_;
};

using Tensor = BasicTensor<float>;

/// Byte-level equality of shape and values (distinguishes -0.0 from 0.0).
bool bit_equal(const Tensor& a, const Tensor& b);
bool all_finite(const Tensor& t);

// Serialization: little-endian; rank (u32), dims (u32 each),
// dtype tag (u32: 0=f32, 1=i8), then raw values.
enum class DType : std::uint32_t { f32 = 0, i8 = 1 };

struct TensorRecord {
  Shape shape;
  DType dtype = DType::f32;
  std::vector<float> f32;
  std::vector<std::int8_t> i8;

  Tensor as_float() const;
};

void write_tensor(std::ostream& os, const Tensor& t);
void write_tensor_i8(std::ostream& os, const Shape& shape, std::span<const std::int8_t> values);
TensorRecord read_tensor_record(std::istream& is);
/// Reads an f32 record; i8 records are refused.
Tensor read_tensor(std::istream& is);

void save_tensor_file(const std::string& path, const Tensor& t);
Tensor load_tensor_file(const std::string& path);

}  // namespace al
