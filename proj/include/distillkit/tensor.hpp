#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace distillkit {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_size(const Shape &shape);
std::string shape_to_string(const Shape &shape);

/// Dense row-major float32 tensor. Images are stored NHWC.
class Tensor {
public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> values);

  const Shape &shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::int64_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  float *data() { return data_.data(); }
  const float *data() const { return data_.data(); }
  std::span<float> values() { return data_; }
  std::span<const float> values() const { return data_; }

  float &operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  float operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  void fill(float value);
  Tensor reshaped(Shape shape) const;

  /// Copies rows [begin, end) along the leading axis.
  Tensor slice_rows(std::int64_t begin, std::int64_t end) const;

private:
  Shape shape_;
  std::vector<float> data_;
};

/// True iff shapes match and every element has the same bit pattern.
bool bit_equal(const Tensor &a, const Tensor &b);

/// Stacks equally-shaped tensors along a new leading axis.
Tensor stack(std::span<const Tensor> parts);

} // namespace distillkit
