#include "distillkit/tensor.hpp"

#include <algorithm>
#include <cstring>
#include <functional>
#include <numeric>

#include "distillkit/error.hpp"

namespace distillkit {

std::int64_t shape_size(const Shape &shape) {
  return std::accumulate(shape.begin(), shape.end(), std::int64_t{1},
                         std::multiplies<>());
}

std::string shape_to_string(const Shape &shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

Tensor::Tensor(Shape shape, float fill) : shape_(std::move(shape)) {
  for (auto d : shape_)
    if (d < 0) throw InvalidArgumentError("negative tensor dimension");
  data_.assign(static_cast<std::size_t>(shape_size(shape_)), fill);
}

Tensor::Tensor(Shape shape, std::vector<float> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  if (shape_size(shape_) != static_cast<std::int64_t>(data_.size()))
    throw InvalidArgumentError("tensor shape " + shape_to_string(shape_) +
                               " does not match " +
                               std::to_string(data_.size()) + " values");
}

void Tensor::fill(float value) { std::fill(data_.begin(), data_.end(), value); }

Tensor Tensor::reshaped(Shape shape) const {
  return Tensor(std::move(shape), data_);
}

Tensor Tensor::slice_rows(std::int64_t begin, std::int64_t end) const {
  if (shape_.empty() || begin < 0 || end < begin || end > shape_[0])
    throw InvalidArgumentError("slice_rows out of range");
  Shape out_shape = shape_;
  out_shape[0] = end - begin;
  const std::int64_t row = shape_[0] ? size() / shape_[0] : 0;
  std::vector<float> out(data_.begin() + begin * row, data_.begin() + end * row);
  return Tensor(std::move(out_shape), std::move(out));
}

bool bit_equal(const Tensor &a, const Tensor &b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data(), b.data(),
                     static_cast<std::size_t>(a.size()) * sizeof(float)) == 0;
}

Tensor stack(std::span<const Tensor> parts) {
  if (parts.empty()) return Tensor(Shape{0});
  Shape shape = parts.front().shape();
  shape.insert(shape.begin(), static_cast<std::int64_t>(parts.size()));
  std::vector<float> values;
  values.reserve(static_cast<std::size_t>(shape_size(shape)));
  for (const auto &p : parts) {
    if (p.shape() != parts.front().shape())
      throw InvalidArgumentError("stack: mismatched shapes");
    values.insert(values.end(), p.values().begin(), p.values().end());
  }
  return Tensor(std::move(shape), std::move(values));
}

} // namespace distillkit
