#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "distillkit/losses.hpp"
#include "distillkit/nn.hpp"
#include "distillkit/tensor.hpp"

namespace distillkit::detail {

inline Matrix to_matrix(const Tensor &t) {
  const auto rows = t.dim(0);
  const auto cols = rows ? t.size() / rows : (t.rank() > 1 ? t.dim(1) : 0);
  Matrix m(rows, cols);
  for (std::int64_t i = 0; i < rows; ++i)
    for (std::int64_t j = 0; j < cols; ++j) m(i, j) = t[i * cols + j];
  return m;
}

inline Tensor to_tensor(const Matrix &m) {
  Tensor t(Shape{m.rows(), m.cols()});
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) t[i * m.cols() + j] = static_cast<float>(m(i, j));
  return t;
}

/// Row positions [0,n) shuffled and chunked into batches of `batch_size`;
/// a trailing batch smaller than `min_size` is dropped.
inline std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, int batch_size,
                                                           std::size_t min_size,
                                                           std::mt19937_64 &rng) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> batches;
  const auto bs = static_cast<std::size_t>(batch_size);
  for (std::size_t begin = 0; begin < n; begin += bs) {
    const auto end = std::min(n, begin + bs);
    if (end - begin < min_size) break;
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(begin),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

/// Copies the given rows of a [N, ...] tensor.
inline Tensor gather_rows(const Tensor &t, const std::vector<std::size_t> &rows) {
  Shape shape = t.shape();
  const auto stride = shape[0] ? t.size() / shape[0] : 0;
  shape[0] = static_cast<std::int64_t>(rows.size());
  Tensor out(shape);
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy(t.data() + static_cast<std::int64_t>(rows[i]) * stride,
              t.data() + static_cast<std::int64_t>(rows[i] + 1) * stride,
              out.data() + static_cast<std::int64_t>(i) * stride);
  return out;
}

inline double squared_norm(const std::vector<Parameter> &params,
                           const std::set<std::string> &frozen) {
  double s = 0.0;
  for (const auto &p : params) {
    if (frozen.contains(p.name)) continue;
    for (float v : p.value.values()) s += static_cast<double>(v) * v;
  }
  return s;
}

/// grads[p] += scale * theta for unfrozen p.
inline void add_weight_decay(std::vector<Tensor> &grads, const std::vector<Parameter> &params,
                             const std::set<std::string> &frozen, double scale) {
  if (scale == 0.0) return;
  for (std::size_t p = 0; p < params.size(); ++p) {
    if (frozen.contains(params[p].name)) continue;
    const auto &v = params[p].value;
    auto &g = grads[p];
    for (std::int64_t i = 0; i < v.size(); ++i)
      g[i] = static_cast<float>(g[i] + scale * v[i]);
  }
}

} // namespace distillkit::detail
