#include "distillkit/nn.hpp"

#include <cmath>

#include <Eigen/Core>

#include "distillkit/error.hpp"

namespace distillkit::nn {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;
using ConstMapVec = Eigen::Map<const Eigen::RowVectorXf>;
using MapVec = Eigen::Map<Eigen::RowVectorXf>;

template <class... Ts> struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts> overloaded(Ts...) -> overloaded<Ts...>;

float sigmoid(float x) { return 1.0f / (1.0f + std::exp(-x)); }

void require_rank(const Tensor &x, std::size_t rank, const char *layer) {
  if (x.rank() != rank)
    throw InvalidArgumentError(std::string(layer) + " expects rank " + std::to_string(rank) +
                               " input, got " + shape_to_string(x.shape()));
}

// ---- Conv2d -------------------------------------------------------------

Tensor conv_forward(const Conv2d &l, const std::vector<Parameter> &params, const Tensor &x,
                    LayerCache *cache) {
  require_rank(x, 4, "Conv2d");
  const int b = static_cast<int>(x.dim(0)), h = static_cast<int>(x.dim(1)),
            w = static_cast<int>(x.dim(2)), cin = static_cast<int>(x.dim(3));
  if (cin != l.in_channels)
    throw InvalidArgumentError("Conv2d channel mismatch: expected " +
                               std::to_string(l.in_channels) + ", got " + std::to_string(cin));
  const int k = l.kernel_size;
  const int ho = conv_output_size(h, k, l.stride, l.padding);
  const int wo = conv_output_size(w, k, l.stride, l.padding);
  const std::int64_t rows = static_cast<std::int64_t>(b) * ho * wo;
  const std::int64_t kdim = static_cast<std::int64_t>(k) * k * cin;

  Tensor col(Shape{rows, kdim});
  float *cp = col.data();
  const float *xp = x.data();
  for (int n = 0; n < b; ++n)
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox) {
        for (int ky = 0; ky < k; ++ky) {
          const int iy = oy * l.stride - l.padding + ky;
          for (int kx = 0; kx < k; ++kx) {
            const int ix = ox * l.stride - l.padding + kx;
            if (iy >= 0 && iy < h && ix >= 0 && ix < w) {
              const float *src = xp + ((static_cast<std::int64_t>(n) * h + iy) * w + ix) * cin;
              std::copy(src, src + cin, cp);
            }
            cp += cin;
          }
        }
      }

  const auto &kernel = params[l.kernel].value;
  const auto &bias = params[l.bias].value;
  Tensor y(Shape{b, ho, wo, l.out_channels});
  MapMat ym(y.data(), rows, l.out_channels);
  ym.noalias() = ConstMapMat(col.data(), rows, kdim) *
                 ConstMapMat(kernel.data(), kdim, l.out_channels);
  ym.rowwise() += ConstMapVec(bias.data(), l.out_channels);

  if (cache) {
    cache->input_shape = x.shape();
    cache->aux = std::move(col);
  }
  return y;
}

Tensor conv_backward(const Conv2d &l, const std::vector<Parameter> &params,
                     const LayerCache &cache, const Tensor &dy, std::vector<Tensor> &grads,
                     bool need_input_grad) {
  const auto &in_shape = cache.input_shape;
  const int b = static_cast<int>(in_shape[0]), h = static_cast<int>(in_shape[1]),
            w = static_cast<int>(in_shape[2]), cin = static_cast<int>(in_shape[3]);
  const int k = l.kernel_size;
  const int ho = static_cast<int>(dy.dim(1)), wo = static_cast<int>(dy.dim(2));
  const std::int64_t rows = static_cast<std::int64_t>(b) * ho * wo;
  const std::int64_t kdim = static_cast<std::int64_t>(k) * k * cin;

  ConstMapMat dym(dy.data(), rows, l.out_channels);
  ConstMapMat col(cache.aux.data(), rows, kdim);
  MapMat(grads[l.kernel].data(), kdim, l.out_channels).noalias() += col.transpose() * dym;
  MapVec(grads[l.bias].data(), l.out_channels) += dym.colwise().sum();

  if (!need_input_grad) return {};

  RowMat dcol = dym * ConstMapMat(params[l.kernel].value.data(), kdim, l.out_channels).transpose();
  Tensor dx(in_shape);
  float *dxp = dx.data();
  const float *cp = dcol.data();
  for (int n = 0; n < b; ++n)
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox) {
        for (int ky = 0; ky < k; ++ky) {
          const int iy = oy * l.stride - l.padding + ky;
          for (int kx = 0; kx < k; ++kx) {
            const int ix = ox * l.stride - l.padding + kx;
            if (iy >= 0 && iy < h && ix >= 0 && ix < w) {
              float *dst = dxp + ((static_cast<std::int64_t>(n) * h + iy) * w + ix) * cin;
              for (int c = 0; c < cin; ++c) dst[c] += cp[c];
            }
            cp += cin;
          }
        }
      }
  return dx;
}

// ---- LayerNorm ----------------------------------------------------------

Tensor norm_forward(const LayerNorm &l, const std::vector<Parameter> &params, const Tensor &x,
                    LayerCache *cache) {
  require_rank(x, 4, "LayerNorm");
  const auto b = x.dim(0);
  const auto c = x.dim(3);
  const auto per = x.size() / std::max<std::int64_t>(b, 1);
  const auto &gamma = params[l.gamma].value;
  const auto &beta = params[l.beta].value;
  if (gamma.size() != c) throw InvalidArgumentError("LayerNorm channel mismatch");

  Tensor xhat(x.shape());
  Tensor y(x.shape());
  std::vector<float> inv(static_cast<std::size_t>(b));
  for (std::int64_t n = 0; n < b; ++n) {
    const float *xp = x.data() + n * per;
    double mean = 0.0;
    for (std::int64_t i = 0; i < per; ++i) mean += xp[i];
    mean /= static_cast<double>(per);
    double var = 0.0;
    for (std::int64_t i = 0; i < per; ++i) {
      const double d = xp[i] - mean;
      var += d * d;
    }
    var /= static_cast<double>(per);
    const auto is = static_cast<float>(1.0 / std::sqrt(var + l.epsilon));
    inv[static_cast<std::size_t>(n)] = is;
    float *hp = xhat.data() + n * per;
    float *yp = y.data() + n * per;
    for (std::int64_t i = 0; i < per; ++i) {
      hp[i] = static_cast<float>(xp[i] - mean) * is;
      const auto ch = i % c;
      yp[i] = gamma[ch] * hp[i] + beta[ch];
    }
  }
  if (cache) {
    cache->input_shape = x.shape();
    cache->aux = std::move(xhat);
    cache->inv = std::move(inv);
  }
  return y;
}

Tensor norm_backward(const LayerNorm &l, const std::vector<Parameter> &params,
                     const LayerCache &cache, const Tensor &dy, std::vector<Tensor> &grads,
                     bool need_input_grad) {
  const auto &xhat = cache.aux;
  const auto b = cache.input_shape[0];
  const auto c = cache.input_shape[3];
  const auto per = xhat.size() / std::max<std::int64_t>(b, 1);
  const auto &gamma = params[l.gamma].value;
  auto &dgamma = grads[l.gamma];
  auto &dbeta = grads[l.beta];

  Tensor dx = need_input_grad ? Tensor(cache.input_shape) : Tensor();
  std::vector<float> dxhat(static_cast<std::size_t>(per));
  for (std::int64_t n = 0; n < b; ++n) {
    const float *hp = xhat.data() + n * per;
    const float *dp = dy.data() + n * per;
    double sum_d = 0.0, sum_dh = 0.0;
    for (std::int64_t i = 0; i < per; ++i) {
      const auto ch = i % c;
      dgamma[ch] += dp[i] * hp[i];
      dbeta[ch] += dp[i];
      const float g = dp[i] * gamma[ch];
      dxhat[static_cast<std::size_t>(i)] = g;
      sum_d += g;
      sum_dh += static_cast<double>(g) * hp[i];
    }
    if (!need_input_grad) continue;
    const float is = cache.inv[static_cast<std::size_t>(n)];
    const auto mean_d = static_cast<float>(sum_d / static_cast<double>(per));
    const auto mean_dh = static_cast<float>(sum_dh / static_cast<double>(per));
    float *xp = dx.data() + n * per;
    for (std::int64_t i = 0; i < per; ++i)
      xp[i] = is * (dxhat[static_cast<std::size_t>(i)] - mean_d - hp[i] * mean_dh);
  }
  return dx;
}

// ---- Dense --------------------------------------------------------------

Tensor dense_forward(const Dense &l, const std::vector<Parameter> &params, const Tensor &x,
                     LayerCache *cache) {
  require_rank(x, 2, "Dense");
  if (x.dim(1) != l.in_features)
    throw InvalidArgumentError("Dense input width mismatch: expected " +
                               std::to_string(l.in_features) + ", got " +
                               std::to_string(x.dim(1)));
  const auto b = x.dim(0);
  Tensor y(Shape{b, l.out_features});
  MapMat ym(y.data(), b, l.out_features);
  ym.noalias() = ConstMapMat(x.data(), b, l.in_features) *
                 ConstMapMat(params[l.kernel].value.data(), l.in_features, l.out_features);
  ym.rowwise() += ConstMapVec(params[l.bias].value.data(), l.out_features);
  if (cache) {
    cache->input_shape = x.shape();
    cache->input = x;
  }
  return y;
}

Tensor dense_backward(const Dense &l, const std::vector<Parameter> &params,
                      const LayerCache &cache, const Tensor &dy, std::vector<Tensor> &grads,
                      bool need_input_grad) {
  const auto b = cache.input_shape[0];
  ConstMapMat dym(dy.data(), b, l.out_features);
  ConstMapMat xm(cache.input.data(), b, l.in_features);
  MapMat(grads[l.kernel].data(), l.in_features, l.out_features).noalias() += xm.transpose() * dym;
  MapVec(grads[l.bias].data(), l.out_features) += dym.colwise().sum();
  if (!need_input_grad) return {};
  Tensor dx(cache.input_shape);
  MapMat(dx.data(), b, l.in_features).noalias() =
      dym * ConstMapMat(params[l.kernel].value.data(), l.in_features, l.out_features).transpose();
  return dx;
}

// ---- Silu / pooling -----------------------------------------------------

Tensor silu_forward(const Tensor &x, LayerCache *cache) {
  Tensor y(x.shape());
  for (std::int64_t i = 0; i < x.size(); ++i) y[i] = x[i] * sigmoid(x[i]);
  if (cache) {
    cache->input_shape = x.shape();
    cache->input = x;
  }
  return y;
}

Tensor silu_backward(const LayerCache &cache, const Tensor &dy) {
  const auto &x = cache.input;
  Tensor dx(x.shape());
  for (std::int64_t i = 0; i < x.size(); ++i) {
    const float s = sigmoid(x[i]);
    dx[i] = dy[i] * s * (1.0f + x[i] * (1.0f - s));
  }
  return dx;
}

Tensor pool_forward(const Tensor &x, LayerCache *cache) {
  require_rank(x, 4, "GlobalAvgPool");
  const auto b = x.dim(0), hw = x.dim(1) * x.dim(2), c = x.dim(3);
  Tensor y(Shape{b, c});
  for (std::int64_t n = 0; n < b; ++n) {
    ConstMapMat xm(x.data() + n * hw * c, hw, c);
    MapVec(y.data() + n * c, c) = xm.colwise().sum() / static_cast<float>(hw);
  }
  if (cache) cache->input_shape = x.shape();
  return y;
}

Tensor pool_backward(const LayerCache &cache, const Tensor &dy) {
  const auto &s = cache.input_shape;
  const auto b = s[0], hw = s[1] * s[2], c = s[3];
  Tensor dx(s);
  const float scale = 1.0f / static_cast<float>(hw);
  for (std::int64_t n = 0; n < b; ++n)
    for (std::int64_t p = 0; p < hw; ++p)
      for (std::int64_t ch = 0; ch < c; ++ch)
        dx[(n * hw + p) * c + ch] = dy[n * c + ch] * scale;
  return dx;
}

float glorot_limit(std::int64_t fan_in, std::int64_t fan_out) {
  return static_cast<float>(std::sqrt(6.0 / static_cast<double>(fan_in + fan_out)));
}

Tensor glorot_uniform(Shape shape, std::int64_t fan_in, std::int64_t fan_out,
                      std::mt19937_64 &rng) {
  Tensor t(std::move(shape));
  const float limit = glorot_limit(fan_in, fan_out);
  std::uniform_real_distribution<float> dist(-limit, limit);
  for (auto &v : t.values()) v = dist(rng);
  return t;
}

} // namespace

int conv_output_size(int input, int kernel, int stride, int padding) {
  return (input + 2 * padding - kernel) / stride + 1;
}

Tensor forward(const Layer &layer, const std::vector<Parameter> &params, const Tensor &x,
               LayerCache *cache) {
  return std::visit(
      overloaded{
          [&](const Conv2d &l) { return conv_forward(l, params, x, cache); },
          [&](const LayerNorm &l) { return norm_forward(l, params, x, cache); },
          [&](const Dense &l) { return dense_forward(l, params, x, cache); },
          [&](const Silu &) { return silu_forward(x, cache); },
          [&](const GlobalAvgPool &) { return pool_forward(x, cache); },
      },
      layer);
}

Tensor backward(const Layer &layer, const std::vector<Parameter> &params,
                const LayerCache &cache, const Tensor &dy, std::vector<Tensor> &grads,
                bool need_input_grad) {
  return std::visit(
      overloaded{
          [&](const Conv2d &l) {
            return conv_backward(l, params, cache, dy, grads, need_input_grad);
          },
          [&](const LayerNorm &l) {
            return norm_backward(l, params, cache, dy, grads, need_input_grad);
          },
          [&](const Dense &l) {
            return dense_backward(l, params, cache, dy, grads, need_input_grad);
          },
          [&](const Silu &) { return silu_backward(cache, dy); },
          [&](const GlobalAvgPool &) { return pool_backward(cache, dy); },
      },
      layer);
}

Conv2d make_conv(std::vector<Parameter> &params, const std::string &prefix, int in_channels,
                 int out_channels, int stride, std::mt19937_64 &rng) {
  Conv2d l;
  l.in_channels = in_channels;
  l.out_channels = out_channels;
  l.stride = stride;
  const std::int64_t k = l.kernel_size;
  l.kernel = params.size();
  params.push_back({prefix + "/kernel",
                    glorot_uniform(Shape{k, k, in_channels, out_channels}, k * k * in_channels,
                                   k * k * out_channels, rng)});
  l.bias = params.size();
  params.push_back({prefix + "/bias", Tensor(Shape{out_channels})});
  return l;
}

LayerNorm make_layer_norm(std::vector<Parameter> &params, const std::string &prefix,
                          int channels) {
  LayerNorm l;
  l.gamma = params.size();
  params.push_back({prefix + "/gamma", Tensor(Shape{channels}, 1.0f)});
  l.beta = params.size();
  params.push_back({prefix + "/beta", Tensor(Shape{channels})});
  return l;
}

Dense make_dense(std::vector<Parameter> &params, const std::string &prefix, int in_features,
                 int out_features, std::mt19937_64 &rng) {
  Dense l;
  l.in_features = in_features;
  l.out_features = out_features;
  l.kernel = params.size();
  params.push_back({prefix + "/kernel", glorot_uniform(Shape{in_features, out_features},
                                                       in_features, out_features, rng)});
  l.bias = params.size();
  params.push_back({prefix + "/bias", Tensor(Shape{out_features})});
  return l;
}

} // namespace distillkit::nn
