#pragma once

// Minimal differentiable layers over NHWC tensors. Each layer caches what its
// backward pass needs from the most recent forward call; backward returns the
// input gradient and accumulates parameter gradients unless the parameter is
// frozen.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "vaereg/errors.hpp"
#include "vaereg/tensor.hpp"

namespace vaereg::nn {

template <typename T>
using ConstRowMap = Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>;

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool frozen = false;

  Parameter(std::string n, Shape shape) : name(std::move(n)), value(shape), grad(shape) {}
};

template <typename T>
using ParameterRefs = std::vector<Parameter<T>*>;

template <typename T>
void normal_init(Parameter<T>& p, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : p.value.values()) v = static_cast<T>(dist(rng));
}

struct ConvGeometry {
  std::size_t in_h, in_w, in_c;
  std::size_t kernel, stride, pad;
  std::size_t out_h, out_w;

  static ConvGeometry forward(std::size_t h, std::size_t w, std::size_t c, std::size_t k,
                              std::size_t s, std::size_t p) {
    if (h + 2 * p < k || w + 2 * p < k) throw ArgumentError("convolution kernel larger than input");
    return {h, w, c, k, s, p, (h + 2 * p - k) / s + 1, (w + 2 * p - k) / s + 1};
  }
  std::size_t patch() const { return kernel * kernel * in_c; }
};

// rows: (n, oy, ox); columns: (ky, kx, c)
template <typename T>
void im2col(const T* x, std::size_t batch, const ConvGeometry& g, T* cols) {
  const std::size_t patch = g.patch();
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t oy = 0; oy < g.out_h; ++oy)
      for (std::size_t ox = 0; ox < g.out_w; ++ox) {
        T* row = cols + ((n * g.out_h + oy) * g.out_w + ox) * patch;
        for (std::size_t ky = 0; ky < g.kernel; ++ky) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          for (std::size_t kx = 0; kx < g.kernel; ++kx) {
            T* dst = row + (ky * g.kernel + kx) * g.in_c;
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            if (iy < 0 || ix < 0 || iy >= static_cast<long>(g.in_h) ||
                ix >= static_cast<long>(g.in_w)) {
              std::fill(dst, dst + g.in_c, T{0});
            } else {
              const T* src = x + ((n * g.in_h + iy) * g.in_w + ix) * g.in_c;
              std::copy(src, src + g.in_c, dst);
            }
          }
        }
      }
}

// Adjoint of im2col; accumulates into x.
template <typename T>
void col2im(const T* cols, std::size_t batch, const ConvGeometry& g, T* x) {
  const std::size_t patch = g.patch();
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t oy = 0; oy < g.out_h; ++oy)
      for (std::size_t ox = 0; ox < g.out_w; ++ox) {
        const T* row = cols + ((n * g.out_h + oy) * g.out_w + ox) * patch;
        for (std::size_t ky = 0; ky < g.kernel; ++ky) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.in_h)) continue;
          for (std::size_t kx = 0; kx < g.kernel; ++kx) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            if (ix < 0 || ix >= static_cast<long>(g.in_w)) continue;
            const T* src = row + (ky * g.kernel + kx) * g.in_c;
            T* dst = x + ((n * g.in_h + iy) * g.in_w + ix) * g.in_c;
            for (std::size_t c = 0; c < g.in_c; ++c) dst[c] += src[c];
          }
        }
      }
}

template <typename T>
void require_rank4(const Tensor<T>& x, std::size_t channels, const std::string& who) {
  if (x.rank() != 4 || x.dim(3) != channels)
    throw ArgumentError(who + ": expected (b, h, w, " + std::to_string(channels) + ") input, got " +
                        shape_str(x.shape()));
}

template <typename T>
class Conv2d {
 public:
  Conv2d(const std::string& name, std::size_t in_c, std::size_t out_c, std::size_t kernel,
         std::size_t stride, std::size_t pad, std::mt19937_64& rng)
      : in_c_(in_c), out_c_(out_c), kernel_(kernel), stride_(stride), pad_(pad),
        weight_(name + ".weight", {kernel * kernel * in_c, out_c}),
        bias_(name + ".bias", {out_c}) {
    normal_init(weight_, std::sqrt(2.0 / static_cast<double>(kernel * kernel * in_c)), rng);
  }

  Tensor<T> forward(const Tensor<T>& x) {
    require_rank4(x, in_c_, weight_.name);
    batch_ = x.dim(0);
    geom_ = ConvGeometry::forward(x.dim(1), x.dim(2), in_c_, kernel_, stride_, pad_);
    cols_.resize(static_cast<Eigen::Index>(batch_ * geom_.out_h * geom_.out_w),
                 static_cast<Eigen::Index>(geom_.patch()));
    im2col(x.data(), batch_, geom_, cols_.data());
    Tensor<T> out({batch_, geom_.out_h, geom_.out_w, out_c_});
    auto o = out.as_pixels();
    o.noalias() = cols_ * weight_.value.as_matrix();
    o.rowwise() += ConstRowMap<T>(bias_.value.data(), out_c_);
    return out;
  }

  Tensor<T> backward(const Tensor<T>& dout) {
    const auto d = dout.as_pixels();
    if (!weight_.frozen) {
      weight_.grad.as_matrix().noalias() += cols_.transpose() * d;
      MatrixMap<T>(bias_.grad.data(), 1, out_c_) += d.colwise().sum();
    }
    Matrix<T> dcols = d * weight_.value.as_matrix().transpose();
    Tensor<T> dx({batch_, geom_.in_h, geom_.in_w, in_c_});
    col2im(dcols.data(), batch_, geom_, dx.data());
    return dx;
  }

  void collect(ParameterRefs<T>& out) {
    out.push_back(&weight_);
    out.push_back(&bias_);
  }

  std::size_t out_channels() const { return out_c_; }

 private:
  std::size_t in_c_, out_c_, kernel_, stride_, pad_;
  Parameter<T> weight_;
  Parameter<T> bias_;
  std::size_t batch_ = 0;
  ConvGeometry geom_{};
  Matrix<T> cols_;
};

// Adjoint of a strided convolution: output size (h - 1) * stride - 2 * pad + kernel.
template <typename T>
class ConvTranspose2d {
 public:
  ConvTranspose2d(const std::string& name, std::size_t in_c, std::size_t out_c,
                  std::size_t kernel, std::size_t stride, std::size_t pad, std::mt19937_64& rng)
      : in_c_(in_c), out_c_(out_c), kernel_(kernel), stride_(stride), pad_(pad),
        weight_(name + ".weight", {in_c, kernel * kernel * out_c}),
        bias_(name + ".bias", {out_c}) {
    const double fan_in =
        static_cast<double>(in_c * kernel * kernel) / static_cast<double>(stride * stride);
    normal_init(weight_, std::sqrt(2.0 / fan_in), rng);
  }

  Tensor<T> forward(const Tensor<T>& x) {
    require_rank4(x, in_c_, weight_.name);
    input_ = x;
    const std::size_t h = x.dim(1), w = x.dim(2);
    if ((h - 1) * stride_ + kernel_ < 2 * pad_)
      throw ArgumentError(weight_.name + ": input too small");
    const std::size_t oh = (h - 1) * stride_ + kernel_ - 2 * pad_;
    const std::size_t ow = (w - 1) * stride_ + kernel_ - 2 * pad_;
    geom_ = {oh, ow, out_c_, kernel_, stride_, pad_, h, w};
    const Matrix<T> cols = x.as_pixels() * weight_.value.as_matrix();
    Tensor<T> out({x.dim(0), oh, ow, out_c_});
    col2im(cols.data(), x.dim(0), geom_, out.data());
    out.as_pixels().rowwise() += ConstRowMap<T>(bias_.value.data(), out_c_);
    return out;
  }

  Tensor<T> backward(const Tensor<T>& dout) {
    const std::size_t batch = input_.dim(0);
    Matrix<T> dcols(static_cast<Eigen::Index>(batch * geom_.out_h * geom_.out_w),
                    static_cast<Eigen::Index>(geom_.patch()));
    im2col(dout.data(), batch, geom_, dcols.data());
    if (!weight_.frozen) {
      weight_.grad.as_matrix().noalias() += input_.as_pixels().transpose() * dcols;
      MatrixMap<T>(bias_.grad.data(), 1, out_c_) += dout.as_pixels().colwise().sum();
    }
    Tensor<T> dx(input_.shape());
    dx.as_pixels().noalias() = dcols * weight_.value.as_matrix().transpose();
    return dx;
  }

  void collect(ParameterRefs<T>& out) {
    out.push_back(&weight_);
    out.push_back(&bias_);
  }

 private:
  std::size_t in_c_, out_c_, kernel_, stride_, pad_;
  Parameter<T> weight_;
  Parameter<T> bias_;
  ConvGeometry geom_{};
  Tensor<T> input_;
};

// Affine map on the flattened trailing dimensions: (b, ...) -> (b, out).
template <typename T>
class Dense {
 public:
  Dense(const std::string& name, std::size_t in, std::size_t out, std::mt19937_64& rng,
        double init_scale = 1.0)
      : in_(in), out_(out), weight_(name + ".weight", {in, out}), bias_(name + ".bias", {out}) {
    normal_init(weight_, init_scale * std::sqrt(1.0 / static_cast<double>(in)), rng);
  }

  Tensor<T> forward(const Tensor<T>& x) {
    if (x.rank() < 1 || x.size() != x.dim(0) * in_)
      throw ArgumentError(weight_.name + ": expected " + std::to_string(in_) +
                          " features per example, got shape " + shape_str(x.shape()));
    input_ = x;
    Tensor<T> out({x.dim(0), out_});
    auto o = out.as_matrix();
    o.noalias() = x.as_matrix() * weight_.value.as_matrix();
    o.rowwise() += ConstRowMap<T>(bias_.value.data(), out_);
    return out;
  }

  Tensor<T> backward(const Tensor<T>& dout) {
    const auto d = dout.as_matrix();
    if (!weight_.frozen) {
      weight_.grad.as_matrix().noalias() += input_.as_matrix().transpose() * d;
      MatrixMap<T>(bias_.grad.data(), 1, out_) += d.colwise().sum();
    }
    Tensor<T> dx(input_.shape());
    dx.as_matrix().noalias() = d * weight_.value.as_matrix().transpose();
    return dx;
  }

  void collect(ParameterRefs<T>& out) {
    out.push_back(&weight_);
    out.push_back(&bias_);
  }

 private:
  std::size_t in_, out_;
  Parameter<T> weight_;
  Parameter<T> bias_;
  Tensor<T> input_;
};

inline std::size_t default_groups(std::size_t channels, std::size_t max_groups = 8) {
  for (std::size_t g = std::min(max_groups, channels); g > 1; --g)
    if (channels % g == 0) return g;
  return 1;
}

// Per-example group normalization; independent of the other batch members.
template <typename T>
class GroupNorm {
 public:
  GroupNorm(const std::string& name, std::size_t channels, std::size_t groups, double eps = 1e-5)
      : channels_(channels), groups_(groups), eps_(eps),
        gamma_(name + ".gamma", {channels}), beta_(name + ".beta", {channels}) {
    if (groups == 0 || channels % groups != 0)
      throw ArgumentError(name + ": channels not divisible by groups");
    gamma_.value.fill(T{1});
  }

  Tensor<T> forward(const Tensor<T>& x) {
    require_rank4(x, channels_, gamma_.name);
    shape_ = x.shape();
    const std::size_t batch = x.dim(0), pixels = x.dim(1) * x.dim(2);
    const std::size_t per_group = channels_ / groups_;
    const double count = static_cast<double>(pixels * per_group);
    normalized_ = Tensor<T>(x.shape());
    inv_std_.assign(batch * groups_, T{0});
    Tensor<T> out(x.shape());
    for (std::size_t n = 0; n < batch; ++n)
      for (std::size_t g = 0; g < groups_; ++g) {
        double sum = 0.0, sq = 0.0;
        for (std::size_t p = 0; p < pixels; ++p) {
          const T* v = x.data() + (n * pixels + p) * channels_ + g * per_group;
          for (std::size_t c = 0; c < per_group; ++c) sum += v[c];
        }
        const double mean = sum / count;
        for (std::size_t p = 0; p < pixels; ++p) {
          const T* v = x.data() + (n * pixels + p) * channels_ + g * per_group;
          for (std::size_t c = 0; c < per_group; ++c) sq += (v[c] - mean) * (v[c] - mean);
        }
        const double inv = 1.0 / std::sqrt(sq / count + eps_);
        inv_std_[n * groups_ + g] = static_cast<T>(inv);
        for (std::size_t p = 0; p < pixels; ++p) {
          const std::size_t base = (n * pixels + p) * channels_ + g * per_group;
          for (std::size_t c = 0; c < per_group; ++c) {
            const T xh = static_cast<T>((x[base + c] - mean) * inv);
            normalized_[base + c] = xh;
            const std::size_t ch = g * per_group + c;
            out[base + c] = gamma_.value[ch] * xh + beta_.value[ch];
          }
        }
      }
    return out;
  }

  Tensor<T> backward(const Tensor<T>& dout) {
    const std::size_t batch = shape_[0], pixels = shape_[1] * shape_[2];
    const std::size_t per_group = channels_ / groups_;
    const double count = static_cast<double>(pixels * per_group);
    Tensor<T> dx(shape_);
    for (std::size_t n = 0; n < batch; ++n)
      for (std::size_t g = 0; g < groups_; ++g) {
        double sum_dxh = 0.0, sum_dxh_xh = 0.0;
        for (std::size_t p = 0; p < pixels; ++p) {
          const std::size_t base = (n * pixels + p) * channels_ + g * per_group;
          for (std::size_t c = 0; c < per_group; ++c) {
            const std::size_t ch = g * per_group + c;
            const double dxh = static_cast<double>(dout[base + c]) * gamma_.value[ch];
            sum_dxh += dxh;
            sum_dxh_xh += dxh * normalized_[base + c];
            if (!gamma_.frozen) {
              gamma_.grad[ch] += dout[base + c] * normalized_[base + c];
              beta_.grad[ch] += dout[base + c];
            }
          }
        }
        const double inv = inv_std_[n * groups_ + g];
        for (std::size_t p = 0; p < pixels; ++p) {
          const std::size_t base = (n * pixels + p) * channels_ + g * per_group;
          for (std::size_t c = 0; c < per_group; ++c) {
            const std::size_t ch = g * per_group + c;
            const double dxh = static_cast<double>(dout[base + c]) * gamma_.value[ch];
            dx[base + c] = static_cast<T>(
                inv / count * (count * dxh - sum_dxh - normalized_[base + c] * sum_dxh_xh));
          }
        }
      }
    return dx;
  }

  void collect(ParameterRefs<T>& out) {
    out.push_back(&gamma_);
    out.push_back(&beta_);
  }

 private:
  std::size_t channels_, groups_;
  double eps_;
  Parameter<T> gamma_;
  Parameter<T> beta_;
  Shape shape_;
  Tensor<T> normalized_;
  std::vector<T> inv_std_;
};

// slope 0 gives ReLU
template <typename T>
class LeakyReLU {
 public:
  explicit LeakyReLU(T slope = T{0}) : slope_(slope) {}

  Tensor<T> forward(const Tensor<T>& x) {
    input_ = x;
    Tensor<T> out(x.shape());
    for (std::size_t k = 0; k < x.size(); ++k) out[k] = x[k] > T{0} ? x[k] : slope_ * x[k];
    return out;
  }

  Tensor<T> backward(const Tensor<T>& dout) {
    Tensor<T> dx(dout.shape());
    for (std::size_t k = 0; k < dout.size(); ++k)
      dx[k] = input_[k] > T{0} ? dout[k] : slope_ * dout[k];
    return dx;
  }

 private:
  T slope_;
  Tensor<T> input_;
};

template <typename T>
class Tanh {
 public:
  Tensor<T> forward(const Tensor<T>& x) {
    output_ = Tensor<T>(x.shape());
    for (std::size_t k = 0; k < x.size(); ++k) output_[k] = std::tanh(x[k]);
    return output_;
  }

  Tensor<T> backward(const Tensor<T>& dout) {
    Tensor<T> dx(dout.shape());
    for (std::size_t k = 0; k < dout.size(); ++k)
      dx[k] = dout[k] * (T{1} - output_[k] * output_[k]);
    return dx;
  }

 private:
  Tensor<T> output_;
};

// Logistic function clamped to [eps, 1 - eps] so outputs stay strict probabilities
// at the working precision; the gradient is zero where the clamp is active.
template <typename T>
class Sigmoid {
 public:
  Tensor<T> forward(const Tensor<T>& x) {
    const T lo = std::numeric_limits<T>::epsilon();
    const T hi = T{1} - lo;
    output_ = Tensor<T>(x.shape());
    clamped_.assign(x.size(), false);
    for (std::size_t k = 0; k < x.size(); ++k) {
      const T s = T{1} / (T{1} + std::exp(-x[k]));
      clamped_[k] = s < lo || s > hi;
      output_[k] = std::clamp(s, lo, hi);
    }
    return output_;
  }

  Tensor<T> backward(const Tensor<T>& dout) {
    Tensor<T> dx(dout.shape());
    for (std::size_t k = 0; k < dout.size(); ++k)
      dx[k] = clamped_[k] ? T{0} : dout[k] * output_[k] * (T{1} - output_[k]);
    return dx;
  }

 private:
  Tensor<T> output_;
  std::vector<bool> clamped_;
};

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw ArgumentError("add: shape " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<T> out(a.shape());
  for (std::size_t k = 0; k < a.size(); ++k) out[k] = a[k] + b[k];
  return out;
}

}  // namespace vaereg::nn
