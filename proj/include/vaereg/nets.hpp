#pragma once

// Residual encoder/decoder (pre-activation blocks) and the patch discriminator.

#include <algorithm>
#include <cstddef>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "vaereg/core_math.hpp"
#include "vaereg/nn/layers.hpp"

namespace vaereg {

struct EncoderSpec {
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t channels = 3;
  std::size_t latent_dim = 64;
  std::size_t stages = 4;            // downsampling residual stages (R)
  std::size_t identity_blocks = 2;   // identity blocks per stage (r)
  std::size_t base_channels = 64;
  std::size_t channel_cap = 512;

  void validate() const {
    if (stages == 0) throw ArgumentError("EncoderSpec: at least one residual stage required");
    if (stages >= 31) throw ArgumentError("EncoderSpec: too many stages");
    const std::size_t f = std::size_t{1} << stages;
    if (height == 0 || width == 0 || height % f != 0 || width % f != 0)
      throw ArgumentError("EncoderSpec: input " + std::to_string(height) + "x" +
                          std::to_string(width) + " not divisible by 2^" +
                          std::to_string(stages) + " = " + std::to_string(f));
    if (channels == 0 || latent_dim == 0 || base_channels == 0 || channel_cap == 0)
      throw ArgumentError("EncoderSpec: channels, latent_dim and widths must be positive");
  }

  // Output width of each downsampling stage; index -1 (the stem) is base_channels.
  std::vector<std::size_t> stage_channels() const {
    std::vector<std::size_t> out;
    std::size_t c = base_channels;
    for (std::size_t s = 0; s < stages; ++s) {
      c = std::min(c * 2, std::max(channel_cap, base_channels));
      out.push_back(c);
    }
    return out;
  }

  std::size_t bottleneck_height() const { return height >> stages; }
  std::size_t bottleneck_width() const { return width >> stages; }
  std::size_t bottleneck_channels() const { return stage_channels().back(); }
  Shape image_shape(std::size_t batch) const { return {batch, height, width, channels}; }

  friend bool operator==(const EncoderSpec&, const EncoderSpec&) = default;
};

namespace detail {

template <typename T>
class IdentityResBlock {
 public:
  IdentityResBlock(const std::string& name, std::size_t c, T slope, std::mt19937_64& rng)
      : norm1_(name + ".norm1", c, nn::default_groups(c)), act1_(slope),
        conv1_(name + ".conv1", c, c, 3, 1, 1, rng),
        norm2_(name + ".norm2", c, nn::default_groups(c)), act2_(slope),
        conv2_(name + ".conv2", c, c, 3, 1, 1, rng) {}

  Tensor<T> forward(const Tensor<T>& x) {
    auto h = conv2_.forward(act2_.forward(norm2_.forward(
        conv1_.forward(act1_.forward(norm1_.forward(x))))));
    return nn::add(x, h);
  }

  Tensor<T> backward(const Tensor<T>& dout) {
    auto dx = norm1_.backward(act1_.backward(conv1_.backward(
        norm2_.backward(act2_.backward(conv2_.backward(dout))))));
    return nn::add(dout, dx);
  }

  void collect(nn::ParameterRefs<T>& out) {
    norm1_.collect(out);
    conv1_.collect(out);
    norm2_.collect(out);
    conv2_.collect(out);
  }

 private:
  nn::GroupNorm<T> norm1_;
  nn::LeakyReLU<T> act1_;
  nn::Conv2d<T> conv1_;
  nn::GroupNorm<T> norm2_;
  nn::LeakyReLU<T> act2_;
  nn::Conv2d<T> conv2_;
};

// Pre-activation block with a resampling main path and a projection shortcut.
// Down: stride-2 convolutions. Up: stride-2 transposed convolutions.
template <typename T, bool Up>
class ResampleResBlock {
  using Resample = std::conditional_t<Up, nn::ConvTranspose2d<T>, nn::Conv2d<T>>;

 public:
  ResampleResBlock(const std::string& name, std::size_t in, std::size_t out, T slope,
                   std::mt19937_64& rng)
      : norm1_(name + ".norm1", in, nn::default_groups(in)), act1_(slope),
        shortcut_(name + ".shortcut", in, out, Up ? 2 : 1, 2, 0, rng),
        conv1_(name + ".conv1", in, out, Up ? 4 : 3, 2, 1, rng),
        norm2_(name + ".norm2", out, nn::default_groups(out)), act2_(slope),
        conv2_(name + ".conv2", out, out, 3, 1, 1, rng) {}

  Tensor<T> forward(const Tensor<T>& x) {
    const auto h = act1_.forward(norm1_.forward(x));
    auto s = shortcut_.forward(h);
    auto m = conv2_.forward(act2_.forward(norm2_.forward(conv1_.forward(h))));
    return nn::add(s, m);
  }

  Tensor<T> backward(const Tensor<T>& dout) {
    auto dh = nn::add(shortcut_.backward(dout),
                      conv1_.backward(norm2_.backward(act2_.backward(conv2_.backward(dout)))));
    return norm1_.backward(act1_.backward(dh));
  }

  void collect(nn::ParameterRefs<T>& out) {
    norm1_.collect(out);
    shortcut_.collect(out);
    conv1_.collect(out);
    norm2_.collect(out);
    conv2_.collect(out);
  }

 private:
  nn::GroupNorm<T> norm1_;
  nn::LeakyReLU<T> act1_;
  Resample shortcut_;
  Resample conv1_;
  nn::GroupNorm<T> norm2_;
  nn::LeakyReLU<T> act2_;
  nn::Conv2d<T> conv2_;
};

template <typename T, bool Up>
class Stage {
 public:
  Stage(const std::string& name, std::size_t in, std::size_t out, std::size_t identity_blocks,
        T slope, std::mt19937_64& rng)
      : resample_(name + (Up ? ".up" : ".down"), in, out, slope, rng) {
    for (std::size_t i = 0; i < identity_blocks; ++i)
      blocks_.emplace_back(name + ".id" + std::to_string(i), out, slope, rng);
  }

  Tensor<T> forward(const Tensor<T>& x) {
    auto h = resample_.forward(x);
    for (auto& b : blocks_) h = b.forward(h);
    return h;
  }

  Tensor<T> backward(Tensor<T> d) {
    for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) d = it->backward(d);
    return resample_.backward(d);
  }

  void collect(nn::ParameterRefs<T>& out) {
    resample_.collect(out);
    for (auto& b : blocks_) b.collect(out);
  }

 private:
  ResampleResBlock<T, Up> resample_;
  std::vector<IdentityResBlock<T>> blocks_;
};

template <typename T>
std::size_t count_parameters(const nn::ParameterRefs<T>& refs) {
  std::size_t n = 0;
  for (const auto* p : refs) n += p->value.size();
  return n;
}

}  // namespace detail

inline constexpr float kGeneratorSlope = 0.0f;     // ReLU
inline constexpr float kDiscriminatorSlope = 0.2f;

template <typename T>
class Encoder {
 public:
  Encoder(const EncoderSpec& spec, std::mt19937_64& rng)
      : spec_((spec.validate(), spec)),
        stem_("encoder.stem", spec.channels, spec.base_channels, 3, 1, 1, rng),
        out_norm_("encoder.out_norm", spec.bottleneck_channels(),
                  nn::default_groups(spec.bottleneck_channels())),
        out_act_(static_cast<T>(kGeneratorSlope)),
        head_mu_("encoder.head_mu", flat_size(), spec.latent_dim, rng),
        head_log_var_("encoder.head_log_var", flat_size(), spec.latent_dim, rng, 0.1) {
    std::size_t in = spec.base_channels;
    const auto widths = spec.stage_channels();
    for (std::size_t s = 0; s < spec.stages; ++s) {
      stages_.emplace_back("encoder.stage" + std::to_string(s), in, widths[s],
                           spec.identity_blocks, static_cast<T>(kGeneratorSlope), rng);
      in = widths[s];
    }
  }
  Encoder(const Encoder&) = delete;
  Encoder& operator=(const Encoder&) = delete;

  const EncoderSpec& spec() const { return spec_; }

  // Feature map entering the latent head, (b, H/2^R, W/2^R, C_top).
  Tensor<T> features(const Tensor<T>& x) {
    if (x.rank() != 4 || x.dim(1) != spec_.height || x.dim(2) != spec_.width ||
        x.dim(3) != spec_.channels)
      throw ArgumentError("encode: expected input " + shape_str(spec_.image_shape(x.empty() ? 0 : x.dim(0))) +
                          ", got " + shape_str(x.shape()));
    auto h = stem_.forward(x);
    for (auto& s : stages_) h = s.forward(h);
    return out_act_.forward(out_norm_.forward(h));
  }

  PosteriorParams<T> forward(const Tensor<T>& x) {
    auto h = features(x);
    const auto mu = head_mu_.forward(h);
    const auto lv = head_log_var_.forward(h);
    PosteriorParams<T> out;
    out.mu = mu.as_matrix();
    out.log_var = lv.as_matrix();
    return out;
  }

  Tensor<T> backward(const Matrix<T>& d_mu, const Matrix<T>& d_log_var) {
    const std::size_t b = static_cast<std::size_t>(d_mu.rows());
    Tensor<T> gm({b, spec_.latent_dim}), gl({b, spec_.latent_dim});
    gm.as_matrix() = d_mu;
    gl.as_matrix() = d_log_var;
    auto dh = nn::add(head_mu_.backward(gm), head_log_var_.backward(gl));
    dh.reshape({b, spec_.bottleneck_height(), spec_.bottleneck_width(), spec_.bottleneck_channels()});
    dh = out_norm_.backward(out_act_.backward(dh));
    for (auto it = stages_.rbegin(); it != stages_.rend(); ++it) dh = it->backward(std::move(dh));
    return stem_.backward(dh);
  }

  nn::ParameterRefs<T> parameters() {
    nn::ParameterRefs<T> out;
    stem_.collect(out);
    for (auto& s : stages_) s.collect(out);
    out_norm_.collect(out);
    head_mu_.collect(out);
    head_log_var_.collect(out);
    return out;
  }

 private:
  std::size_t flat_size() const {
    return spec_.bottleneck_height() * spec_.bottleneck_width() * spec_.bottleneck_channels();
  }

  EncoderSpec spec_;
  nn::Conv2d<T> stem_;
  std::vector<detail::Stage<T, false>> stages_;
  nn::GroupNorm<T> out_norm_;
  nn::LeakyReLU<T> out_act_;
  nn::Dense<T> head_mu_;
  nn::Dense<T> head_log_var_;
};

// Mirror of the encoder: affine map to the bottleneck, R upsampling stages,
// then a 3x3 projection to image channels and tanh into [-1, 1].
template <typename T>
class Decoder {
 public:
  Decoder(const EncoderSpec& spec, std::mt19937_64& rng)
      : spec_((spec.validate(), spec)),
        input_("decoder.input", spec.latent_dim,
               spec.bottleneck_height() * spec.bottleneck_width() * spec.bottleneck_channels(),
               rng),
        out_norm_("decoder.out_norm", spec.base_channels, nn::default_groups(spec.base_channels)),
        out_act_(static_cast<T>(kGeneratorSlope)),
        out_conv_("decoder.out_conv", spec.base_channels, spec.channels, 3, 1, 1, rng) {
    const auto widths = spec.stage_channels();
    for (std::size_t k = 0; k < spec.stages; ++k) {
      const std::size_t s = spec.stages - 1 - k;
      const std::size_t in = widths[s];
      const std::size_t out = s == 0 ? spec.base_channels : widths[s - 1];
      stages_.emplace_back("decoder.stage" + std::to_string(k), in, out, spec.identity_blocks,
                           static_cast<T>(kGeneratorSlope), rng);
    }
  }
  Decoder(const Decoder&) = delete;
  Decoder& operator=(const Decoder&) = delete;

  const EncoderSpec& spec() const { return spec_; }

  Tensor<T> forward(const Matrix<T>& z) {
    if (static_cast<std::size_t>(z.cols()) != spec_.latent_dim)
      throw ArgumentError("decode: latent width " + std::to_string(z.cols()) + " != " +
                          std::to_string(spec_.latent_dim));
    const std::size_t b = static_cast<std::size_t>(z.rows());
    Tensor<T> zin({b, spec_.latent_dim});
    zin.as_matrix() = z;
    auto h = input_.forward(zin);
    h.reshape({b, spec_.bottleneck_height(), spec_.bottleneck_width(), spec_.bottleneck_channels()});
    for (auto& s : stages_) h = s.forward(h);
    return tanh_.forward(out_conv_.forward(out_act_.forward(out_norm_.forward(h))));
  }

  Matrix<T> backward(const Tensor<T>& d_image) {
    auto d = out_norm_.backward(out_act_.backward(out_conv_.backward(tanh_.backward(d_image))));
    for (auto it = stages_.rbegin(); it != stages_.rend(); ++it) d = it->backward(std::move(d));
    const std::size_t b = d.dim(0);
    d.reshape({b, d.size() / b});
    return input_.backward(d).as_matrix();
  }

  nn::ParameterRefs<T> parameters() {
    nn::ParameterRefs<T> out;
    input_.collect(out);
    for (auto& s : stages_) s.collect(out);
    out_norm_.collect(out);
    out_conv_.collect(out);
    return out;
  }

 private:
  EncoderSpec spec_;
  nn::Dense<T> input_;
  std::vector<detail::Stage<T, true>> stages_;
  nn::GroupNorm<T> out_norm_;
  nn::LeakyReLU<T> out_act_;
  nn::Conv2d<T> out_conv_;
  nn::Tanh<T> tanh_;
};

// Patch discriminator: three stride-2 4x4 convolutions (/8) and a 3x3 sigmoid
// projection to one realism probability per patch, output (b, H/8, W/8).
template <typename T>
class Discriminator {
 public:
  Discriminator(std::size_t channels, std::size_t base_channels, std::mt19937_64& rng)
      : channels_(channels),
        conv1_("discriminator.conv1", channels, base_channels, 4, 2, 1, rng),
        act1_(static_cast<T>(kDiscriminatorSlope)),
        conv2_("discriminator.conv2", base_channels, 2 * base_channels, 4, 2, 1, rng),
        norm2_("discriminator.norm2", 2 * base_channels, nn::default_groups(2 * base_channels)),
        act2_(static_cast<T>(kDiscriminatorSlope)),
        conv3_("discriminator.conv3", 2 * base_channels, 4 * base_channels, 4, 2, 1, rng),
        norm3_("discriminator.norm3", 4 * base_channels, nn::default_groups(4 * base_channels)),
        act3_(static_cast<T>(kDiscriminatorSlope)),
        proj_("discriminator.proj", 4 * base_channels, 1, 3, 1, 1, rng) {}
  Discriminator(const Discriminator&) = delete;
  Discriminator& operator=(const Discriminator&) = delete;

  Tensor<T> forward(const Tensor<T>& x) {
    if (x.rank() != 4 || x.dim(3) != channels_)
      throw ArgumentError("discriminate: expected (b, H, W, " + std::to_string(channels_) +
                          "), got " + shape_str(x.shape()));
    if (x.dim(1) % 8 != 0 || x.dim(2) % 8 != 0 || x.dim(1) == 0 || x.dim(2) == 0)
      throw ArgumentError("discriminate: spatial size " + std::to_string(x.dim(1)) + "x" +
                          std::to_string(x.dim(2)) + " not divisible by 8");
    auto h = act1_.forward(conv1_.forward(x));
    h = act2_.forward(norm2_.forward(conv2_.forward(h)));
    h = act3_.forward(norm3_.forward(conv3_.forward(h)));
    auto r = sigmoid_.forward(proj_.forward(h));
    r.reshape({x.dim(0), x.dim(1) / 8, x.dim(2) / 8});
    return r;
  }

  Tensor<T> backward(Tensor<T> d_realism) {
    const auto& s = d_realism.shape();
    d_realism.reshape({s[0], s[1], s[2], 1});
    auto d = proj_.backward(sigmoid_.backward(d_realism));
    d = conv3_.backward(norm3_.backward(act3_.backward(d)));
    d = conv2_.backward(norm2_.backward(act2_.backward(d)));
    return conv1_.backward(act1_.backward(d));
  }

  nn::ParameterRefs<T> parameters() {
    nn::ParameterRefs<T> out;
    conv1_.collect(out);
    conv2_.collect(out);
    norm2_.collect(out);
    conv3_.collect(out);
    norm3_.collect(out);
    proj_.collect(out);
    return out;
  }

 private:
  std::size_t channels_;
  nn::Conv2d<T> conv1_;
  nn::LeakyReLU<T> act1_;
  nn::Conv2d<T> conv2_;
  nn::GroupNorm<T> norm2_;
  nn::LeakyReLU<T> act2_;
  nn::Conv2d<T> conv3_;
  nn::GroupNorm<T> norm3_;
  nn::LeakyReLU<T> act3_;
  nn::Conv2d<T> proj_;
  nn::Sigmoid<T> sigmoid_;
};

template <typename T>
std::size_t parameter_count(nn::ParameterRefs<T> refs) {
  return detail::count_parameters(refs);
}

template <typename T>
void zero_grad(const nn::ParameterRefs<T>& refs) {
  for (auto* p : refs) p->grad.zero();
}

template <typename T>
void set_frozen(const nn::ParameterRefs<T>& refs, bool frozen) {
  for (auto* p : refs) p->frozen = frozen;
}

}  // namespace vaereg
