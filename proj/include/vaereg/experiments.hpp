#pragma once

// Latent-space studies on a trained checkpoint: variation grids, interpolation
// strips, joint histograms and per-dimension collapse diagnostics.
//
// Latents are decoded one at a time. GEMM blocking depends on the batch size,
// so this keeps every decode bit-identical to a plain single reconstruction.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <memory>
#include <numbers>
#include <string>
#include <vector>

#include "vaereg/checkpoint.hpp"
#include "vaereg/data.hpp"
#include "vaereg/render.hpp"
#include "vaereg/sampler.hpp"
#include "vaereg/trainer.hpp"

namespace vaereg {

// A checkpointed model plus its held-out images.
struct Model {
  std::unique_ptr<TrainState> state;
  ImageSet test;

  Encoder<Real>& encoder() { return state->encoder(); }
  Decoder<Real>& decoder() { return state->decoder(); }
  std::size_t latent_dim() const { return state->config().latent_dim; }
};

inline ImageSet load_test_set(const DatasetSpec& spec) {
  if (spec.synthetic()) return synthetic_images(spec, spec.train_count, spec.test_count);
  return load_split(spec).test;
}

inline Model load_model(const std::filesystem::path& checkpoint) {
  Model m;
  m.state = TrainState::from_checkpoint(Checkpoint::load(checkpoint));
  m.test = load_test_set(m.state->config().dataset_spec());
  return m;
}

inline Tensor<Real> decode_one(Decoder<Real>& dec, const Matrix<Real>& z) {
  if (z.rows() != 1) throw ArgumentError("decode_one: expected a single latent row");
  auto img = dec.forward(z);
  img.reshape({img.dim(1), img.dim(2), img.dim(3)});
  return img;
}

inline PosteriorParams<Real> encode_one(Encoder<Real>& enc, const Tensor<Real>& image) {
  Tensor<Real> x = image;
  if (x.rank() == 3) x.reshape({1, x.dim(0), x.dim(1), x.dim(2)});
  return enc.forward(x);
}

// One posterior draw for test image `index`, from the experiment stream.
inline Matrix<Real> sample_latent(Model& m, std::size_t index, std::uint64_t seed, std::uint64_t sub) {
  const auto params = encode_one(m.encoder(), m.test.get(index));
  RngStream rng(seed, StreamId::experiment, sub);
  return sample(params, rng).z;
}

// Encode, draw once, decode.
inline Tensor<Real> reconstruct(Model& m, std::size_t index, std::uint64_t seed) {
  return decode_one(m.decoder(), sample_latent(m, index, seed, 0));
}

struct VariationSpec {
  std::size_t index = 0;
  std::size_t axis_a = 0;
  std::size_t axis_b = 1;
  std::vector<double> deltas{-20.0, 0.0, 20.0};

  void validate(std::size_t latent_dim, std::size_t test_size) const {
    if (index >= test_size)
      throw ArgumentError("image index " + std::to_string(index) + " out of range (test set has " +
                          std::to_string(test_size) + ")");
    if (axis_a >= latent_dim || axis_b >= latent_dim)
      throw ArgumentError("latent axes (" + std::to_string(axis_a) + ", " + std::to_string(axis_b) +
                          ") out of range for d=" + std::to_string(latent_dim));
    if (axis_a == axis_b) throw ArgumentError("latent axes must differ");
    if (deltas.empty()) throw ArgumentError("at least one delta required");
    for (double d : deltas)
      if (!std::isfinite(d)) throw ArgumentError("deltas must be finite");
  }
};

struct VariationGrid {
  std::size_t size = 0;               // grid is size x size
  std::vector<Tensor<Real>> cells;    // row-major: row = delta on axis b, col = delta on axis a
  Matrix<Real> base;                  // frozen draw with both axes at their means
  PosteriorParams<Real> posterior;

  const Tensor<Real>& cell(std::size_t row, std::size_t col) const { return cells[row * size + col]; }
};

// z' is drawn once; cell (q, p) sets z'_a = mu_a + delta_p sigma_a and
// z'_b = mu_b + delta_q sigma_b. With delta = 0 both axes sit at their means,
// which is the grid's base decode.
inline VariationGrid vary(Model& m, const VariationSpec& spec, std::uint64_t seed) {
  spec.validate(m.latent_dim(), m.test.size());
  VariationGrid g;
  g.posterior = encode_one(m.encoder(), m.test.get(spec.index));
  RngStream rng(seed, StreamId::experiment, 0);
  const Matrix<Real> drawn = sample(g.posterior, rng).z;
  const Matrix<Real> sigma = g.posterior.stddev();
  const auto a = static_cast<Eigen::Index>(spec.axis_a), b = static_cast<Eigen::Index>(spec.axis_b);
  g.base = drawn;
  g.base(0, a) = g.posterior.mu(0, a);
  g.base(0, b) = g.posterior.mu(0, b);
  g.size = spec.deltas.size();
  for (double dq : spec.deltas)
    for (double dp : spec.deltas) {
      Matrix<Real> z = drawn;
      z(0, a) = g.posterior.mu(0, a) + static_cast<Real>(dp) * sigma(0, a);
      z(0, b) = g.posterior.mu(0, b) + static_cast<Real>(dq) * sigma(0, b);
      g.cells.push_back(decode_one(m.decoder(), z));
    }
  return g;
}

struct InterpolationSpec {
  std::size_t first = 0;
  std::size_t second = 1;
  std::size_t steps = 6;

  void validate(std::size_t test_size) const {
    if (steps < 2) throw ArgumentError("interpolation needs at least 2 steps, got " + std::to_string(steps));
    if (first >= test_size || second >= test_size)
      throw ArgumentError("image index pair (" + std::to_string(first) + ", " +
                          std::to_string(second) + ") out of range (test set has " +
                          std::to_string(test_size) + ")");
  }

  double alpha(std::size_t k) const { return static_cast<double>(k) / static_cast<double>(steps - 1); }
};

struct InterpolationStrip {
  std::vector<Tensor<Real>> frames;
  std::vector<double> alphas;
  Matrix<Real> z1, z2;
};

inline InterpolationStrip interpolate(Model& m, const InterpolationSpec& spec, std::uint64_t seed) {
  spec.validate(m.test.size());
  InterpolationStrip s;
  s.z1 = sample_latent(m, spec.first, seed, 0);
  s.z2 = sample_latent(m, spec.second, seed, 0);
  for (std::size_t k = 0; k < spec.steps; ++k) {
    const auto alpha = static_cast<Real>(spec.alpha(k));
    const Matrix<Real> z = (Real{1} - alpha) * s.z1 + alpha * s.z2;
    s.alphas.push_back(spec.alpha(k));
    s.frames.push_back(decode_one(m.decoder(), z));
  }
  return s;
}

// Encodes the first `count` test images (chunks of `chunk`) and draws one
// latent per image.
struct EncodedTestSet {
  PosteriorParams<Real> posterior;
  Matrix<Real> z;
};

inline EncodedTestSet encode_test_set(Model& m, std::size_t count, std::uint64_t seed,
                                      std::size_t chunk = 16) {
  if (count > m.test.size())
    throw DataError("need " + std::to_string(count) + " test images but the test set has " +
                    std::to_string(m.test.size()));
  if (count == 0) throw ArgumentError("encode_test_set: count must be positive");
  const auto d = static_cast<Eigen::Index>(m.latent_dim());
  EncodedTestSet out;
  out.posterior.mu.resize(static_cast<Eigen::Index>(count), d);
  out.posterior.log_var.resize(static_cast<Eigen::Index>(count), d);
  out.z.resize(static_cast<Eigen::Index>(count), d);
  RngStream rng(seed, StreamId::experiment, 2);
  for (std::size_t first = 0; first < count; first += chunk) {
    const std::size_t n = std::min(chunk, count - first);
    std::vector<std::size_t> idx(n);
    for (std::size_t k = 0; k < n; ++k) idx[k] = first + k;
    const auto params = m.encoder().forward(m.test.batch(idx));
    const auto draw = sample(params, rng);
    const auto r = static_cast<Eigen::Index>(first), rn = static_cast<Eigen::Index>(n);
    out.posterior.mu.middleRows(r, rn) = params.mu;
    out.posterior.log_var.middleRows(r, rn) = params.log_var;
    out.z.middleRows(r, rn) = draw.z;
  }
  return out;
}

struct HistogramSpec {
  std::size_t dim_p = 0;
  std::size_t dim_q = 1;
  std::size_t samples = 400;
  double lo = -3.0;
  double hi = 3.0;
  std::size_t bins = 30;

  void validate(std::size_t latent_dim) const {
    if (samples < 100) throw ArgumentError("histogram needs sample_count >= 100, got " + std::to_string(samples));
    if (dim_p >= latent_dim || dim_q >= latent_dim)
      throw ArgumentError("histogram dims out of range for d=" + std::to_string(latent_dim));
    if (bins == 0 || !(hi > lo)) throw ArgumentError("histogram range/bins invalid");
  }
};

struct LatentHistogram {
  Histogram2D counts;
  std::vector<double> zp, zq;
};

inline LatentHistogram latent_histograms(Model& m, const HistogramSpec& spec, std::uint64_t seed) {
  spec.validate(m.latent_dim());
  if (m.test.size() < spec.samples)
    throw DataError("histogram of " + std::to_string(spec.samples) + " points needs that many test images; test set has " +
                    std::to_string(m.test.size()));
  const auto enc = encode_test_set(m, spec.samples, seed);
  LatentHistogram h;
  for (Eigen::Index i = 0; i < enc.z.rows(); ++i) {
    h.zp.push_back(enc.z(i, static_cast<Eigen::Index>(spec.dim_p)));
    h.zq.push_back(enc.z(i, static_cast<Eigen::Index>(spec.dim_q)));
  }
  h.counts = histogram_2d(h.zp, h.zq, spec.lo, spec.hi, spec.bins);
  return h;
}

// One- vs two-component 1-D Gaussian mixture compared by BIC.
struct BimodalityFit {
  double mean1 = 0.0, var1 = 0.0;
  double weight = 0.5, mean_a = 0.0, mean_b = 0.0, var_a = 0.0, var_b = 0.0;
  double bic1 = 0.0, bic2 = 0.0;
  bool bimodal = false;
};

inline constexpr double kModeSeparation = 0.5;

inline BimodalityFit fit_bimodality(std::vector<double> x, std::size_t iterations = 200) {
  const std::size_t n = x.size();
  if (n < 4) throw ArgumentError("bimodality fit needs at least 4 samples");
  BimodalityFit f;
  const double nd = static_cast<double>(n);
  for (double v : x) f.mean1 += v / nd;
  for (double v : x) f.var1 += (v - f.mean1) * (v - f.mean1) / nd;
  const double floor = std::max(1e-6 * f.var1, 1e-12);
  f.var1 = std::max(f.var1, floor);

  const auto log_normal = [](double v, double mu, double var) {
    return -0.5 * (std::log(2.0 * std::numbers::pi * var) + (v - mu) * (v - mu) / var);
  };
  double ll1 = 0.0;
  for (double v : x) ll1 += log_normal(v, f.mean1, f.var1);

  // start from the quartiles
  std::vector<double> sorted = x;
  std::sort(sorted.begin(), sorted.end());
  f.mean_a = sorted[n / 4];
  f.mean_b = sorted[(3 * n) / 4];
  f.var_a = f.var_b = f.var1;
  f.weight = 0.5;
  std::vector<double> resp(n);
  double ll2 = 0.0;
  for (std::size_t it = 0; it < iterations; ++it) {
    ll2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double la = std::log(f.weight) + log_normal(x[i], f.mean_a, f.var_a);
      const double lb = std::log1p(-f.weight) + log_normal(x[i], f.mean_b, f.var_b);
      const double mx = std::max(la, lb);
      const double lse = mx + std::log(std::exp(la - mx) + std::exp(lb - mx));
      resp[i] = std::exp(la - lse);
      ll2 += lse;
    }
    double na = 0.0, sa = 0.0, sb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      na += resp[i];
      sa += resp[i] * x[i];
      sb += (1.0 - resp[i]) * x[i];
    }
    const double nb = nd - na;
    if (na < 1e-9 || nb < 1e-9) break;  // one component absorbed everything
    f.mean_a = sa / na;
    f.mean_b = sb / nb;
    double va = 0.0, vb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      va += resp[i] * (x[i] - f.mean_a) * (x[i] - f.mean_a);
      vb += (1.0 - resp[i]) * (x[i] - f.mean_b) * (x[i] - f.mean_b);
    }
    f.var_a = std::max(va / na, floor);
    f.var_b = std::max(vb / nb, floor);
    f.weight = std::clamp(na / nd, 1e-6, 1.0 - 1e-6);
  }
  f.bic1 = -2.0 * ll1 + 2.0 * std::log(nd);
  f.bic2 = -2.0 * ll2 + 5.0 * std::log(nd);
  f.bimodal = f.bic2 < f.bic1 && std::abs(f.mean_a - f.mean_b) > kModeSeparation;
  return f;
}

struct DimensionReport {
  std::size_t dim = 0;
  double mixture_mean = 0.0;      // mean of the batch mixture
  double mixture_var = 0.0;       // variance of the batch mixture (from the draws)
  double means_var = 0.0;         // variance of mu_j across images
  double individual_var = 0.0;    // mean of sigma_j^2
  bool active = false;
  bool bimodal = false;
};

struct CollapseReport {
  std::size_t images = 0;
  std::vector<DimensionReport> dims;
  std::size_t active_units = 0;
  std::size_t bimodal_units = 0;
  std::size_t individual_below_threshold = 0;  // dims with mean sigma^2 < threshold
  double individual_var_min = 0.0;
};

// Active units use the spread of the means, Var_i(mu_ij) > threshold. The
// mixture variance from the draws is reported alongside but stays near 1 for a
// collapsed dimension, since its samples then come from the prior.
inline CollapseReport collapse_report(Model& m, std::size_t images, std::uint64_t seed,
                                      double threshold = kActiveUnitThreshold) {
  if (images == 0) images = m.test.size();
  if (images < 2) throw ArgumentError("collapse report needs at least 2 test images");
  const auto enc = encode_test_set(m, images, seed);
  const auto mixture = batch_posterior_stats(enc.posterior.mu, enc.z);
  const auto of_means = batch_posterior_stats(enc.posterior.mu);
  const Matrix<Real> var = enc.posterior.variance();
  CollapseReport r;
  r.images = images;
  r.individual_var_min = std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < enc.z.cols(); ++j) {
    DimensionReport d;
    d.dim = static_cast<std::size_t>(j);
    d.mixture_mean = mixture.mean(j);
    d.mixture_var = mixture.variance(j);
    d.means_var = of_means.variance(j);
    for (Eigen::Index i = 0; i < var.rows(); ++i) d.individual_var += var(i, j);
    d.individual_var /= static_cast<double>(var.rows());
    d.active = d.means_var > threshold;
    std::vector<double> col(static_cast<std::size_t>(enc.z.rows()));
    for (Eigen::Index i = 0; i < enc.z.rows(); ++i) col[static_cast<std::size_t>(i)] = enc.z(i, j);
    d.bimodal = col.size() >= 4 && fit_bimodality(std::move(col)).bimodal;
    r.active_units += d.active;
    r.bimodal_units += d.bimodal;
    r.individual_below_threshold += d.individual_var < threshold;
    r.individual_var_min = std::min(r.individual_var_min, d.individual_var);
    r.dims.push_back(d);
  }
  return r;
}

}  // namespace vaereg
