#pragma once

// Closed-form Gaussian KL terms, mixture-posterior batch statistics and the
// composite generator/discriminator objectives, with analytic gradients.
//
// All functions are pure. Reductions accumulate in double regardless of T.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "vaereg/errors.hpp"
#include "vaereg/tensor.hpp"

namespace vaereg {

inline constexpr double kLogVarMin = -20.0;
inline constexpr double kLogVarMax = 20.0;
inline constexpr double kDefaultVarianceFloor = 1e-8;

template <typename T>
inline T clamp_log_var(T lv) {
  return std::clamp(lv, static_cast<T>(kLogVarMin), static_cast<T>(kLogVarMax));
}

// d clamp(lv) / d lv
template <typename T>
inline T clamp_log_var_grad(T lv) {
  return (lv >= static_cast<T>(kLogVarMin) && lv <= static_cast<T>(kLogVarMax)) ? T{1} : T{0};
}

// Encoder outputs for a batch: one row per example, one column per latent dimension.
template <typename T>
struct PosteriorParams {
  Matrix<T> mu;
  Matrix<T> log_var;

  Eigen::Index batch_size() const { return mu.rows(); }
  Eigen::Index latent_dim() const { return mu.cols(); }

  void validate() const {
    if (mu.rows() != log_var.rows() || mu.cols() != log_var.cols())
      throw ArgumentError("PosteriorParams: mu is " + std::to_string(mu.rows()) + "x" +
                          std::to_string(mu.cols()) + " but log_var is " +
                          std::to_string(log_var.rows()) + "x" + std::to_string(log_var.cols()));
    if (!mu.allFinite()) throw DomainError("PosteriorParams: mu has non-finite entries");
    if (!log_var.allFinite()) throw DomainError("PosteriorParams: log_var has non-finite entries");
  }

  // sigma^2 = exp(clamp(log_var))
  Matrix<T> variance() const {
    return log_var.unaryExpr([](T lv) { return std::exp(clamp_log_var(lv)); });
  }
  Matrix<T> stddev() const {
    return log_var.unaryExpr([](T lv) { return std::exp(clamp_log_var(lv) / T{2}); });
  }
};

template <typename T>
struct BatchPosteriorStats {
  Vector<T> mean;
  Vector<T> variance;
};

enum class StatsSource { samples, means };

struct LossWeights {
  double beta1 = 1.0;
  double beta2 = 0.5;
  double beta3 = 5000.0;
  double beta4 = 100.0;

  void validate() const {
    const double b[] = {beta1, beta2, beta3, beta4};
    for (int i = 0; i < 4; ++i)
      if (!std::isfinite(b[i]) || b[i] < 0.0)
        throw ConfigError("loss weight beta" + std::to_string(i + 1) +
                          " must be finite and >= 0, got " + std::to_string(b[i]));
  }

  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

template <typename T>
struct GaussianComponent {
  Vector<T> mean;
  Vector<T> variance;
};

template <typename T>
struct GaussianProduct {
  Vector<T> mean;
  Vector<T> variance;
};

inline double kl_univariate_gaussian(double mu1, double var1, double mu2, double var2) {
  if (!std::isfinite(mu1) || !std::isfinite(mu2))
    throw DomainError("kl_univariate_gaussian: means must be finite");
  if (!(var1 > 0.0) || !std::isfinite(var1))
    throw DomainError("kl_univariate_gaussian: var1 must be positive and finite, got " +
                      std::to_string(var1));
  if (!(var2 > 0.0) || !std::isfinite(var2))
    throw DomainError("kl_univariate_gaussian: var2 must be positive and finite, got " +
                      std::to_string(var2));
  const double ratio = var1 / var2;
  const double diff = mu1 - mu2;
  return 0.5 * (ratio + diff * diff / var2 - 1.0 - std::log(ratio));
}

// KL of each individual posterior to N(0, I), summed over the batch.
template <typename T>
double kl_standard_vae(const PosteriorParams<T>& params) {
  params.validate();
  double sum = 0.0;
  for (Eigen::Index i = 0; i < params.mu.rows(); ++i)
    for (Eigen::Index j = 0; j < params.mu.cols(); ++j) {
      const double lv = clamp_log_var(static_cast<double>(params.log_var(i, j)));
      const double m = params.mu(i, j);
      sum += std::exp(lv) + m * m - 1.0 - lv;
    }
  return 0.5 * sum;
}

// Mixture statistics: mean of the per-example means, and the spread of the
// samples around that mean (1/M normalizer).
template <typename T>
BatchPosteriorStats<T> batch_posterior_stats(const Matrix<T>& means, const Matrix<T>& samples) {
  if (means.rows() != samples.rows() || means.cols() != samples.cols())
    throw ArgumentError("batch_posterior_stats: means and samples differ in shape");
  const Eigen::Index m = means.rows();
  const Eigen::Index d = means.cols();
  if (m < 2)
    throw DegenerateBatchError("batch_posterior_stats: batch size " + std::to_string(m) +
                               " < 2 has no variance");
  BatchPosteriorStats<T> out{Vector<T>(d), Vector<T>(d)};
  for (Eigen::Index j = 0; j < d; ++j) {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < m; ++i) acc += means(i, j);
    const double mean = acc / static_cast<double>(m);
    double sq = 0.0;
    for (Eigen::Index i = 0; i < m; ++i) {
      const double dz = static_cast<double>(samples(i, j)) - mean;
      sq += dz * dz;
    }
    out.mean(j) = static_cast<T>(mean);
    out.variance(j) = static_cast<T>(sq / static_cast<double>(m));
  }
  return out;
}

template <typename T>
BatchPosteriorStats<T> batch_posterior_stats(const Matrix<T>& means) {
  return batch_posterior_stats(means, means);
}

template <typename T>
double kl_global(const BatchPosteriorStats<T>& stats) {
  if (stats.mean.size() != stats.variance.size())
    throw ArgumentError("kl_global: mean and variance lengths differ");
  double sum = 0.0;
  for (Eigen::Index j = 0; j < stats.mean.size(); ++j) {
    const double v = stats.variance(j);
    if (!(v > 0.0)) throw CollapseError(static_cast<std::size_t>(j), v);
    const double m = stats.mean(j);
    sum += v + m * m - 1.0 - std::log(v);
  }
  return 0.5 * sum;
}

// Penalizes individual variances away from 1; independent of mu. No 1/2 factor.
template <typename T>
double kl_individual(const PosteriorParams<T>& params) {
  params.validate();
  double sum = 0.0;
  for (Eigen::Index i = 0; i < params.log_var.rows(); ++i)
    for (Eigen::Index j = 0; j < params.log_var.cols(); ++j) {
      const double lv = clamp_log_var(static_cast<double>(params.log_var(i, j)));
      sum += std::exp(lv) - 1.0 - lv;
    }
  return sum;
}

// Mean and variance of the (normalized) product of diagonal Gaussians. The
// product's scale factor is not computed.
template <typename T>
GaussianProduct<T> gaussian_product(std::span<const GaussianComponent<T>> components) {
  if (components.empty()) throw ArgumentError("gaussian_product: empty component list");
  const Eigen::Index d = components.front().mean.size();
  Vector<double> precision = Vector<double>::Zero(d);
  Vector<double> weighted = Vector<double>::Zero(d);
  for (std::size_t k = 0; k < components.size(); ++k) {
    const auto& c = components[k];
    if (c.mean.size() != d || c.variance.size() != d)
      throw ArgumentError("gaussian_product: component " + std::to_string(k) +
                          " has mismatched dimension");
    for (Eigen::Index j = 0; j < d; ++j) {
      const double v = c.variance(j);
      if (!(v > 0.0) || !std::isfinite(v))
        throw ArgumentError("gaussian_product: component " + std::to_string(k) +
                            " has non-positive variance in dimension " + std::to_string(j));
      precision(j) += 1.0 / v;
      weighted(j) += static_cast<double>(c.mean(j)) / v;
    }
  }
  GaussianProduct<T> out{Vector<T>(d), Vector<T>(d)};
  for (Eigen::Index j = 0; j < d; ++j) {
    const double var = 1.0 / precision(j);
    out.variance(j) = static_cast<T>(var);
    out.mean(j) = static_cast<T>(var * weighted(j));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reconstruction and adversarial terms

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (a.shape() != b.shape())
    throw ArgumentError(std::string(what) + ": shape " + shape_str(a.shape()) + " vs " +
                        shape_str(b.shape()));
}

// Mean absolute difference. Optional gradient w.r.t. x_hat (subgradient 0 at ties).
template <typename T>
double l1_loss(const Tensor<T>& x, const Tensor<T>& x_hat, Tensor<T>* d_x_hat = nullptr,
               double scale = 1.0) {
  check_same_shape(x, x_hat, "l1_loss");
  if (x.empty()) throw ArgumentError("l1_loss: empty tensors");
  const double n = static_cast<double>(x.size());
  double sum = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k)
    sum += std::abs(static_cast<double>(x_hat[k]) - static_cast<double>(x[k]));
  if (d_x_hat) {
    if (d_x_hat->shape() != x.shape()) *d_x_hat = Tensor<T>(x.shape());
    const double g = scale / n;
    for (std::size_t k = 0; k < x.size(); ++k) {
      const double diff = static_cast<double>(x_hat[k]) - static_cast<double>(x[k]);
      (*d_x_hat)[k] += static_cast<T>(diff > 0 ? g : (diff < 0 ? -g : 0.0));
    }
  }
  return sum / n;
}

// Binary cross-entropy of a realism map against a constant target (0 or 1),
// averaged over every patch and batch element. Entries must lie in (0, 1).
template <typename T>
double bce_constant_target(int target, const Tensor<T>& realism, Tensor<T>* d_realism = nullptr,
                           double scale = 1.0) {
  if (target != 0 && target != 1) throw ArgumentError("bce target must be 0 or 1");
  if (realism.empty()) throw ArgumentError("bce: empty realism map");
  const double n = static_cast<double>(realism.size());
  double sum = 0.0;
  for (std::size_t k = 0; k < realism.size(); ++k) {
    const double r = realism[k];
    if (!(r > 0.0 && r < 1.0))
      throw DomainError("realism entry " + std::to_string(k) + " = " + std::to_string(r) +
                        " is not a probability in (0, 1)");
    sum -= target == 1 ? std::log(r) : std::log1p(-r);
  }
  if (d_realism) {
    if (d_realism->shape() != realism.shape()) *d_realism = Tensor<T>(realism.shape());
    for (std::size_t k = 0; k < realism.size(); ++k) {
      const double r = realism[k];
      (*d_realism)[k] += static_cast<T>(target == 1 ? -scale / (n * r) : scale / (n * (1.0 - r)));
    }
  }
  return sum / n;
}

// ---------------------------------------------------------------------------
// Composite objectives

struct LossTerms {
  double kl_global = 0.0;
  double kl_individual = 0.0;
  double kl_standard = 0.0;
  double l1 = 0.0;
  double adversarial = 0.0;
  double total = 0.0;

  std::vector<std::pair<std::string, double>> named() const {
    return {{"kl_global", kl_global}, {"kl_individual", kl_individual},
            {"kl_standard", kl_standard}, {"l1", l1},
            {"adversarial", adversarial}, {"total", total}};
  }
};

// Regularized ELBO on precomputed batch statistics:
//   beta1 KL_G + beta2 KL_I + beta3 L1(x, x_hat) + beta4 BCE(1, realism)
template <typename T>
LossTerms generator_loss(const Tensor<T>& x, const Tensor<T>& x_hat,
                         const PosteriorParams<T>& params, const BatchPosteriorStats<T>& stats,
                         const Tensor<T>& realism, const LossWeights& w) {
  check_same_shape(x, x_hat, "generator_loss");
  LossTerms t;
  t.kl_global = kl_global(stats);
  t.kl_individual = kl_individual(params);
  t.l1 = l1_loss(x, x_hat);
  t.adversarial = bce_constant_target(1, realism);
  t.total = w.beta1 * t.kl_global + w.beta2 * t.kl_individual + w.beta3 * t.l1 +
            w.beta4 * t.adversarial;
  return t;
}

template <typename T>
struct GeneratorGradients {
  Matrix<T> mu;       // partial w.r.t. mu holding z fixed
  Matrix<T> log_var;  // partial w.r.t. log_var holding z fixed
  Matrix<T> z;        // partial w.r.t. the sampled latents
  Tensor<T> x_hat;
  Tensor<T> realism;
};

struct GeneratorObjectiveOptions {
  StatsSource stats_from = StatsSource::samples;
  double variance_floor = kDefaultVarianceFloor;
};

// Regularized ELBO as a function of the raw training quantities. The batch
// statistics are formed internally (variance floored), so the returned
// gradients include the paths through the mixture mean and variance.
template <typename T>
LossTerms generator_objective(const Tensor<T>& x, const Tensor<T>& x_hat,
                              const PosteriorParams<T>& params, const Matrix<T>& z,
                              const Tensor<T>& realism, const LossWeights& w,
                              const GeneratorObjectiveOptions& opts = {},
                              GeneratorGradients<T>* grads = nullptr) {
  params.validate();
  check_same_shape(x, x_hat, "generator_objective");
  if (z.rows() != params.mu.rows() || z.cols() != params.mu.cols())
    throw ArgumentError("generator_objective: z shape differs from mu");
  const Eigen::Index m = params.mu.rows();
  const Eigen::Index d = params.mu.cols();
  if (m < 2)
    throw DegenerateBatchError("generator_objective: batch size " + std::to_string(m) + " < 2");

  const Matrix<T>& spread = opts.stats_from == StatsSource::samples ? z : params.mu;
  const auto stats = batch_posterior_stats(params.mu, spread);

  if (grads) {
    grads->mu = Matrix<T>::Zero(m, d);
    grads->log_var = Matrix<T>::Zero(m, d);
    grads->z = Matrix<T>::Zero(m, d);
    grads->x_hat = Tensor<T>(x.shape());
    grads->realism = Tensor<T>(realism.shape());
  }

  LossTerms t;
  const double inv_m = 1.0 / static_cast<double>(m);
  for (Eigen::Index j = 0; j < d; ++j) {
    const double mean = stats.mean(j);
    const double raw_var = stats.variance(j);
    const bool floored = raw_var < opts.variance_floor;
    const double v = floored ? opts.variance_floor : raw_var;
    t.kl_global += 0.5 * (v + mean * mean - 1.0 - std::log(v));
    if (!grads) continue;
    const double dkl_dv = floored ? 0.0 : 0.5 * (1.0 - 1.0 / v);
    double spread_mean = 0.0;
    for (Eigen::Index i = 0; i < m; ++i) spread_mean += spread(i, j);
    spread_mean *= inv_m;
    // v = (1/M) sum_i (s_i - mean)^2 with mean = (1/M) sum_i mu_i
    const double dmean = mean + dkl_dv * (-2.0) * (spread_mean - mean);
    for (Eigen::Index i = 0; i < m; ++i) {
      const double ds = dkl_dv * 2.0 * inv_m * (static_cast<double>(spread(i, j)) - mean);
      grads->mu(i, j) += static_cast<T>(w.beta1 * dmean * inv_m);
      auto& target = opts.stats_from == StatsSource::samples ? grads->z : grads->mu;
      target(i, j) += static_cast<T>(w.beta1 * ds);
    }
  }

  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < d; ++j) {
      const double raw = params.log_var(i, j);
      const double lv = clamp_log_var(raw);
      const double var = std::exp(lv);
      t.kl_individual += var - 1.0 - lv;
      if (grads)
        grads->log_var(i, j) +=
            static_cast<T>(w.beta2 * (var - 1.0) * clamp_log_var_grad(raw));
    }

  t.l1 = l1_loss(x, x_hat, grads ? &grads->x_hat : nullptr, w.beta3);
  t.adversarial = bce_constant_target(1, realism, grads ? &grads->realism : nullptr, w.beta4);
  t.total = w.beta1 * t.kl_global + w.beta2 * t.kl_individual + w.beta3 * t.l1 +
            w.beta4 * t.adversarial;
  return t;
}

// Baseline ELBO: beta1 * KL(q_i || N(0, I)) summed over the batch + beta2 * L1.
template <typename T>
LossTerms standard_vae_objective(const Tensor<T>& x, const Tensor<T>& x_hat,
                                 const PosteriorParams<T>& params, const LossWeights& w,
                                 GeneratorGradients<T>* grads = nullptr) {
  params.validate();
  check_same_shape(x, x_hat, "standard_vae_objective");
  const Eigen::Index m = params.mu.rows();
  const Eigen::Index d = params.mu.cols();
  if (grads) {
    grads->mu = Matrix<T>::Zero(m, d);
    grads->log_var = Matrix<T>::Zero(m, d);
    grads->z = Matrix<T>::Zero(m, d);
    grads->x_hat = Tensor<T>(x.shape());
    grads->realism = Tensor<T>();
  }
  LossTerms t;
  t.kl_standard = kl_standard_vae(params);
  if (grads) {
    for (Eigen::Index i = 0; i < m; ++i)
      for (Eigen::Index j = 0; j < d; ++j) {
        const double raw = params.log_var(i, j);
        const double var = std::exp(clamp_log_var(raw));
        grads->mu(i, j) = static_cast<T>(w.beta1 * static_cast<double>(params.mu(i, j)));
        grads->log_var(i, j) =
            static_cast<T>(w.beta1 * 0.5 * (var - 1.0) * clamp_log_var_grad(raw));
      }
  }
  t.l1 = l1_loss(x, x_hat, grads ? &grads->x_hat : nullptr, w.beta2);
  t.total = w.beta1 * t.kl_standard + w.beta2 * t.l1;
  return t;
}

// beta4 * [BCE(1, realism_real) + BCE(0, realism_fake)]
template <typename T>
double discriminator_loss(const Tensor<T>& realism_real, const Tensor<T>& realism_fake,
                          const LossWeights& w, Tensor<T>* d_real = nullptr,
                          Tensor<T>* d_fake = nullptr) {
  check_same_shape(realism_real, realism_fake, "discriminator_loss");
  if (d_real) *d_real = Tensor<T>(realism_real.shape());
  if (d_fake) *d_fake = Tensor<T>(realism_fake.shape());
  const double real = bce_constant_target(1, realism_real, d_real, w.beta4);
  const double fake = bce_constant_target(0, realism_fake, d_fake, w.beta4);
  return w.beta4 * (real + fake);
}

}  // namespace vaereg
