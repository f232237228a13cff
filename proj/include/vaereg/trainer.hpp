#pragma once

// Alternating generator/discriminator optimization with checkpointing,
// a line-delimited JSON metrics log and deterministic resumption.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "vaereg/checkpoint.hpp"
#include "vaereg/config.hpp"
#include "vaereg/core_math.hpp"
#include "vaereg/data.hpp"
#include "vaereg/nets.hpp"
#include "vaereg/optim.hpp"
#include "vaereg/sampler.hpp"

namespace vaereg {

inline constexpr double kActiveUnitThreshold = 0.01;

struct LatentSummary {
  double mixture_var_min = 0.0;   // min_j of the batch mixture variance
  double mixture_var_mean = 0.0;
  double mixture_var_max = 0.0;
  double individual_var_min = 0.0;  // min_j of mean_i sigma_ij^2
  double individual_var_mean = 0.0;
  std::size_t active_units = 0;     // dims with Var_i(mu_ij) > threshold
  std::size_t individual_below = 0; // dims with mean_i sigma_ij^2 < threshold

  friend bool operator==(const LatentSummary&, const LatentSummary&) = default;
};

template <typename T>
LatentSummary summarize_latents(const PosteriorParams<T>& params, const Matrix<T>& spread) {
  LatentSummary s;
  const auto stats = batch_posterior_stats(params.mu, spread);
  const auto of_means = batch_posterior_stats(params.mu);
  const Matrix<T> var = params.variance();
  const auto d = params.mu.cols();
  s.mixture_var_min = std::numeric_limits<double>::infinity();
  s.individual_var_min = std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < d; ++j) {
    const double mv = stats.variance(j);
    s.mixture_var_min = std::min(s.mixture_var_min, mv);
    s.mixture_var_max = std::max(s.mixture_var_max, mv);
    s.mixture_var_mean += mv / static_cast<double>(d);
    double iv = 0.0;
    for (Eigen::Index i = 0; i < var.rows(); ++i) iv += var(i, j);
    iv /= static_cast<double>(var.rows());
    s.individual_var_min = std::min(s.individual_var_min, iv);
    s.individual_var_mean += iv / static_cast<double>(d);
    if (iv < kActiveUnitThreshold) ++s.individual_below;
    if (of_means.variance(j) > kActiveUnitThreshold) ++s.active_units;
  }
  return s;
}

struct StepMetrics {
  std::size_t step = 0;  // step count after the update
  LossTerms terms;
  double discriminator = 0.0;
  double learning_rate = 0.0;
  LatentSummary latent;

  nlohmann::json to_json() const {
    nlohmann::json j{{"step", step},
                     {"discriminator", discriminator},
                     {"learning_rate", learning_rate},
                     {"mixture_var_min", latent.mixture_var_min},
                     {"mixture_var_mean", latent.mixture_var_mean},
                     {"mixture_var_max", latent.mixture_var_max},
                     {"individual_var_min", latent.individual_var_min},
                     {"individual_var_mean", latent.individual_var_mean},
                     {"active_units", latent.active_units},
                     {"individual_below", latent.individual_below}};
    for (const auto& [k, v] : terms.named()) j[k] = v;
    return j;
  }

  friend bool operator==(const StepMetrics& a, const StepMetrics& b) {
    return a.step == b.step && a.terms.named() == b.terms.named() &&
           a.discriminator == b.discriminator && a.learning_rate == b.learning_rate &&
           a.latent == b.latent;
  }
};

struct MetricAggregates {
  std::size_t steps = 0;
  double sum_total = 0.0;
  double sum_discriminator = 0.0;

  void add(const StepMetrics& m) {
    ++steps;
    sum_total += m.terms.total;
    sum_discriminator += m.discriminator;
  }
};

using Real = float;

class TrainState {
 public:
  explicit TrainState(TrainConfig config)
      : config_((config.validate(), std::move(config))),
        sampler_rng_(config_.seed, StreamId::sampler) {
    RngStream init(config_.seed, StreamId::init);
    encoder_ = std::make_unique<Encoder<Real>>(config_.encoder_spec(), init.engine());
    decoder_ = std::make_unique<Decoder<Real>>(config_.encoder_spec(), init.engine());
    discriminator_ = std::make_unique<Discriminator<Real>>(config_.channels,
                                                           config_.disc_base_channels, init.engine());
    generator_opt_ = std::make_unique<Adam<Real>>(generator_parameters(), config_.adam());
    discriminator_opt_ = std::make_unique<Adam<Real>>(discriminator_parameters(), config_.adam());
  }

  const TrainConfig& config() const { return config_; }
  std::size_t step() const { return step_; }
  Encoder<Real>& encoder() { return *encoder_; }
  Decoder<Real>& decoder() { return *decoder_; }
  Discriminator<Real>& discriminator() { return *discriminator_; }
  Adam<Real>& generator_optimizer() { return *generator_opt_; }
  Adam<Real>& discriminator_optimizer() { return *discriminator_opt_; }
  RngStream& sampler_rng() { return sampler_rng_; }
  MetricAggregates& aggregates() { return aggregates_; }

  nn::ParameterRefs<Real> generator_parameters() {
    auto p = encoder_->parameters();
    auto d = decoder_->parameters();
    p.insert(p.end(), d.begin(), d.end());
    return p;
  }
  nn::ParameterRefs<Real> discriminator_parameters() { return discriminator_->parameters(); }

  void advance() { ++step_; }

  Checkpoint to_checkpoint() {
    Checkpoint ck;
    ck.meta = {{"format", "vaereg-train-state"},
               {"config", config_.to_json()},
               {"step", step_},
               {"rng", {{"sampler", sampler_rng_.state()}}},
               {"adam", {{"generator_steps", generator_opt_->steps()},
                         {"discriminator_steps", discriminator_opt_->steps()},
                         {"beta1", config_.adam_beta1},
                         {"beta2", config_.adam_beta2},
                         {"eps", config_.adam_eps}}},
               {"aggregates", {{"steps", aggregates_.steps},
                               {"sum_total", aggregates_.sum_total},
                               {"sum_discriminator", aggregates_.sum_discriminator}}}};
    const auto put = [&ck](const std::string& prefix, const nn::ParameterRefs<Real>& params,
                           const Adam<Real>& opt) {
      for (std::size_t k = 0; k < params.size(); ++k) {
        ck.add(params[k]->name, params[k]->value);
        ck.add("adam." + prefix + ".m." + params[k]->name, opt.first_moments()[k]);
        ck.add("adam." + prefix + ".v." + params[k]->name, opt.second_moments()[k]);
      }
    };
    put("generator", generator_parameters(), *generator_opt_);
    put("discriminator", discriminator_parameters(), *discriminator_opt_);
    return ck;
  }

  // Rebuilds the state stored in a checkpoint. Only max_steps, checkpoint_every
  // and out_dir may be overridden.
  static std::unique_ptr<TrainState> from_checkpoint(const Checkpoint& ck,
                                                     const TrainConfig* overrides = nullptr) {
    if (ck.meta.value("format", "") != "vaereg-train-state")
      throw CheckpointError("checkpoint is not a training state");
    TrainConfig cfg;
    try {
      cfg = TrainConfig::from_json(ck.meta.at("config"));
    } catch (const ConfigError& e) {
      throw CheckpointError(std::string("checkpoint config invalid: ") + e.what());
    }
    if (overrides) {
      cfg.max_steps = overrides->max_steps;
      cfg.checkpoint_every = overrides->checkpoint_every;
      cfg.out_dir = overrides->out_dir;
    }
    auto state = std::make_unique<TrainState>(cfg);
    const auto get = [&ck](const std::string& name, Tensor<Real>& dst) {
      const auto& src = ck.array(name);
      if (src.shape() != dst.shape())
        throw CheckpointError("array " + name + " has shape " + shape_str(src.shape()) +
                              ", expected " + shape_str(dst.shape()));
      dst = src;
    };
    const auto take = [&](const std::string& prefix, const nn::ParameterRefs<Real>& params,
                          Adam<Real>& opt) {
      for (std::size_t k = 0; k < params.size(); ++k) {
        get(params[k]->name, params[k]->value);
        get("adam." + prefix + ".m." + params[k]->name, opt.first_moments()[k]);
        get("adam." + prefix + ".v." + params[k]->name, opt.second_moments()[k]);
      }
    };
    take("generator", state->generator_parameters(), *state->generator_opt_);
    take("discriminator", state->discriminator_parameters(), *state->discriminator_opt_);
    try {
      state->step_ = ck.meta.at("step").get<std::size_t>();
      state->sampler_rng_.restore(ck.meta.at("rng").at("sampler").get<std::string>());
      state->generator_opt_->set_steps(ck.meta.at("adam").at("generator_steps").get<std::uint64_t>());
      state->discriminator_opt_->set_steps(
          ck.meta.at("adam").at("discriminator_steps").get<std::uint64_t>());
      const auto& agg = ck.meta.at("aggregates");
      state->aggregates_.steps = agg.at("steps").get<std::size_t>();
      state->aggregates_.sum_total = agg.at("sum_total").get<double>();
      state->aggregates_.sum_discriminator = agg.at("sum_discriminator").get<double>();
    } catch (const nlohmann::json::exception& e) {
      throw CheckpointError(std::string("checkpoint metadata incomplete: ") + e.what());
    }
    return state;
  }

 private:
  TrainConfig config_;
  std::size_t step_ = 0;
  std::unique_ptr<Encoder<Real>> encoder_;
  std::unique_ptr<Decoder<Real>> decoder_;
  std::unique_ptr<Discriminator<Real>> discriminator_;
  std::unique_ptr<Adam<Real>> generator_opt_;
  std::unique_ptr<Adam<Real>> discriminator_opt_;
  RngStream sampler_rng_;
  MetricAggregates aggregates_;
};

inline void check_finite_terms(const LossTerms& t, double disc, std::size_t step) {
  bool ok = std::isfinite(disc);
  for (const auto& [k, v] : t.named()) ok = ok && std::isfinite(v);
  if (ok) return;
  std::string msg = "non-finite loss at step " + std::to_string(step) + ":";
  for (const auto& [k, v] : t.named())
    msg += std::string(std::isfinite(v) ? " " : " >>") + k + "=" + std::to_string(v);
  msg += std::string(std::isfinite(disc) ? " " : " >>") + "discriminator=" + std::to_string(disc);
  throw NonFiniteLossError(msg);
}

// One iteration: encode, sample, decode, score realism, generator update on
// the regularized ELBO, then discriminator update on x and the same x_hat.
// Baseline modes skip the adversarial term and the discriminator update.
inline StepMetrics train_step(TrainState& state, const Tensor<Real>& x) {
  const auto& cfg = state.config();
  const Shape expected = cfg.encoder_spec().image_shape(cfg.batch_size);
  if (x.shape() != expected)
    throw ArgumentError("train_step: batch shape " + shape_str(x.shape()) + ", expected " +
                        shape_str(expected));
  const bool adversarial = cfg.mode == TrainMode::proposed;
  const auto gen_params = state.generator_parameters();
  const auto disc_params = state.discriminator_parameters();
  zero_grad(gen_params);
  zero_grad(disc_params);

  const auto params = state.encoder().forward(x);
  const auto latent = sample(params, state.sampler_rng());
  const auto x_hat = state.decoder().forward(latent.z);

  StepMetrics m;
  m.learning_rate = cfg.learning_rate_at(state.step());
  GeneratorGradients<Real> g;
  Tensor<Real> d_x_hat;
  Tensor<Real> realism_fake;
  if (adversarial) {
    realism_fake = state.discriminator().forward(x_hat);
    m.terms = generator_objective(x, x_hat, params, latent.z, realism_fake, cfg.weights,
                                  {cfg.stats_from, cfg.variance_floor}, &g);
    check_finite_terms(m.terms, 0.0, state.step() + 1);
    set_frozen(disc_params, true);
    d_x_hat = nn::add(g.x_hat, state.discriminator().backward(g.realism));
    set_frozen(disc_params, false);
  } else {
    m.terms = standard_vae_objective(x, x_hat, params, cfg.weights, &g);
    check_finite_terms(m.terms, 0.0, state.step() + 1);
    d_x_hat = std::move(g.x_hat);
  }

  Matrix<Real> d_z = state.decoder().backward(d_x_hat);
  d_z += g.z;
  Matrix<Real> d_mu = g.mu;
  Matrix<Real> d_log_var = g.log_var;
  sample_backward(latent, d_z, d_mu, d_log_var);
  state.encoder().backward(d_mu, d_log_var);
  state.generator_optimizer().step(gen_params, m.learning_rate);

  if (adversarial) {
    Tensor<Real> d_real, d_fake;
    const auto realism_real = state.discriminator().forward(x);
    m.discriminator = discriminator_loss(realism_real, realism_fake, cfg.weights, &d_real, &d_fake);
    check_finite_terms(m.terms, m.discriminator, state.step() + 1);
    state.discriminator().backward(std::move(d_real));
    state.discriminator().forward(x_hat);
    state.discriminator().backward(std::move(d_fake));
    state.discriminator_optimizer().step(disc_params, m.learning_rate);
  }

  m.latent = summarize_latents(params, cfg.stats_from == StatsSource::samples ? latent.z : params.mu);
  state.advance();
  m.step = state.step();
  state.aggregates().add(m);
  return m;
}

// Indices of the training batch for a given step: per-epoch permutations
// seeded from the master seed, incomplete trailing batches dropped.
class BatchSchedule {
 public:
  BatchSchedule(std::size_t dataset_size, std::size_t batch_size, std::uint64_t seed)
      : n_(dataset_size), b_(batch_size), seed_(seed) {
    if (b_ == 0 || n_ < b_) throw ConfigError("dataset smaller than one batch");
  }

  std::vector<std::size_t> indices(std::size_t step) {
    const std::size_t per_epoch = n_ / b_;
    const std::size_t epoch = step / per_epoch;
    if (!cached_epoch_ || *cached_epoch_ != epoch) {
      perm_.resize(n_);
      std::iota(perm_.begin(), perm_.end(), std::size_t{0});
      RngStream rng(seed_, StreamId::shuffle, epoch);
      std::shuffle(perm_.begin(), perm_.end(), rng.engine());
      cached_epoch_ = epoch;
    }
    const std::size_t first = (step % per_epoch) * b_;
    return {perm_.begin() + static_cast<long>(first), perm_.begin() + static_cast<long>(first + b_)};
  }

 private:
  std::size_t n_, b_;
  std::uint64_t seed_;
  std::optional<std::size_t> cached_epoch_;
  std::vector<std::size_t> perm_;
};

struct TrainOptions {
  std::optional<std::filesystem::path> resume;
  bool write_files = true;
  std::function<void(const StepMetrics&)> on_step;
};

struct TrainResult {
  std::unique_ptr<TrainState> state;
  std::vector<StepMetrics> metrics;
};

inline std::filesystem::path checkpoint_path(const std::filesystem::path& dir, std::size_t step) {
  char name[32];
  std::snprintf(name, sizeof name, "ckpt_%08zu.ckpt", step);
  return dir / name;
}

// Runs train_step until config.max_steps. Dataset and config problems are
// reported before any step executes.
inline TrainResult train(const TrainConfig& config, const TrainOptions& opts = {}) {
  config.validate();
  TrainResult result;
  if (opts.resume) {
    result.state = TrainState::from_checkpoint(Checkpoint::load(*opts.resume), &config);
  } else {
    result.state = std::make_unique<TrainState>(config);
  }
  TrainState& state = *result.state;
  const auto& cfg = state.config();
  const auto split = load_split(cfg.dataset_spec());
  BatchSchedule schedule(split.train.size(), cfg.batch_size, cfg.seed);

  const std::filesystem::path dir = cfg.out_dir;
  std::ofstream log;
  if (opts.write_files) {
    std::filesystem::create_directories(dir);
    std::ofstream(dir / "config.json") << cfg.to_json().dump(2) << '\n';
    log.open(dir / "metrics.jsonl", std::ios::app);
    if (!log) throw ConfigError("cannot open metrics log in " + dir.string());
  }
  const auto start = std::chrono::steady_clock::now();
  while (state.step() < cfg.max_steps) {
    const auto idx = schedule.indices(state.step());
    const auto x = split.train.batch(idx);
    auto m = train_step(state, x);
    if (opts.write_files) {
      auto rec = m.to_json();
      rec["wall_time"] =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      log << rec.dump() << '\n';
      log.flush();
      if (cfg.checkpoint_every > 0 && m.step % cfg.checkpoint_every == 0) {
        auto ck = state.to_checkpoint();
        ck.save(checkpoint_path(dir, m.step));
        ck.save(dir / "latest.ckpt");
      }
    }
    if (opts.on_step) opts.on_step(m);
    result.metrics.push_back(m);
  }
  if (opts.write_files) state.to_checkpoint().save(dir / "latest.ckpt");
  return result;
}

}  // namespace vaereg
