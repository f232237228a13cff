#pragma once

// Training configuration: a flat JSON object. Every key is optional; defaults
// are the full-scale reference values (256x256 RGB, d=512, R=6, r=2, b=20, lr=1e-4,
// weights (1, 0.5, 5000, 100), split 24000/6000).
//
//   key                  type     default
//   mode                 string   "proposed" | "standard_vae" | "beta_vae"
//   height, width        int      256
//   channels             int      3
//   latent_dim           int      512
//   stages               int      6        downsampling residual stages (R)
//   identity_blocks      int      2        identity blocks per stage (r)
//   base_channels        int      64
//   channel_cap          int      512
//   disc_base_channels   int      64
//   batch_size           int      20
//   learning_rate        float    1e-4
//   adam_beta1/2, adam_eps float  0.9 / 0.999 / 1e-8
//   lr_schedule          string   "constant" | "step"
//   lr_decay_every       int      0        steps between decays ("step" only)
//   lr_decay_factor      float    1.0
//   beta1..beta4         float    mode dependent, see default_weights()
//   stats_from           string   "samples" | "means"
//   variance_floor       float    1e-8
//   max_steps            int      100000
//   seed                 int      0
//   data                 string   "synthetic" or an image directory
//   train_count          int      24000
//   test_count           int      6000
//   checkpoint_every     int      1000     0 disables periodic checkpoints
//   out_dir              string   "runs/vaereg"

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>

#include <json.hpp>

#include "vaereg/core_math.hpp"
#include "vaereg/data.hpp"
#include "vaereg/nets.hpp"
#include "vaereg/optim.hpp"

namespace vaereg {

enum class TrainMode { proposed, standard_vae, beta_vae };

inline std::string to_string(TrainMode m) {
  switch (m) {
    case TrainMode::proposed: return "proposed";
    case TrainMode::standard_vae: return "standard_vae";
    case TrainMode::beta_vae: return "beta_vae";
  }
  return "?";
}

inline TrainMode parse_mode(const std::string& s) {
  if (s == "proposed") return TrainMode::proposed;
  if (s == "standard_vae") return TrainMode::standard_vae;
  if (s == "beta_vae") return TrainMode::beta_vae;
  throw ConfigError("unknown mode '" + s + "' (expected proposed, standard_vae or beta_vae)");
}

inline std::string to_string(StatsSource s) { return s == StatsSource::samples ? "samples" : "means"; }

inline StatsSource parse_stats_source(const std::string& s) {
  if (s == "samples") return StatsSource::samples;
  if (s == "means") return StatsSource::means;
  throw ConfigError("unknown stats_from '" + s + "' (expected samples or means)");
}

// proposed: (1, 0.5, 5000, 100). Baselines use beta1 on the KL and beta2 on
// the L1 reconstruction; beta3/beta4 are unused there.
inline LossWeights default_weights(TrainMode mode) {
  switch (mode) {
    case TrainMode::proposed: return {1.0, 0.5, 5000.0, 100.0};
    case TrainMode::standard_vae: return {1.0, 1.0, 0.0, 0.0};
    case TrainMode::beta_vae: return {4.0, 1.0, 0.0, 0.0};
  }
  return {};
}

struct TrainConfig {
  TrainMode mode = TrainMode::proposed;
  std::size_t height = 256;
  std::size_t width = 256;
  std::size_t channels = 3;
  std::size_t latent_dim = 512;
  std::size_t stages = 6;
  std::size_t identity_blocks = 2;
  std::size_t base_channels = 64;
  std::size_t channel_cap = 512;
  std::size_t disc_base_channels = 64;
  std::size_t batch_size = 20;
  double learning_rate = 1e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::string lr_schedule = "constant";
  std::size_t lr_decay_every = 0;
  double lr_decay_factor = 1.0;
  LossWeights weights = default_weights(TrainMode::proposed);
  StatsSource stats_from = StatsSource::samples;
  double variance_floor = kDefaultVarianceFloor;
  std::size_t max_steps = 100000;
  std::uint64_t seed = 0;
  std::string data = kSyntheticSource;
  std::size_t train_count = 24000;
  std::size_t test_count = 6000;
  std::size_t checkpoint_every = 1000;
  std::string out_dir = "runs/vaereg";

  EncoderSpec encoder_spec() const {
    return {height, width, channels, latent_dim, stages, identity_blocks, base_channels, channel_cap};
  }

  DatasetSpec dataset_spec() const {
    return {data, height, width, channels, train_count, test_count, seed};
  }

  AdamOptions adam() const { return {learning_rate, adam_beta1, adam_beta2, adam_eps}; }

  double learning_rate_at(std::size_t step) const {
    if (lr_schedule == "step" && lr_decay_every > 0)
      return learning_rate * std::pow(lr_decay_factor, static_cast<double>(step / lr_decay_every));
    return learning_rate;
  }

  void validate() const {
    if (batch_size < 2)
      throw ConfigError("batch_size must be >= 2 (batch variance needs two samples), got " +
                        std::to_string(batch_size));
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
      throw ConfigError("learning_rate must be > 0");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0) ||
        !(adam_eps > 0.0))
      throw ConfigError("Adam coefficients out of range");
    if (lr_schedule != "constant" && lr_schedule != "step")
      throw ConfigError("lr_schedule must be constant or step");
    if (!(lr_decay_factor > 0.0)) throw ConfigError("lr_decay_factor must be > 0");
    weights.validate();
    if (mode == TrainMode::beta_vae && !(weights.beta1 > 1.0))
      throw ConfigError("beta_vae mode requires beta1 > 1, got " + std::to_string(weights.beta1));
    if (!(variance_floor > 0.0)) throw ConfigError("variance_floor must be > 0");
    try {
      encoder_spec().validate();
    } catch (const ArgumentError& e) {
      throw ConfigError(e.what());
    }
    if (height % 8 != 0 || width % 8 != 0)
      throw ConfigError("height and width must be divisible by 8 for the patch discriminator");
    if (disc_base_channels == 0) throw ConfigError("disc_base_channels must be positive");
    if (channels != 1 && channels != 3) throw ConfigError("channels must be 1 or 3");
    if (train_count < batch_size)
      throw ConfigError("train_count (" + std::to_string(train_count) +
                        ") smaller than batch_size (" + std::to_string(batch_size) + ")");
    if (data.empty()) throw ConfigError("data must be 'synthetic' or a directory");
  }

  nlohmann::json to_json() const {
    return {{"mode", to_string(mode)},
            {"height", height},
            {"width", width},
            {"channels", channels},
            {"latent_dim", latent_dim},
            {"stages", stages},
            {"identity_blocks", identity_blocks},
            {"base_channels", base_channels},
            {"channel_cap", channel_cap},
            {"disc_base_channels", disc_base_channels},
            {"batch_size", batch_size},
            {"learning_rate", learning_rate},
            {"adam_beta1", adam_beta1},
            {"adam_beta2", adam_beta2},
            {"adam_eps", adam_eps},
            {"lr_schedule", lr_schedule},
            {"lr_decay_every", lr_decay_every},
            {"lr_decay_factor", lr_decay_factor},
            {"beta1", weights.beta1},
            {"beta2", weights.beta2},
            {"beta3", weights.beta3},
            {"beta4", weights.beta4},
            {"stats_from", to_string(stats_from)},
            {"variance_floor", variance_floor},
            {"max_steps", max_steps},
            {"seed", seed},
            {"data", data},
            {"train_count", train_count},
            {"test_count", test_count},
            {"checkpoint_every", checkpoint_every},
            {"out_dir", out_dir}};
  }

  // Unknown keys are rejected. Weights not given default per mode.
  static TrainConfig from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("config must be a flat JSON object");
    static const std::set<std::string> known = [] {
      std::set<std::string> s;
      const auto defaults = TrainConfig{}.to_json();
      for (const auto& [k, v] : defaults.items()) s.insert(k);
      return s;
    }();
    for (const auto& [k, v] : j.items()) {
      if (!known.count(k)) throw ConfigError("unknown config key '" + k + "'");
      if (v.is_object() || v.is_array()) throw ConfigError("config key '" + k + "' must be a scalar");
    }
    TrainConfig c;
    try {
      if (j.contains("mode")) c.mode = parse_mode(j.at("mode").get<std::string>());
      c.weights = default_weights(c.mode);
      auto get = [&j](const char* key, auto& field) {
        if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
      };
      get("height", c.height);
      get("width", c.width);
      get("channels", c.channels);
      get("latent_dim", c.latent_dim);
      get("stages", c.stages);
      get("identity_blocks", c.identity_blocks);
      get("base_channels", c.base_channels);
      get("channel_cap", c.channel_cap);
      get("disc_base_channels", c.disc_base_channels);
      get("batch_size", c.batch_size);
      get("learning_rate", c.learning_rate);
      get("adam_beta1", c.adam_beta1);
      get("adam_beta2", c.adam_beta2);
      get("adam_eps", c.adam_eps);
      get("lr_schedule", c.lr_schedule);
      get("lr_decay_every", c.lr_decay_every);
      get("lr_decay_factor", c.lr_decay_factor);
      get("beta1", c.weights.beta1);
      get("beta2", c.weights.beta2);
      get("beta3", c.weights.beta3);
      get("beta4", c.weights.beta4);
      if (j.contains("stats_from")) c.stats_from = parse_stats_source(j.at("stats_from").get<std::string>());
      get("variance_floor", c.variance_floor);
      get("max_steps", c.max_steps);
      get("seed", c.seed);
      get("data", c.data);
      get("train_count", c.train_count);
      get("test_count", c.test_count);
      get("checkpoint_every", c.checkpoint_every);
      get("out_dir", c.out_dir);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("config type error: ") + e.what());
    }
    c.validate();
    return c;
  }

  static TrainConfig load(const std::filesystem::path& path) {
    return from_json(read_json(path));
  }

  static nlohmann::json read_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    try {
      return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
    }
  }
};

}  // namespace vaereg
