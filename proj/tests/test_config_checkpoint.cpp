#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include <unistd.h>

#include "vaereg/checkpoint.hpp"
#include "vaereg/config.hpp"

using namespace vaereg;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("vaereg_cfg_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  return dir / name;
}

fs::path repo_config(const std::string& name) { return fs::path(VAEREG_SOURCE_DIR) / "configs" / name; }

}  // namespace

TEST(Config, DefaultsAreFullScale) {
  const TrainConfig c = TrainConfig::from_json(json::object());
  EXPECT_EQ(c.mode, TrainMode::proposed);
  EXPECT_EQ(c.weights.beta1, 1.0);
  EXPECT_EQ(c.weights.beta2, 0.5);
  EXPECT_EQ(c.weights.beta3, 5000.0);
  EXPECT_EQ(c.weights.beta4, 100.0);
  EXPECT_EQ(c.batch_size, 20u);
  EXPECT_EQ(c.learning_rate, 1e-4);
  EXPECT_EQ(c.latent_dim, 512u);
  EXPECT_EQ(c.stages, 6u);
  EXPECT_EQ(c.identity_blocks, 2u);
  EXPECT_EQ(c.height, 256u);
  EXPECT_EQ(c.width, 256u);
  EXPECT_EQ(c.train_count, 24000u);
  EXPECT_EQ(c.test_count, 6000u);
}

TEST(Config, ShippedFilesLoad) {
  const auto full = TrainConfig::load(repo_config("full.json"));
  auto got = full.to_json(), want = TrainConfig{}.to_json();
  got.erase("out_dir");
  want.erase("out_dir");
  EXPECT_EQ(got, want);
  const auto desk = TrainConfig::load(repo_config("desk.json"));
  EXPECT_EQ(desk.height, 64u);
  EXPECT_EQ(desk.latent_dim, 64u);
  EXPECT_EQ(desk.stages, 4u);
  const auto smoke = TrainConfig::load(repo_config("smoke.json"));
  EXPECT_EQ(smoke.height, 32u);
  EXPECT_EQ(smoke.latent_dim, 16u);
  EXPECT_EQ(smoke.stages, 3u);
  EXPECT_EQ(smoke.batch_size, 8u);
}

TEST(Config, JsonRoundTrip) {
  TrainConfig c = TrainConfig::from_json(json{{"mode", "beta_vae"}, {"beta1", 7.5}, {"latent_dim", 32}});
  const auto back = TrainConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
}

TEST(Config, ModeSelectsWeightDefaults) {
  const auto s = TrainConfig::from_json(json{{"mode", "standard_vae"}});
  EXPECT_EQ(s.weights.beta1, 1.0);
  EXPECT_EQ(s.weights.beta2, 1.0);
  const auto b = TrainConfig::from_json(json{{"mode", "beta_vae"}});
  EXPECT_GT(b.weights.beta1, 1.0);
  const auto o = TrainConfig::from_json(json{{"mode", "standard_vae"}, {"beta1", 50.0}});
  EXPECT_EQ(o.weights.beta1, 50.0);
  EXPECT_EQ(o.weights.beta2, 1.0);
}

TEST(Config, RejectsUnknownKeysAndBadTypes) {
  EXPECT_THROW(TrainConfig::from_json(json{{"latent_dims", 8}}), ConfigError);
  EXPECT_THROW(TrainConfig::from_json(json{{"latent_dim", "eight"}}), ConfigError);
  EXPECT_THROW(TrainConfig::from_json(json{{"latent_dim", json::array({8})}}), ConfigError);
  EXPECT_THROW(TrainConfig::from_json(json::array()), ConfigError);
  EXPECT_THROW(TrainConfig::from_json(json{{"mode", "gan"}}), ConfigError);
  EXPECT_THROW(TrainConfig::from_json(json{{"stats_from", "both"}}), ConfigError);
}

TEST(Config, ValidationErrors) {
  const auto bad = [](json j) { EXPECT_THROW(TrainConfig::from_json(j), ConfigError) << j.dump(); };
  bad({{"batch_size", 1}});
  bad({{"learning_rate", 0.0}});
  bad({{"learning_rate", -1e-3}});
  bad({{"mode", "beta_vae"}, {"beta1", 1.0}});
  bad({{"beta2", -0.5}});
  bad({{"height", 96}});                  // 96 not divisible by 2^6
  bad({{"height", 36}, {"stages", 2}});   // divisible by 4 but not by 8
  bad({{"stages", 0}});
  bad({{"channels", 2}});
  bad({{"train_count", 10}});
  bad({{"variance_floor", 0.0}});
  bad({{"lr_schedule", "cosine"}});
  EXPECT_NO_THROW(TrainConfig::from_json(json{{"height", 96}, {"width", 64}, {"stages", 5}}));
}

TEST(Config, StepSchedule) {
  const auto c = TrainConfig::from_json(
      json{{"lr_schedule", "step"}, {"lr_decay_every", 10}, {"lr_decay_factor", 0.5}});
  EXPECT_EQ(c.learning_rate_at(0), 1e-4);
  EXPECT_EQ(c.learning_rate_at(9), 1e-4);
  EXPECT_EQ(c.learning_rate_at(10), 5e-5);
  EXPECT_EQ(c.learning_rate_at(25), 2.5e-5);
  EXPECT_EQ(TrainConfig{}.learning_rate_at(12345), 1e-4);
}

TEST(Config, FileErrors) {
  EXPECT_THROW(TrainConfig::load("/nonexistent/config.json"), ConfigError);
  const auto p = scratch("broken.json");
  std::ofstream(p) << "{ \"seed\": ";
  EXPECT_THROW(TrainConfig::load(p), ConfigError);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  Checkpoint ck;
  ck.meta = {{"step", 42}, {"note", "x"}};
  Tensor<float> a({2, 3});
  for (std::size_t k = 0; k < a.size(); ++k) a[k] = static_cast<float>(k) * 0.1f - 0.3f;
  a[4] = std::numeric_limits<float>::denorm_min();
  Tensor<float> b({1});
  b[0] = -0.0f;
  ck.add("a", a);
  ck.add("empty", Tensor<float>({0}));
  ck.add("b", b);
  const auto p = scratch("rt.ckpt");
  ck.save(p);
  EXPECT_FALSE(fs::exists(p.string() + ".tmp"));
  const auto back = Checkpoint::load(p);
  EXPECT_EQ(back.meta, ck.meta);
  ASSERT_EQ(back.arrays.size(), 3u);
  EXPECT_EQ(back.array("a").shape(), a.shape());
  EXPECT_EQ(std::memcmp(back.array("a").data(), a.data(), a.size() * sizeof(float)), 0);
  EXPECT_TRUE(std::signbit(back.array("b")[0]));
  EXPECT_EQ(back.array("empty").size(), 0u);
  EXPECT_TRUE(back.has("b"));
  EXPECT_THROW(back.array("missing"), CheckpointError);
}

TEST(Checkpoint, RejectsForeignAndFutureFiles) {
  const auto good = scratch("good.ckpt");
  Checkpoint ck;
  ck.add("w", Tensor<float>({4}));
  ck.save(good);
  std::string bytes;
  {
    std::ifstream in(good, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  const auto write = [](const fs::path& p, const std::string& s) {
    std::ofstream(p, std::ios::binary | std::ios::trunc) << s;
  };

  auto magic = bytes;
  magic[0] = 'X';
  write(scratch("magic.ckpt"), magic);
  EXPECT_THROW(Checkpoint::load(scratch("magic.ckpt")), CheckpointError);

  auto version = bytes;
  version[8] = 2;
  write(scratch("version.ckpt"), version);
  try {
    Checkpoint::load(scratch("version.ckpt"));
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("version 2"), std::string::npos);
  }

  write(scratch("short.ckpt"), bytes.substr(0, bytes.size() - 4));
  EXPECT_THROW(Checkpoint::load(scratch("short.ckpt")), CheckpointError);
  write(scratch("tiny.ckpt"), bytes.substr(0, 5));
  EXPECT_THROW(Checkpoint::load(scratch("tiny.ckpt")), CheckpointError);
  EXPECT_THROW(Checkpoint::load(scratch("absent.ckpt")), CheckpointError);
}
