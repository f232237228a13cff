#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include <unistd.h>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "vaereg/data.hpp"

using namespace vaereg;
namespace fs = std::filesystem;

namespace {

// Fresh scratch directory per test, removed on destruction.
struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("vaereg_data_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

void write_solid(const fs::path& p, int h, int w, cv::Scalar bgr) {
  cv::Mat m(h, w, CV_8UC3, bgr);
  ASSERT_TRUE(cv::imwrite(p.string(), m));
}

DatasetSpec dir_spec(const fs::path& dir, std::size_t train, std::size_t test) {
  DatasetSpec s;
  s.source = dir.string();
  s.height = 8;
  s.width = 8;
  s.train_count = train;
  s.test_count = test;
  return s;
}

}  // namespace

TEST(Pixels, ScaleRoundTripWithinQuantization) {
  for (int v = 0; v < 256; ++v) {
    const auto u = static_cast<std::uint8_t>(v);
    EXPECT_EQ(unscale_pixel(scale_pixel(u)), u);
    EXPECT_GE(scale_pixel(u), -1.0f);
    EXPECT_LE(scale_pixel(u), 1.0f);
  }
  std::mt19937_64 rng(0);
  std::uniform_real_distribution<float> x(-1.f, 1.f);
  for (int k = 0; k < 10000; ++k) {
    const float f = x(rng);
    EXPECT_LE(std::abs(scale_pixel(unscale_pixel(f)) - f), 1.0f / 255.0f + 1e-6f);
  }
  EXPECT_EQ(unscale_pixel(5.0f), 255);
  EXPECT_EQ(unscale_pixel(-5.0f), 0);
}

TEST(Split, DirectoryOrderIsLexicographicAndDisjoint) {
  TempDir dir("order");
  // names chosen so numeric and lexicographic order differ
  const std::vector<std::string> names{"10.png", "2.png", "1.png", "b.png", "a.jpg", "notes.txt"};
  for (std::size_t k = 0; k < names.size(); ++k) {
    if (names[k].ends_with(".txt")) {
      std::ofstream(dir.path / names[k]) << "not an image";
      continue;
    }
    write_solid(dir.path / names[k], 8, 8, cv::Scalar(10.0 * static_cast<double>(k), 0, 0));
  }
  const auto split = load_split(dir_spec(dir.path, 3, 2));
  std::vector<std::string> train, test;
  for (const auto& f : split.train.files()) train.push_back(f.filename().string());
  for (const auto& f : split.test.files()) test.push_back(f.filename().string());
  EXPECT_EQ(train, (std::vector<std::string>{"1.png", "10.png", "2.png"}));
  EXPECT_EQ(test, (std::vector<std::string>{"a.jpg", "b.png"}));

  const auto again = load_split(dir_spec(dir.path, 3, 2));
  EXPECT_EQ(again.train.files(), split.train.files());
  EXPECT_EQ(again.test.files(), split.test.files());
}

TEST(Split, SurplusFilesAreIgnored) {
  TempDir dir("surplus");
  for (int k = 0; k < 7; ++k) write_solid(dir.path / ("img" + std::to_string(k) + ".png"), 8, 8, cv::Scalar(0, 0, 0));
  const auto split = load_split(dir_spec(dir.path, 3, 2));
  EXPECT_EQ(split.train.size(), 3u);
  EXPECT_EQ(split.test.size(), 2u);
  std::set<fs::path> all(split.train.files().begin(), split.train.files().end());
  for (const auto& f : split.test.files()) EXPECT_TRUE(all.insert(f).second);
}

TEST(Split, CountErrorNamesBothNumbers) {
  TempDir dir("count");
  for (int k = 0; k < 3; ++k) write_solid(dir.path / ("i" + std::to_string(k) + ".png"), 8, 8, cv::Scalar(0, 0, 0));
  try {
    load_split(dir_spec(dir.path, 3, 2));
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("has 3"), std::string::npos) << msg;
    EXPECT_NE(msg.find("needs 5"), std::string::npos) << msg;
  }
}

TEST(Split, UnreadableFilesAreListed) {
  TempDir dir("corrupt");
  for (int k = 0; k < 3; ++k) write_solid(dir.path / ("i" + std::to_string(k) + ".png"), 8, 8, cv::Scalar(0, 0, 0));
  std::ofstream(dir.path / "i3.png") << "garbage";
  std::ofstream(dir.path / "i4.jpg") << "more garbage";
  try {
    load_split(dir_spec(dir.path, 3, 2));
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("2 unreadable"), std::string::npos) << msg;
    EXPECT_NE(msg.find("i3.png"), std::string::npos);
    EXPECT_NE(msg.find("i4.jpg"), std::string::npos);
    EXPECT_EQ(msg.find("i0.png"), std::string::npos);
  }
}

TEST(Split, MissingDirectory) {
  EXPECT_THROW(load_split(dir_spec("/nonexistent/vaereg/dir", 1, 1)), DataError);
}

TEST(Split, DecodesRgbAndResizes) {
  TempDir dir("decode");
  // BGR (0, 128, 255) on disk is RGB (255, 128, 0)
  write_solid(dir.path / "a.png", 16, 24, cv::Scalar(0, 128, 255));
  write_solid(dir.path / "b.png", 8, 8, cv::Scalar(0, 0, 0));
  const auto split = load_split(dir_spec(dir.path, 1, 1));
  const auto img = split.train.get(0);
  EXPECT_EQ(img.shape(), (Shape{8, 8, 3}));
  for (std::size_t p = 0; p < 64; ++p) {
    EXPECT_FLOAT_EQ(img[p * 3 + 0], 1.0f);
    EXPECT_FLOAT_EQ(img[p * 3 + 1], scale_pixel(128));
    EXPECT_FLOAT_EQ(img[p * 3 + 2], -1.0f);
  }
  EXPECT_EQ(split.train.batch(std::vector<std::size_t>{0, 0}).shape(), (Shape{2, 8, 8, 3}));
  EXPECT_THROW(split.test.get(1), ArgumentError);
}

TEST(Resize, UpscaleMatchesOpenCvBilinear) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<float> u(-1.f, 1.f);
  Tensor<float> img({12, 10, 3});
  for (auto& v : img.values()) v = u(rng);
  const auto ours = resize_bilinear_aa(img, 24, 30);
  cv::Mat src(12, 10, CV_32FC3, img.data()), dst;
  cv::resize(src, dst, cv::Size(30, 24), 0, 0, cv::INTER_LINEAR);
  const auto* ref = dst.ptr<float>(0);
  for (std::size_t k = 0; k < ours.size(); ++k) EXPECT_NEAR(ours[k], ref[k], 1e-5f) << k;
}

TEST(Resize, HalvingUsesWidenedTriangle) {
  // 1-D row of 8 values halved: interior outputs weigh (1, 3, 3, 1) / 8.
  Tensor<float> img({1, 8, 1});
  for (std::size_t k = 0; k < 8; ++k) img[k] = static_cast<float>(k * k);
  const auto out = resize_bilinear_aa(img, 1, 4);
  const auto sq = [](double v) { return v * v; };
  EXPECT_NEAR(out[1], (sq(1) + 3 * sq(2) + 3 * sq(3) + sq(4)) / 8.0, 1e-5);
  EXPECT_NEAR(out[2], (sq(3) + 3 * sq(4) + 3 * sq(5) + sq(6)) / 8.0, 1e-5);
  // left edge renormalizes over the in-bounds taps (3, 3, 1)
  EXPECT_NEAR(out[0], (3 * sq(0) + 3 * sq(1) + sq(2)) / 7.0, 1e-5);
}

TEST(Resize, ConstantImageStaysConstant) {
  Tensor<float> img({37, 53, 3});
  for (auto& v : img.values()) v = 0.25f;
  for (auto [h, w] : {std::pair<std::size_t, std::size_t>{8, 8}, {64, 100}, {37, 7}}) {
    const auto out = resize_bilinear_aa(img, h, w);
    for (float v : out.values()) EXPECT_NEAR(v, 0.25f, 1e-6f);
  }
}

TEST(Synthetic, ReproducibleDisjointAndFactorized) {
  DatasetSpec spec;
  spec.height = 32;
  spec.width = 32;
  spec.train_count = 40;
  spec.test_count = 10;
  spec.seed = 17;
  const auto a = load_split(spec), b = load_split(spec);
  ASSERT_EQ(a.train.size(), 40u);
  ASSERT_EQ(a.test.size(), 10u);
  for (std::size_t i = 0; i < 40; ++i) EXPECT_EQ(a.train.get(i).values(), b.train.get(i).values());
  // test item k is generator index train_count + k
  EXPECT_EQ(a.test.factors()[0].x, synthetic_factors(17, 40).x);
  EXPECT_EQ(a.test.factors()[0].hue, synthetic_factors(17, 40).hue);

  for (std::size_t i = 0; i < 40; ++i) {
    const auto& f = a.train.factors()[i];
    EXPECT_GE(f.x, 0.0);
    EXPECT_LT(f.x, 1.0);
    // the brightest pixel sits at the recorded position, in the recorded hue
    const auto img = a.train.get(i);
    std::size_t best = 0;
    float best_v = -2.f;
    for (std::size_t p = 0; p < 32 * 32; ++p) {
      const float v = img[p * 3] + img[p * 3 + 1] + img[p * 3 + 2];
      if (v > best_v) {
        best_v = v;
        best = p;
      }
    }
    const double cx = (0.2 + 0.6 * f.x) * 32.0, cy = (0.2 + 0.6 * f.y) * 32.0;
    EXPECT_LE(std::abs(static_cast<double>(best % 32) + 0.5 - cx), 0.5 + 1e-9);
    EXPECT_LE(std::abs(static_cast<double>(best / 32) + 0.5 - cy), 0.5 + 1e-9);
    const auto rgb = hue_to_rgb(f.hue);
    const int dominant = static_cast<int>(std::max_element(rgb.begin(), rgb.end()) - rgb.begin());
    const float* px = &img[best * 3];
    EXPECT_EQ(static_cast<int>(std::max_element(px, px + 3) - px), dominant);
  }
  spec.seed = 18;
  EXPECT_NE(load_split(spec).train.get(0).values(), a.train.get(0).values());
}

TEST(Synthetic, HueWheelCorners) {
  const auto red = hue_to_rgb(0.0), green = hue_to_rgb(1.0 / 3.0), blue = hue_to_rgb(2.0 / 3.0);
  EXPECT_EQ(red, (std::array<double, 3>{1, 0, 0}));
  EXPECT_NEAR(green[1], 1.0, 1e-12);
  EXPECT_NEAR(green[0], 0.0, 1e-12);
  EXPECT_NEAR(blue[2], 1.0, 1e-12);
  EXPECT_NEAR(blue[1], 0.0, 1e-12);
}

TEST(Synthetic, InvalidSpecRejected) {
  DatasetSpec spec;
  spec.channels = 2;
  EXPECT_THROW(load_split(spec), DataError);
}
