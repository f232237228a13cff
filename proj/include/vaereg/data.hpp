#pragma once

// Dataset ingestion: alphanumeric file ordering, deterministic train/test split,
// antialiased bilinear resizing to [-1, 1] floats, and a procedural two-factor
// blob dataset whose generating factors are kept as ground truth.

#include <opencv2/imgcodecs.hpp>

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "vaereg/errors.hpp"
#include "vaereg/sampler.hpp"
#include "vaereg/tensor.hpp"

namespace vaereg {

inline constexpr const char* kSyntheticSource = "synthetic";

struct DatasetSpec {
  std::string source = kSyntheticSource;  // image directory or "synthetic"
  std::size_t height = 256;
  std::size_t width = 256;
  std::size_t channels = 3;
  std::size_t train_count = 24000;
  std::size_t test_count = 6000;
  std::uint64_t seed = 0;  // synthetic mode only

  bool synthetic() const { return source == kSyntheticSource; }
  friend bool operator==(const DatasetSpec&, const DatasetSpec&) = default;
};

// Generating factors of one synthetic image, all in [0, 1).
struct BlobFactors {
  double x = 0.0;
  double y = 0.0;
  double hue = 0.0;
};

inline float scale_pixel(std::uint8_t v) { return static_cast<float>(v) / 127.5f - 1.0f; }

inline std::uint8_t unscale_pixel(float v) {
  const float s = std::round((v + 1.0f) * 127.5f);
  return static_cast<std::uint8_t>(std::clamp(s, 0.0f, 255.0f));
}

// HSV(h, 1, 1) -> RGB in [0, 1]
inline std::array<double, 3> hue_to_rgb(double hue) {
  const double h = 6.0 * (hue - std::floor(hue));
  const auto channel = [h](double n) {
    const double k = std::fmod(n + h, 6.0);
    return 1.0 - std::max(0.0, std::min({k, 4.0 - k, 1.0}));
  };
  return {channel(5.0), channel(3.0), channel(1.0)};
}

// A Gaussian blob on a black background. Position and hue are the factors.
inline Tensor<float> render_blob(const BlobFactors& f, std::size_t height, std::size_t width,
                                 std::size_t channels) {
  Tensor<float> img({height, width, channels});
  const double cx = (0.2 + 0.6 * f.x) * static_cast<double>(width);
  const double cy = (0.2 + 0.6 * f.y) * static_cast<double>(height);
  const double radius = static_cast<double>(std::min(height, width)) / 8.0;
  const auto rgb = hue_to_rgb(f.hue);
  for (std::size_t r = 0; r < height; ++r)
    for (std::size_t c = 0; c < width; ++c) {
      const double dx = static_cast<double>(c) + 0.5 - cx;
      const double dy = static_cast<double>(r) + 0.5 - cy;
      const double a = std::exp(-(dx * dx + dy * dy) / (2.0 * radius * radius));
      for (std::size_t k = 0; k < channels; ++k) {
        const double colour = channels == 3 ? rgb[k] : 1.0;
        img[(r * width + c) * channels + k] = static_cast<float>(2.0 * a * colour - 1.0);
      }
    }
  return img;
}

inline BlobFactors synthetic_factors(std::uint64_t seed, std::size_t index) {
  RngStream rng(seed, StreamId::synthetic, index);
  BlobFactors f;
  f.x = rng.uniform(0.0, 1.0);
  f.y = rng.uniform(0.0, 1.0);
  f.hue = rng.uniform(0.0, 1.0);
  return f;
}

namespace detail {

// Separable triangle-filter resampling; the filter support widens with the
// downscale factor, which antialiases (identical to bilinear when upscaling).
struct ResampleWeights {
  std::vector<std::size_t> first;
  std::vector<std::vector<double>> weights;
};

inline ResampleWeights resample_weights(std::size_t in, std::size_t out) {
  ResampleWeights rw;
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  const double support = std::max(1.0, scale);
  for (std::size_t o = 0; o < out; ++o) {
    const double centre = (static_cast<double>(o) + 0.5) * scale;
    const long lo = std::max(0L, static_cast<long>(std::floor(centre - support)));
    const long hi = std::min(static_cast<long>(in), static_cast<long>(std::ceil(centre + support)));
    std::vector<double> w;
    double total = 0.0;
    for (long i = lo; i < hi; ++i) {
      const double t = (static_cast<double>(i) + 0.5 - centre) / support;
      const double v = std::max(0.0, 1.0 - std::abs(t));
      w.push_back(v);
      total += v;
    }
    if (total <= 0.0) {
      w.assign(w.size(), 0.0);
      w[static_cast<std::size_t>(std::clamp<long>(static_cast<long>(centre) - lo, 0, hi - lo - 1))] = 1.0;
      total = 1.0;
    }
    for (auto& v : w) v /= total;
    rw.first.push_back(static_cast<std::size_t>(lo));
    rw.weights.push_back(std::move(w));
  }
  return rw;
}

}  // namespace detail

// (h, w, c) -> (out_h, out_w, c)
inline Tensor<float> resize_bilinear_aa(const Tensor<float>& img, std::size_t out_h,
                                        std::size_t out_w) {
  const std::size_t h = img.dim(0), w = img.dim(1), c = img.dim(2);
  if (h == out_h && w == out_w) return img;
  const auto wx = detail::resample_weights(w, out_w);
  const auto wy = detail::resample_weights(h, out_h);
  std::vector<double> tmp(h * out_w * c, 0.0);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t o = 0; o < out_w; ++o)
      for (std::size_t k = 0; k < wx.weights[o].size(); ++k) {
        const double wt = wx.weights[o][k];
        const std::size_t src = wx.first[o] + k;
        for (std::size_t ch = 0; ch < c; ++ch)
          tmp[(r * out_w + o) * c + ch] += wt * img[(r * w + src) * c + ch];
      }
  Tensor<float> out({out_h, out_w, c});
  for (std::size_t o = 0; o < out_h; ++o)
    for (std::size_t col = 0; col < out_w; ++col)
      for (std::size_t ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (std::size_t k = 0; k < wy.weights[o].size(); ++k)
          acc += wy.weights[o][k] * tmp[((wy.first[o] + k) * out_w + col) * c + ch];
        out[(o * out_w + col) * c + ch] = static_cast<float>(acc);
      }
  return out;
}

// Decodes an image file into (h, w, channels) floats in [-1, 1], RGB order.
inline std::optional<Tensor<float>> read_image(const std::filesystem::path& path,
                                               std::size_t channels) {
  const int flag = channels == 1 ? cv::IMREAD_GRAYSCALE : cv::IMREAD_COLOR;
  const cv::Mat m = cv::imread(path.string(), flag);
  if (m.empty() || m.depth() != CV_8U) return std::nullopt;
  const std::size_t h = static_cast<std::size_t>(m.rows), w = static_cast<std::size_t>(m.cols);
  const std::size_t c = static_cast<std::size_t>(m.channels());
  if (c != channels) return std::nullopt;
  Tensor<float> img({h, w, c});
  for (std::size_t r = 0; r < h; ++r) {
    const std::uint8_t* row = m.ptr<std::uint8_t>(static_cast<int>(r));
    for (std::size_t col = 0; col < w; ++col)
      for (std::size_t k = 0; k < c; ++k) {
        const std::size_t src = c == 3 ? 2 - k : k;  // BGR -> RGB
        img[(r * w + col) * c + k] = scale_pixel(row[col * c + src]);
      }
  }
  return img;
}

inline bool has_image_extension(const std::filesystem::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp" || ext == ".ppm" ||
         ext == ".pgm" || ext == ".tif" || ext == ".tiff" || ext == ".webp";
}

// Image files of a directory in byte-wise lexicographic filename order.
inline std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir) {
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec))
    throw DataError("dataset directory does not exist: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && has_image_extension(e.path())) files.push_back(e.path());
  std::sort(files.begin(), files.end(),
            [](const auto& a, const auto& b) { return a.filename().string() < b.filename().string(); });
  return files;
}

// Read-only image collection. Items are either held in memory or decoded on
// demand from their files.
class ImageSet {
 public:
  ImageSet() = default;

  static ImageSet in_memory(std::vector<Tensor<float>> images, std::vector<BlobFactors> factors = {}) {
    ImageSet s;
    s.images_ = std::move(images);
    s.factors_ = std::move(factors);
    return s;
  }

  static ImageSet from_files(std::vector<std::filesystem::path> files, std::size_t h, std::size_t w,
                             std::size_t c) {
    ImageSet s;
    s.files_ = std::move(files);
    s.h_ = h;
    s.w_ = w;
    s.c_ = c;
    return s;
  }

  std::size_t size() const { return files_.empty() ? images_.size() : files_.size(); }

  Tensor<float> get(std::size_t i) const {
    if (i >= size())
      throw ArgumentError("image index " + std::to_string(i) + " out of range (size " +
                          std::to_string(size()) + ")");
    if (files_.empty()) return images_[i];
    auto img = read_image(files_[i], c_);
    if (!img) throw DataError("cannot decode image " + files_[i].string());
    return resize_bilinear_aa(*img, h_, w_);
  }

  // (n, h, w, c) batch of the given indices, in order.
  Tensor<float> batch(std::span<const std::size_t> indices) const {
    std::vector<Tensor<float>> items;
    items.reserve(indices.size());
    for (std::size_t i : indices) items.push_back(get(i));
    return stack<float>(items);
  }

  const std::vector<BlobFactors>& factors() const { return factors_; }
  const std::vector<std::filesystem::path>& files() const { return files_; }

 private:
  std::vector<Tensor<float>> images_;
  std::vector<BlobFactors> factors_;
  std::vector<std::filesystem::path> files_;
  std::size_t h_ = 0, w_ = 0, c_ = 0;
};

struct DatasetSplit {
  ImageSet train;
  ImageSet test;
};

inline ImageSet synthetic_images(const DatasetSpec& spec, std::size_t first, std::size_t count) {
  std::vector<Tensor<float>> images;
  std::vector<BlobFactors> factors;
  images.reserve(count);
  factors.reserve(count);
  for (std::size_t i = first; i < first + count; ++i) {
    factors.push_back(synthetic_factors(spec.seed, i));
    images.push_back(render_blob(factors.back(), spec.height, spec.width, spec.channels));
  }
  return ImageSet::in_memory(std::move(images), std::move(factors));
}

// First train_count files (alphanumeric order) train, the next test_count test.
inline DatasetSplit load_split(const DatasetSpec& spec) {
  if (spec.height == 0 || spec.width == 0 || (spec.channels != 1 && spec.channels != 3))
    throw DataError("dataset resolution/channels invalid");
  if (spec.synthetic())
    return {synthetic_images(spec, 0, spec.train_count),
            synthetic_images(spec, spec.train_count, spec.test_count)};

  auto files = list_images(spec.source);
  const std::size_t needed = spec.train_count + spec.test_count;
  if (files.size() < needed)
    throw DataError("dataset " + spec.source + " has " + std::to_string(files.size()) +
                    " image files but the split needs " + std::to_string(needed) + " (" +
                    std::to_string(spec.train_count) + " train + " +
                    std::to_string(spec.test_count) + " test)");
  files.resize(needed);
  std::vector<std::string> bad;
  for (const auto& f : files)
    if (!read_image(f, spec.channels)) bad.push_back(f.string());
  if (!bad.empty()) {
    std::string msg = std::to_string(bad.size()) + " unreadable image file(s):";
    for (const auto& b : bad) msg += "\n  " + b;
    throw DataError(msg);
  }
  std::vector<std::filesystem::path> train(files.begin(), files.begin() + spec.train_count);
  std::vector<std::filesystem::path> test(files.begin() + spec.train_count, files.end());
  return {ImageSet::from_files(std::move(train), spec.height, spec.width, spec.channels),
          ImageSet::from_files(std::move(test), spec.height, spec.width, spec.channels)};
}

}  // namespace vaereg
