#pragma once

// Image grids, histogram charts, CSV tables and run manifests.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "vaereg/data.hpp"
#include "vaereg/errors.hpp"
#include "vaereg/tensor.hpp"

namespace vaereg {

// rows x cols tiles of (h, w, c) images in [-1, 1], row-major order, separated
// by a `pad` pixel white border.
inline cv::Mat tile_images(const std::vector<Tensor<float>>& tiles, std::size_t rows,
                           std::size_t cols, int pad = 2) {
  if (tiles.size() != rows * cols || tiles.empty())
    throw ArgumentError("tile_images: " + std::to_string(tiles.size()) + " tiles for a " +
                        std::to_string(rows) + "x" + std::to_string(cols) + " grid");
  Shape s = tiles.front().shape();
  if (s.size() == 4 && s[0] == 1) s.erase(s.begin());
  if (s.size() != 3) throw ArgumentError("tile_images: tiles must be (h, w, c)");
  const int h = static_cast<int>(s[0]), w = static_cast<int>(s[1]), c = static_cast<int>(s[2]);
  const int H = static_cast<int>(rows) * (h + pad) + pad;
  const int W = static_cast<int>(cols) * (w + pad) + pad;
  cv::Mat out(H, W, CV_8UC3, cv::Scalar(255, 255, 255));
  for (std::size_t k = 0; k < tiles.size(); ++k) {
    if (tiles[k].size() != static_cast<std::size_t>(h * w * c))
      throw ArgumentError("tile_images: tile " + std::to_string(k) + " has a different shape");
    const int y0 = pad + static_cast<int>(k / cols) * (h + pad);
    const int x0 = pad + static_cast<int>(k % cols) * (w + pad);
    const float* src = tiles[k].data();
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const float* p = src + (y * w + x) * c;
        auto& px = out.at<cv::Vec3b>(y0 + y, x0 + x);
        if (c == 1) {
          px = cv::Vec3b::all(unscale_pixel(p[0]));
        } else {
          px[0] = unscale_pixel(p[2]);  // OpenCV stores BGR
          px[1] = unscale_pixel(p[1]);
          px[2] = unscale_pixel(p[0]);
        }
      }
  }
  return out;
}

inline void write_png(const std::filesystem::path& path, const cv::Mat& img) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), img)) throw Error("cannot write image " + path.string());
}

// Joint counts (bins x bins) of two variables over [lo, hi]; values outside
// the range land in the edge bins.
struct Histogram2D {
  double lo = -3.0;
  double hi = 3.0;
  std::size_t bins = 30;
  std::vector<std::uint64_t> joint;     // row = bin of the first variable
  std::vector<std::uint64_t> first;     // marginal of the first variable
  std::vector<std::uint64_t> second;

  std::size_t bin_of(double v) const {
    const double t = (v - lo) / (hi - lo) * static_cast<double>(bins);
    if (!(t > 0.0)) return 0;  // also catches NaN
    return std::min(static_cast<std::size_t>(t), bins - 1);
  }

  double edge(std::size_t k) const {
    return lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(bins);
  }

  std::uint64_t at(std::size_t r, std::size_t c) const { return joint[r * bins + c]; }
};

inline Histogram2D histogram_2d(const std::vector<double>& a, const std::vector<double>& b,
                                double lo, double hi, std::size_t bins) {
  if (a.size() != b.size()) throw ArgumentError("histogram_2d: sample lists differ in length");
  if (bins == 0 || !(hi > lo)) throw ArgumentError("histogram_2d: need bins > 0 and hi > lo");
  Histogram2D h;
  h.lo = lo;
  h.hi = hi;
  h.bins = bins;
  h.joint.assign(bins * bins, 0);
  h.first.assign(bins, 0);
  h.second.assign(bins, 0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto r = h.bin_of(a[i]), c = h.bin_of(b[i]);
    ++h.joint[r * bins + c];
    ++h.first[r];
    ++h.second[c];
  }
  return h;
}

// Heat map of the joint counts with the two marginals as bar charts along the
// top (second variable) and left (first variable) edges.
inline cv::Mat render_histogram(const Histogram2D& h, const std::string& label_first,
                                const std::string& label_second) {
  const int cell = std::max(4, 360 / static_cast<int>(h.bins));
  const int n = static_cast<int>(h.bins);
  const int bar = 90, margin = 40;
  const int left = margin + bar, top = margin + bar;
  const int W = left + n * cell + margin, H = top + n * cell + margin;
  cv::Mat img(H, W, CV_8UC3, cv::Scalar(255, 255, 255));

  std::uint64_t jmax = 1, mmax = 1;
  for (auto v : h.joint) jmax = std::max(jmax, v);
  for (auto v : h.first) mmax = std::max(mmax, v);
  for (auto v : h.second) mmax = std::max(mmax, v);

  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) {
      const double t = static_cast<double>(h.at(r, c)) / static_cast<double>(jmax);
      const auto shade = static_cast<int>(255.0 * (1.0 - t));
      // first variable runs up the vertical axis
      const cv::Rect box(left + c * cell, top + (n - 1 - r) * cell, cell, cell);
      cv::rectangle(img, box, cv::Scalar(255, shade, shade), cv::FILLED);
    }
  cv::rectangle(img, cv::Rect(left, top, n * cell, n * cell), cv::Scalar(0, 0, 0), 1);

  const auto bar_len = [&](std::uint64_t v) {
    return static_cast<int>(static_cast<double>(v) / static_cast<double>(mmax) * (bar - 10));
  };
  for (int c = 0; c < n; ++c) {
    const int len = bar_len(h.second[c]);
    cv::rectangle(img, cv::Rect(left + c * cell, top - 5 - len, cell - 1, len),
                  cv::Scalar(80, 80, 80), cv::FILLED);
  }
  for (int r = 0; r < n; ++r) {
    const int len = bar_len(h.first[r]);
    cv::rectangle(img, cv::Rect(left - 5 - len, top + (n - 1 - r) * cell, len, cell - 1),
                  cv::Scalar(80, 80, 80), cv::FILLED);
  }

  const auto font = cv::FONT_HERSHEY_SIMPLEX;
  const auto black = cv::Scalar(0, 0, 0);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", h.lo);
  cv::putText(img, buf, {left - 10, top + n * cell + 18}, font, 0.4, black);
  std::snprintf(buf, sizeof buf, "%.1f", h.hi);
  cv::putText(img, buf, {left + n * cell - 16, top + n * cell + 18}, font, 0.4, black);
  cv::putText(img, label_second, {left + n * cell / 2 - 10, top + n * cell + 32}, font, 0.5, black);
  cv::putText(img, label_first, {4, top + n * cell / 2}, font, 0.5, black);
  return img;
}

inline void write_histogram_csv(const std::filesystem::path& dir, const Histogram2D& h) {
  std::filesystem::create_directories(dir);
  std::ofstream joint(dir / "joint_counts.csv");
  joint << "bin_first,bin_second,first_lo,first_hi,second_lo,second_hi,count\n";
  for (std::size_t r = 0; r < h.bins; ++r)
    for (std::size_t c = 0; c < h.bins; ++c)
      joint << r << ',' << c << ',' << h.edge(r) << ',' << h.edge(r + 1) << ',' << h.edge(c) << ','
            << h.edge(c + 1) << ',' << h.at(r, c) << '\n';
  std::ofstream marg(dir / "marginal_counts.csv");
  marg << "bin,lo,hi,count_first,count_second\n";
  for (std::size_t k = 0; k < h.bins; ++k)
    marg << k << ',' << h.edge(k) << ',' << h.edge(k + 1) << ',' << h.first[k] << ','
         << h.second[k] << '\n';
  if (!joint || !marg) throw Error("cannot write histogram tables in " + dir.string());
}

inline void write_manifest(const std::filesystem::path& dir, const std::string& command,
                           const nlohmann::json& parameters, const std::vector<std::string>& files,
                           const nlohmann::json& summary = nlohmann::json::object()) {
  std::filesystem::create_directories(dir);
  nlohmann::json m{{"command", command}, {"parameters", parameters}, {"files", files}};
  if (!summary.empty()) m["summary"] = summary;
  std::ofstream out(dir / "manifest.json");
  out << m.dump(2) << '\n';
  if (!out) throw Error("cannot write manifest in " + dir.string());
}

}  // namespace vaereg
