#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "vaereg/core_math.hpp"

namespace vaereg {

// Independent streams derived from one master seed.
enum class StreamId : std::uint64_t {
  init = 1,
  sampler = 2,
  shuffle = 3,
  experiment = 4,
  synthetic = 5,
};

// Explicitly seeded generator with a serializable state (engine plus the
// normal distribution's cached draw), so training can be resumed bit-exactly.
class RngStream {
 public:
  explicit RngStream(std::uint64_t master_seed, StreamId stream = StreamId::sampler,
                     std::uint64_t sub = 0) {
    std::seed_seq seq{static_cast<std::uint32_t>(master_seed),
                      static_cast<std::uint32_t>(master_seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(sub),
                      static_cast<std::uint32_t>(sub >> 32)};
    engine_.seed(seq);
  }

  double normal() { return normal_(engine_); }
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  std::mt19937_64& engine() noexcept { return engine_; }

  std::string state() const {
    std::ostringstream os;
    os << engine_ << ' ' << normal_;
    return os.str();
  }

  void restore(const std::string& s) {
    std::istringstream is(s);
    is >> engine_ >> normal_;
    if (!is) throw ArgumentError("RngStream: malformed state string");
  }

  friend bool operator==(const RngStream& a, const RngStream& b) {
    return a.engine_ == b.engine_ && a.normal_ == b.normal_;
  }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

template <typename T>
struct LatentBatch {
  Matrix<T> z;
  Matrix<T> eps;
  PosteriorParams<T> source;
  std::string seed_state;  // generator state before the draw
};

// z = mu + eps * sigma, eps ~ N(0, I) drawn row-major.
template <typename T>
LatentBatch<T> sample(const PosteriorParams<T>& params, RngStream& rng) {
  params.validate();
  LatentBatch<T> out;
  out.seed_state = rng.state();
  out.source = params;
  const auto rows = params.mu.rows();
  const auto cols = params.mu.cols();
  out.eps.resize(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) out.eps(i, j) = static_cast<T>(rng.normal());
  out.z = params.mu + out.eps.cwiseProduct(params.stddev());
  return out;
}

// K independent draws from the same posterior.
template <typename T>
std::vector<LatentBatch<T>> sample_k(const PosteriorParams<T>& params, RngStream& rng,
                                     std::size_t k) {
  std::vector<LatentBatch<T>> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) out.push_back(sample(params, rng));
  return out;
}

// Pulls d_z back onto (mu, log_var) with eps held fixed; accumulates.
template <typename T>
void sample_backward(const LatentBatch<T>& batch, const Matrix<T>& d_z, Matrix<T>& d_mu,
                     Matrix<T>& d_log_var) {
  if (d_z.rows() != batch.z.rows() || d_z.cols() != batch.z.cols())
    throw ArgumentError("sample_backward: gradient shape differs from z");
  const Matrix<T> sigma = batch.source.stddev();
  d_mu += d_z;
  for (Eigen::Index i = 0; i < d_z.rows(); ++i)
    for (Eigen::Index j = 0; j < d_z.cols(); ++j)
      d_log_var(i, j) += d_z(i, j) * batch.eps(i, j) * sigma(i, j) / T{2} *
                         clamp_log_var_grad(batch.source.log_var(i, j));
}

}  // namespace vaereg
