#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "vaereg/nn/layers.hpp"

namespace vaereg {

struct AdamOptions {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam over a fixed, ordered parameter list. Moments are stored per parameter
// in the same order so they can be checkpointed by name.
template <typename T>
class Adam {
 public:
  Adam(const nn::ParameterRefs<T>& params, AdamOptions opts) : opts_(opts) {
    for (const auto* p : params) {
      first_.emplace_back(p->value.shape());
      second_.emplace_back(p->value.shape());
    }
  }

  // Applies one update with the given learning rate (schedules are resolved by the caller).
  void step(const nn::ParameterRefs<T>& params, double learning_rate) {
    if (params.size() != first_.size())
      throw ArgumentError("Adam: parameter list changed size");
    ++steps_;
    const double c1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(steps_));
    const T b1 = static_cast<T>(opts_.beta1), b2 = static_cast<T>(opts_.beta2);
    const T step = static_cast<T>(learning_rate / c1);
    const T inv_c2 = static_cast<T>(1.0 / c2);
    const T eps = static_cast<T>(opts_.eps);
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto& p = *params[k];
      auto& m = first_[k];
      auto& v = second_[k];
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        const T g = p.grad[i];
        m[i] = b1 * m[i] + (T{1} - b1) * g;
        v[i] = b2 * v[i] + (T{1} - b2) * g * g;
        p.value[i] -= step * m[i] / (std::sqrt(v[i] * inv_c2) + eps);
      }
    }
  }

  const AdamOptions& options() const { return opts_; }
  std::uint64_t steps() const { return steps_; }
  void set_steps(std::uint64_t s) { steps_ = s; }
  std::vector<Tensor<T>>& first_moments() { return first_; }
  std::vector<Tensor<T>>& second_moments() { return second_; }
  const std::vector<Tensor<T>>& first_moments() const { return first_; }
  const std::vector<Tensor<T>>& second_moments() const { return second_; }

 private:
  AdamOptions opts_;
  std::uint64_t steps_ = 0;
  std::vector<Tensor<T>> first_;
  std::vector<Tensor<T>> second_;
};

}  // namespace vaereg
